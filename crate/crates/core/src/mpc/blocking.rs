use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::MpcError;
use crate::scalar::Scalar;

/// Lengths of the input-holding blocks; they sum to the horizon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockingSpec {
    pub block_lengths: Vec<usize>,
}

impl BlockingSpec {
    pub fn new(block_lengths: Vec<usize>) -> Result<Self, MpcError> {
        if block_lengths.is_empty() || block_lengths.contains(&0) {
            return Err(MpcError::InvalidArgument("block lengths must be positive".into()));
        }
        Ok(Self { block_lengths })
    }

    /// One block per stage.
    pub fn none(horizon: usize) -> Self {
        Self { block_lengths: vec![1; horizon] }
    }

    /// Blocks of `len` stages, the last one absorbing the remainder.
    pub fn uniform(horizon: usize, len: usize) -> Result<Self, MpcError> {
        if len == 0 || horizon == 0 {
            return Err(MpcError::InvalidArgument("block length and horizon must be positive".into()));
        }
        let mut blocks = vec![len; horizon / len];
        let rem = horizon % len;
        if rem > 0 {
            blocks.push(rem);
        }
        Ok(Self { block_lengths: blocks })
    }

    pub fn horizon(&self) -> usize {
        self.block_lengths.iter().sum()
    }

    pub fn blocks(&self) -> usize {
        self.block_lengths.len()
    }
}

/// `U = T Ū`, holding each input constant within its block.
pub fn build_blocking<T: Scalar>(spec: &BlockingSpec, nu: usize) -> DMatrix<T> {
    let horizon = spec.horizon();
    let mut t = DMatrix::zeros(horizon * nu, spec.blocks() * nu);
    let mut stage = 0;
    for (blk, &len) in spec.block_lengths.iter().enumerate() {
        for _ in 0..len {
            for j in 0..nu {
                t[(stage * nu + j, blk * nu + j)] = T::one();
            }
            stage += 1;
        }
    }
    t
}
