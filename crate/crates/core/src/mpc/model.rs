use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::MpcError;
use crate::scalar::{lit, Scalar};

/// `x⁺ = A x + B u`, `y = C x`, sampled every `ts` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct DiscreteModel<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub ts: T,
}

impl<T: Scalar> DiscreteModel<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>, ts: T) -> Result<Self, MpcError> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(MpcError::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(MpcError::Dimension(format!("B has {} rows, A has {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(MpcError::Dimension(format!("C has {} columns, A has {n}", c.ncols())));
        }
        if !(ts > T::zero()) {
            return Err(MpcError::InvalidArgument("sample time must be positive".into()));
        }
        Ok(Self { a, b, c, ts })
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    pub fn ny(&self) -> usize {
        self.c.nrows()
    }
}

/// Matrix exponential by scaling and squaring of the Taylor series.
pub fn expm<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    assert!(m.is_square(), "expm needs a square matrix");
    let n = m.nrows();
    let norm1 = (0..n)
        .map(|j| m.column(j).iter().fold(T::zero(), |acc, v| acc + v.abs()))
        .fold(T::zero(), |a, b| a.max(b));
    let mut squarings = 0u32;
    let mut scaled_norm = norm1;
    while scaled_norm > lit(0.5) {
        scaled_norm *= lit(0.5);
        squarings += 1;
    }
    let scaled = m / lit::<T>(2f64.powi(squarings as i32));
    let mut result = DMatrix::<T>::identity(n, n);
    let mut term = DMatrix::<T>::identity(n, n);
    for k in 1..64 {
        term = &term * &scaled / lit::<T>(k as f64);
        result += &term;
        if term.amax() <= T::default_epsilon() * result.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Exact zero-order-hold discretization via the augmented exponential
/// `exp([[Ac, Bc], [0, 0]] ts) = [[A, B], [0, I]]`.
pub fn discretize_zoh<T: Scalar>(
    ac: &DMatrix<T>,
    bc: &DMatrix<T>,
    c: &DMatrix<T>,
    ts: T,
) -> Result<DiscreteModel<T>, MpcError> {
    let n = ac.nrows();
    let nu = bc.ncols();
    if !ac.is_square() || bc.nrows() != n {
        return Err(MpcError::Dimension("continuous A/B shapes disagree".into()));
    }
    if !(ts > T::zero()) {
        return Err(MpcError::InvalidArgument("sample time must be positive".into()));
    }
    let mut aug = DMatrix::<T>::zeros(n + nu, n + nu);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * ts));
    aug.view_mut((0, n), (n, nu)).copy_from(&(bc * ts));
    let e = expm(&aug);
    DiscreteModel::new(
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, nu)).into_owned(),
        c.clone(),
        ts,
    )
}
