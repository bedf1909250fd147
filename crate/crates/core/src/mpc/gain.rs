use nalgebra::DMatrix;

use super::{build_cost, build_prediction, CostSpec, DiscreteModel, MpcError};
use crate::scalar::{lit, Scalar};

/// First block row of `H⁻¹ G`, so that the receding-horizon law is `u₀ = −K x₀`.
pub fn unconstrained_rhc_gain<T: Scalar>(
    model: &DiscreteModel<T>,
    cost: &CostSpec<T>,
    horizon: usize,
) -> Result<DMatrix<T>, MpcError> {
    let pred = build_prediction(model, horizon)?;
    let condensed = build_cost(&pred, cost)?;
    let chol = condensed.h.clone().cholesky().ok_or(MpcError::SingularHessian)?;
    let full = chol.solve(&condensed.g);
    Ok(full.rows(0, model.nu()).into_owned())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution<T: Scalar> {
    /// Fixed point of the Riccati difference equation.
    pub p: DMatrix<T>,
    /// Infinite-horizon gain, `u = −K x`.
    pub k: DMatrix<T>,
    pub iterations: usize,
}

/// Iterates `P ← Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA` from `P = Q` until the
/// entrywise change drops below `tol · max(1, ‖P‖_max)`.
pub fn riccati_lqr<T: Scalar>(
    model: &DiscreteModel<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    tol: T,
    max_iter: usize,
) -> Result<RiccatiSolution<T>, MpcError> {
    let (a, b) = (&model.a, &model.b);
    if q.shape() != a.shape() || r.nrows() != b.ncols() || !r.is_square() {
        return Err(MpcError::Dimension("Riccati weights do not match the model".into()));
    }
    let gain = |p: &DMatrix<T>| -> Result<DMatrix<T>, MpcError> {
        let s = r + b.transpose() * p * b;
        let chol = s.cholesky().ok_or(MpcError::SingularHessian)?;
        Ok(chol.solve(&(b.transpose() * p * a)))
    };
    let mut p = q.clone();
    for it in 1..=max_iter {
        let k = gain(&p)?;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let next = (&next + next.transpose()) * lit::<T>(0.5);
        let change = (&next - &p).amax();
        p = next;
        if change <= tol * T::one().max(p.amax()) {
            let k = gain(&p)?;
            return Ok(RiccatiSolution { p, k, iterations: it });
        }
    }
    Err(MpcError::RiccatiNotConverged(max_iter))
}
