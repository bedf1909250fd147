use nalgebra::{DMatrix, DVector};

use super::{MpcError, Prediction};
use crate::scalar::{lit, Scalar};

/// Stage weights `Q`, `R` and terminal weight `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec<T: Scalar> {
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub p: DMatrix<T>,
}

impl<T: Scalar> CostSpec<T> {
    pub fn new(q: DMatrix<T>, r: DMatrix<T>, p: DMatrix<T>) -> Result<Self, MpcError> {
        if !q.is_square() || !r.is_square() || p.shape() != q.shape() {
            return Err(MpcError::Dimension("Q, R, P must be square with P matching Q".into()));
        }
        let sym = |m: &DMatrix<T>| (m + m.transpose()) * lit::<T>(0.5);
        let (q, r, p) = (sym(&q), sym(&r), sym(&p));
        if r.nrows() > 0 && r.clone().cholesky().is_none() {
            return Err(MpcError::InvalidArgument("R must be positive definite".into()));
        }
        Ok(Self { q, r, p })
    }
}

/// Condensed objective
/// `J(U; x₀) = ½ Uᵀ H U + x₀ᵀ Gᵀ U + ½ x₀ᵀ W x₀`
/// of `½ x₀ᵀQx₀ + ½ Σ_{k=1}^{N−1} x_kᵀ Q x_k + ½ x_Nᵀ P x_N + ½ Σ_{k=0}^{N−1} u_kᵀ R u_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedCost<T: Scalar> {
    pub h: DMatrix<T>,
    pub g: DMatrix<T>,
    /// `W` in the constant term `½ x₀ᵀ W x₀`.
    pub const_map: DMatrix<T>,
    /// `Γᵀ Q̄`, used to build linear terms for stacked state references.
    pub gamma_t_qbar: DMatrix<T>,
}

impl<T: Scalar> CondensedCost<T> {
    /// Linear term `G x₀` of the QP.
    pub fn linear_term(&self, x0: &DVector<T>) -> DVector<T> {
        &self.g * x0
    }

    /// Linear term when the predicted states track a stacked reference
    /// `[r_1; …; r_N]`: `Γᵀ Q̄ (Φ x₀ − r)`.
    pub fn tracking_linear_term(&self, phi_x0: &DVector<T>, reference: &DVector<T>) -> DVector<T> {
        &self.gamma_t_qbar * (phi_x0 - reference)
    }

    pub fn value(&self, u: &DVector<T>, x0: &DVector<T>) -> T {
        let half: T = lit(0.5);
        (u.transpose() * &self.h * u)[(0, 0)] * half
            + (&self.g * x0).dot(u)
            + (x0.transpose() * &self.const_map * x0)[(0, 0)] * half
    }
}

pub fn build_cost<T: Scalar>(pred: &Prediction<T>, cost: &CostSpec<T>) -> Result<CondensedCost<T>, MpcError> {
    let (nx, nu, horizon) = (pred.nx, pred.nu, pred.horizon);
    if cost.q.nrows() != nx || cost.r.nrows() != nu {
        return Err(MpcError::Dimension(format!(
            "cost weights are {}x{} / {}x{} for nx = {nx}, nu = {nu}",
            cost.q.nrows(),
            cost.q.ncols(),
            cost.r.nrows(),
            cost.r.ncols()
        )));
    }
    let mut qbar = DMatrix::<T>::zeros(horizon * nx, horizon * nx);
    let mut rbar = DMatrix::<T>::zeros(horizon * nu, horizon * nu);
    for i in 0..horizon {
        let w = if i + 1 == horizon { &cost.p } else { &cost.q };
        qbar.view_mut((i * nx, i * nx), (nx, nx)).copy_from(w);
        rbar.view_mut((i * nu, i * nu), (nu, nu)).copy_from(&cost.r);
    }
    let gamma_t_qbar = pred.gamma.transpose() * &qbar;
    let h = &gamma_t_qbar * &pred.gamma + rbar;
    let h = (&h + h.transpose()) * lit::<T>(0.5);
    let g = &gamma_t_qbar * &pred.phi;
    let const_map = &cost.q + pred.phi.transpose() * &qbar * &pred.phi;
    Ok(CondensedCost { h, g, const_map, gamma_t_qbar })
}
