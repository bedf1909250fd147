use nalgebra::{DMatrix, DVector};

use super::{DiscreteModel, MpcError};
use crate::scalar::Scalar;

/// Stacked prediction `X = Φ x₀ + Γ U`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T: Scalar> {
    pub phi: DMatrix<T>,
    pub gamma: DMatrix<T>,
    pub horizon: usize,
    pub nx: usize,
    pub nu: usize,
}

impl<T: Scalar> Prediction<T> {
    /// Predicted state trajectory `[x_1; …; x_N]`.
    pub fn predict(&self, x0: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        &self.phi * x0 + &self.gamma * u
    }

    /// Rows of `Φ` for `x_{i+1}`.
    pub fn phi_block(&self, i: usize) -> nalgebra::DMatrixView<'_, T> {
        self.phi.view((i * self.nx, 0), (self.nx, self.nx))
    }

    pub fn gamma_rows(&self, i: usize) -> nalgebra::DMatrixView<'_, T> {
        self.gamma.view((i * self.nx, 0), (self.nx, self.horizon * self.nu))
    }
}

/// Φ row block `i` is `A^{i+1}`; Γ block `(i, j)` is `A^{i−j} B` for `j ≤ i`.
pub fn build_prediction<T: Scalar>(model: &DiscreteModel<T>, horizon: usize) -> Result<Prediction<T>, MpcError> {
    if horizon == 0 {
        return Err(MpcError::InvalidArgument("horizon must be at least 1".into()));
    }
    let a = vec![model.a.clone(); horizon];
    let b = vec![model.b.clone(); horizon];
    build_prediction_ltv(&a, &b)
}

/// Prediction matrices for `x_{k+1} = A_k x_k + B_k u_k`, `k = 0..N−1`.
pub fn build_prediction_ltv<T: Scalar>(a_seq: &[DMatrix<T>], b_seq: &[DMatrix<T>]) -> Result<Prediction<T>, MpcError> {
    let horizon = a_seq.len();
    if horizon == 0 || b_seq.len() != horizon {
        return Err(MpcError::Dimension(format!(
            "{} state matrices and {} input matrices",
            a_seq.len(),
            b_seq.len()
        )));
    }
    let nx = a_seq[0].nrows();
    let nu = b_seq[0].ncols();
    for (a, b) in a_seq.iter().zip(b_seq) {
        if a.nrows() != nx || a.ncols() != nx || b.nrows() != nx || b.ncols() != nu {
            return Err(MpcError::Dimension("inconsistent time-varying model shapes".into()));
        }
    }
    let mut phi = DMatrix::<T>::zeros(horizon * nx, nx);
    let mut gamma = DMatrix::<T>::zeros(horizon * nx, horizon * nu);
    let mut transition = DMatrix::<T>::identity(nx, nx);
    for i in 0..horizon {
        transition = &a_seq[i] * &transition;
        phi.view_mut((i * nx, 0), (nx, nx)).copy_from(&transition);
        gamma.view_mut((i * nx, i * nu), (nx, nu)).copy_from(&b_seq[i]);
        for j in 0..i {
            let prev = gamma.view(((i - 1) * nx, j * nu), (nx, nu)).into_owned();
            gamma.view_mut((i * nx, j * nu), (nx, nu)).copy_from(&(&a_seq[i] * prev));
        }
    }
    Ok(Prediction { phi, gamma, horizon, nx, nu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar_model(a: f64, b: f64) -> DiscreteModel<f64> {
        DiscreteModel::new(dmatrix![a], dmatrix![b], dmatrix![1.0], 0.1).unwrap()
    }

    #[test]
    fn horizon_one_is_model() {
        let m = DiscreteModel::new(dmatrix![1.0, 0.1; 0.0, 1.0], dmatrix![0.0; 0.1], dmatrix![1.0, 0.0], 0.1).unwrap();
        let p = build_prediction(&m, 1).unwrap();
        assert_eq!(p.phi, m.a);
        assert_eq!(p.gamma, m.b);
    }

    #[test]
    fn two_step_hand_rollout() {
        let p = build_prediction(&scalar_model(1.0, 1.0), 2).unwrap();
        assert_eq!(p.phi, dmatrix![1.0; 1.0]);
        assert_eq!(p.gamma, dmatrix![1.0, 0.0; 1.0, 1.0]);
    }

    #[test]
    fn zero_horizon_rejected() {
        assert!(build_prediction(&scalar_model(0.5, 1.0), 0).is_err());
    }

    #[test]
    fn time_varying_blocks() {
        let a = [dmatrix![2.0], dmatrix![3.0], dmatrix![5.0]];
        let b = [dmatrix![1.0], dmatrix![7.0], dmatrix![11.0]];
        let p = build_prediction_ltv(&a, &b).unwrap();
        assert_eq!(p.phi, dmatrix![2.0; 6.0; 30.0]);
        assert_eq!(p.gamma, dmatrix![1.0, 0.0, 0.0; 3.0, 7.0, 0.0; 15.0, 35.0, 11.0]);
    }
}
