use nalgebra::{DMatrix, DVector};

use super::{DiscreteModel, MpcError};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian<T: Scalar> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

/// One predict-then-update cycle of the discrete Kalman filter.
///
/// The prior is the previous posterior; it is propagated with `u_prev`,
/// then corrected by the measurement `y`. The covariance update uses the
/// Joseph form and is symmetrized.
pub fn kalman_step<T: Scalar>(
    model: &DiscreteModel<T>,
    process_cov: &DMatrix<T>,
    measurement_cov: &DMatrix<T>,
    prior: &Gaussian<T>,
    u_prev: &DVector<T>,
    y: &DVector<T>,
) -> Result<Gaussian<T>, MpcError> {
    let (n, ny) = (model.nx(), model.ny());
    if prior.mean.len() != n || prior.cov.shape() != (n, n) || process_cov.shape() != (n, n) {
        return Err(MpcError::Dimension("state covariance shapes".into()));
    }
    if measurement_cov.shape() != (ny, ny) || y.len() != ny || u_prev.len() != model.nu() {
        return Err(MpcError::Dimension("measurement or input shapes".into()));
    }
    let mean_pred = &model.a * &prior.mean + &model.b * u_prev;
    let cov_pred = &model.a * &prior.cov * model.a.transpose() + process_cov;
    let s = &model.c * &cov_pred * model.c.transpose() + measurement_cov;
    let s = (&s + s.transpose()) * lit::<T>(0.5);
    let chol = s.cholesky().ok_or(MpcError::SingularInnovation)?;
    // K = P Cᵀ S⁻¹
    let gain = chol.solve(&(&model.c * &cov_pred)).transpose();
    let innovation = y - &model.c * &mean_pred;
    let mean = mean_pred + &gain * innovation;
    let i_kc = DMatrix::<T>::identity(n, n) - &gain * &model.c;
    let cov = &i_kc * cov_pred * i_kc.transpose() + &gain * measurement_cov * gain.transpose();
    let cov = (&cov + cov.transpose()) * lit::<T>(0.5);
    Ok(Gaussian { mean, cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn perfect_measurement_pins_mean() {
        let m = DiscreteModel::new(
            dmatrix![1.0, 0.1; 0.0, 1.0],
            dmatrix![0.0; 0.1],
            DMatrix::identity(2, 2),
            0.1,
        )
        .unwrap();
        let prior = Gaussian { mean: dvector![0.0, 0.0], cov: DMatrix::identity(2, 2) * 10.0 };
        let y = dvector![0.3, -0.7];
        let post = kalman_step(&m, &(DMatrix::identity(2, 2) * 0.01), &(DMatrix::identity(2, 2) * 1e-12), &prior, &dvector![0.5], &y)
            .unwrap();
        assert!((post.mean - y).amax() < 1e-6);
    }

    #[test]
    fn scalar_fixed_point() {
        let m = DiscreteModel::new(dmatrix![1.0], dmatrix![0.0], dmatrix![1.0], 1.0).unwrap();
        let mut g = Gaussian { mean: dvector![0.0], cov: dmatrix![10.0] };
        for _ in 0..200 {
            g = kalman_step(&m, &dmatrix![1.0], &dmatrix![1.0], &g, &dvector![0.0], &dvector![0.0]).unwrap();
        }
        // Independent oracle: iterate the scalar recursion p ← (p+1) − (p+1)²/(p+2).
        let mut p = 10.0f64;
        for _ in 0..10_000 {
            p = (p + 1.0) - (p + 1.0).powi(2) / (p + 2.0);
        }
        assert!((g.cov[(0, 0)] - p).abs() < 1e-8);
    }

    #[test]
    fn singular_innovation() {
        let m = DiscreteModel::new(dmatrix![1.0], dmatrix![0.0], dmatrix![1.0], 1.0).unwrap();
        let g = Gaussian { mean: dvector![0.0], cov: dmatrix![0.0] };
        let err = kalman_step(&m, &dmatrix![0.0], &dmatrix![0.0], &g, &dvector![0.0], &dvector![1.0]).unwrap_err();
        assert_eq!(err, MpcError::SingularInnovation);
    }
}
