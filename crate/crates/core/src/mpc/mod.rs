//! Condensed linear-MPC building blocks.
//!
//! Everything here is generic over [`Scalar`](crate::Scalar) and works on
//! dense `nalgebra` matrices. Stacked vectors follow the convention
//! `X = [x_1; …; x_N]`, `U = [u_0; …; u_{N−1}]`.

mod blocking;
mod constraints;
mod cost;
mod gain;
mod kalman;
mod model;
mod offset_free;
mod prediction;

use thiserror::Error;

pub use blocking::{build_blocking, BlockingSpec};
pub use constraints::{
    build_trajectory_constraints, build_trajectory_constraints_staged, soften_constraints, tighten_constraints,
    SoftConstraints, StageConstraint, TrajectoryConstraints,
};
pub use cost::{build_cost, CondensedCost, CostSpec};
pub use gain::{riccati_lqr, unconstrained_rhc_gain, RiccatiSolution};
pub use kalman::{kalman_step, Gaussian};
pub use model::{discretize_zoh, expm, DiscreteModel};
pub use offset_free::offset_free_augment;
pub use prediction::{build_prediction, build_prediction_ltv, Prediction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("condensed Hessian is singular (is the input penalty R positive definite?)")]
    SingularHessian,
    #[error("Riccati iteration did not converge within {0} iterations")]
    RiccatiNotConverged(usize),
    #[error("disturbance augmentation is not detectable: rank {rank} < required {required}")]
    Undetectable { rank: usize, required: usize },
    #[error("innovation covariance is numerically singular")]
    SingularInnovation,
}
