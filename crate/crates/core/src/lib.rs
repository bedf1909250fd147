pub mod controllers;
pub mod crane;
pub mod grading;
pub mod harness;
pub mod mpc;
pub mod numerics;
pub mod planner;
pub mod regions;
pub mod scalar;
pub mod testcases;

pub use scalar::Scalar;

/// Double-precision instantiations of the generic numeric types.
pub type QpProblemF64 = numerics::QpProblem<f64>;
pub type QpSolutionF64 = numerics::QpSolution<f64>;
pub type DiscreteModelF64 = mpc::DiscreteModel<f64>;
pub type CostSpecF64 = mpc::CostSpec<f64>;
pub type CondensedCostF64 = mpc::CondensedCost<f64>;
pub type PredictionF64 = mpc::Prediction<f64>;
pub type StageConstraintF64 = mpc::StageConstraint<f64>;
pub type TrajectoryConstraintsF64 = mpc::TrajectoryConstraints<f64>;
pub type GaussianF64 = mpc::Gaussian<f64>;
pub type RiccatiSolutionF64 = mpc::RiccatiSolution<f64>;
