//! Integrators, quadrature, dense linear algebra and the QP solver.

pub mod linalg;
pub mod ode;
pub mod qp;
pub mod quad;

pub use linalg::{least_squares, matrix_rank, solve_linear, LinearSolution};
pub use ode::{euler_explicit, euler_implicit, rk4, rk4_step, rk45_adaptive, IntegrationError, IntegratorResult};
pub use qp::{kkt_residuals, solve_qp, solve_qp_warm, KktResiduals, QpError, QpProblem, QpSolution, QpStatus};
pub use quad::{quad_riemann, quad_simpson, quad_trapezoid, QuadratureError};
