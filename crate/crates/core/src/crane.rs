//! Gantry-crane plant: two decoupled pendulum-on-cart axes with a fixed
//! cable length.
//!
//! Per axis `a ∈ {x, y}` with swing angle `φ ∈ {θ, ψ}`:
//!
//! ```text
//! (M + m) a'' + m l φ'' cos φ − m l φ'² sin φ = k u − c a'
//! l φ'' + a'' cos φ + g sin φ                 = −(c_θ / (m l)) φ'
//! ```

use nalgebra::{DMatrix, DVector, Matrix2, SVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATE_DIM: usize = 8;
pub const INPUT_DIM: usize = 2;
pub const OUTPUT_DIM: usize = 4;

pub type StateVector = SVector<f64, STATE_DIM>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CraneError {
    #[error("invalid crane parameter `{field}` = {value}")]
    InvalidParams { field: &'static str, value: f64 },
    #[error("crane model evaluated at a non-finite state or input")]
    NonFinite,
    #[error("cable angle {0} rad is at or beyond horizontal")]
    CableHorizontal(f64),
    #[error("perturbation magnitude must lie in [0, 1), got {0}")]
    BadMagnitude(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CraneParams {
    pub cart_mass: f64,
    pub payload_mass: f64,
    pub cable_length: f64,
    /// Drive force per unit of normalized input, each axis.
    pub force_gain: f64,
    pub cart_friction: f64,
    pub swing_damping: f64,
    pub gravity: f64,
}

impl Default for CraneParams {
    fn default() -> Self {
        Self::nominal()
    }
}

impl CraneParams {
    pub const fn nominal() -> Self {
        Self {
            cart_mass: 1.2,
            payload_mass: 0.5,
            cable_length: 0.75,
            force_gain: 10.0,
            cart_friction: 0.5,
            swing_damping: 0.01,
            gravity: 9.81,
        }
    }

    pub fn validate(&self) -> Result<(), CraneError> {
        let positive = [
            ("cart_mass", self.cart_mass),
            ("payload_mass", self.payload_mass),
            ("cable_length", self.cable_length),
            ("force_gain", self.force_gain),
            ("gravity", self.gravity),
        ];
        for (field, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(CraneError::InvalidParams { field, value });
            }
        }
        for (field, value) in [("cart_friction", self.cart_friction), ("swing_damping", self.swing_damping)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(CraneError::InvalidParams { field, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CraneState {
    pub x: f64,
    pub xdot: f64,
    pub y: f64,
    pub ydot: f64,
    pub theta: f64,
    pub thetadot: f64,
    pub psi: f64,
    pub psidot: f64,
}

impl CraneState {
    /// Cart at rest at `(x, y)` with a vertical cable.
    pub fn at_rest(x: f64, y: f64) -> Self {
        Self { x, y, ..Self::default() }
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::from([self.x, self.xdot, self.y, self.ydot, self.theta, self.thetadot, self.psi, self.psidot])
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), STATE_DIM, "crane state has {STATE_DIM} entries");
        Self {
            x: v[0],
            xdot: v[1],
            y: v[2],
            ydot: v[3],
            theta: v[4],
            thetadot: v[5],
            psi: v[6],
            psidot: v[7],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    pub fn cart_position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub ux: f64,
    pub uy: f64,
}

impl ControlInput {
    pub const ZERO: Self = Self { ux: 0.0, uy: 0.0 };

    pub fn new(ux: f64, uy: f64) -> Self {
        Self { ux, uy }
    }

    pub fn is_finite(&self) -> bool {
        self.ux.is_finite() && self.uy.is_finite()
    }
}

/// Accelerations `(a'', φ'')` of one axis.
fn axis_accel(p: &CraneParams, adot: f64, phi: f64, phidot: f64, u: f64) -> Vector2<f64> {
    let (mass, l) = (p.payload_mass, p.cable_length);
    let s = phi.sin();
    let lhs = axis_mass_matrix(p, phi);
    let rhs = Vector2::new(
        p.force_gain * u - p.cart_friction * adot + mass * l * phidot * phidot * s,
        -p.gravity * s - p.swing_damping / (mass * l) * phidot,
    );
    let det = lhs[(0, 0)] * lhs[(1, 1)] - lhs[(0, 1)] * lhs[(1, 0)];
    Vector2::new(
        (lhs[(1, 1)] * rhs[0] - lhs[(0, 1)] * rhs[1]) / det,
        (lhs[(0, 0)] * rhs[1] - lhs[(1, 0)] * rhs[0]) / det,
    )
}

fn axis_mass_matrix(p: &CraneParams, phi: f64) -> Matrix2<f64> {
    let c = phi.cos();
    Matrix2::new(
        p.cart_mass + p.payload_mass,
        p.payload_mass * p.cable_length * c,
        c,
        p.cable_length,
    )
}

/// State derivative `(ẋ, ẍ, ẏ, ÿ, θ̇, θ̈, ψ̇, ψ̈)`.
pub fn dynamics(state: &CraneState, input: &ControlInput, params: &CraneParams) -> Result<StateVector, CraneError> {
    if !state.is_finite() || !input.is_finite() {
        return Err(CraneError::NonFinite);
    }
    Ok(dynamics_unchecked(state, input, params))
}

pub(crate) fn dynamics_unchecked(state: &CraneState, input: &ControlInput, params: &CraneParams) -> StateVector {
    let ax = axis_accel(params, state.xdot, state.theta, state.thetadot, input.ux);
    let ay = axis_accel(params, state.ydot, state.psi, state.psidot, input.uy);
    StateVector::from([state.xdot, ax[0], state.ydot, ay[0], state.thetadot, ax[1], state.psidot, ay[1]])
}

/// Payload position projected onto the cart plane.
pub fn payload_position(state: &CraneState, params: &CraneParams) -> [f64; 2] {
    [
        state.x + params.cable_length * state.theta.sin(),
        state.y + params.cable_length * state.psi.sin(),
    ]
}

/// Kinetic plus payload potential energy (zero at rest, cable vertical).
pub fn mechanical_energy(state: &CraneState, params: &CraneParams) -> f64 {
    let axis = |adot: f64, phi: f64, phidot: f64| {
        let (m_total, m, l) = (params.cart_mass + params.payload_mass, params.payload_mass, params.cable_length);
        0.5 * m_total * adot * adot
            + m * l * adot * phidot * phi.cos()
            + 0.5 * m * l * l * phidot * phidot
            + m * params.gravity * l * (1.0 - phi.cos())
    };
    axis(state.xdot, state.theta, state.thetadot) + axis(state.ydot, state.psi, state.psidot)
}

/// Continuous-time LTI model `ẋ = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// Measured outputs: cart positions and cable angles `(x, y, θ, ψ)`.
pub fn output_matrix() -> DMatrix<f64> {
    let mut c = DMatrix::zeros(OUTPUT_DIM, STATE_DIM);
    for (row, col) in [0, 2, 4, 6].into_iter().enumerate() {
        c[(row, col)] = 1.0;
    }
    c
}

/// Analytic Jacobians of [`dynamics`] at `(operating_point, u = 0)`.
pub fn linearize(params: &CraneParams, operating_point: &CraneState) -> Result<ContinuousModel, CraneError> {
    params.validate()?;
    if !operating_point.is_finite() {
        return Err(CraneError::NonFinite);
    }
    let mut a = DMatrix::zeros(STATE_DIM, STATE_DIM);
    let mut b = DMatrix::zeros(STATE_DIM, INPUT_DIM);
    let axes = [
        (0usize, operating_point.xdot, operating_point.theta, operating_point.thetadot),
        (1usize, operating_point.ydot, operating_point.psi, operating_point.psidot),
    ];
    for (axis, adot, phi, phidot) in axes {
        if phi.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(CraneError::CableHorizontal(phi));
        }
        let (pos, vel, ang, rate) = (2 * axis, 2 * axis + 1, 4 + 2 * axis, 5 + 2 * axis);
        let mm = axis_mass_matrix(params, phi);
        let inv = mm.try_inverse().ok_or(CraneError::CableHorizontal(phi))?;
        let qdd = axis_accel(params, adot, phi, phidot, 0.0);
        let (m, l) = (params.payload_mass, params.cable_length);
        let (s, c) = phi.sin_cos();
        let beta = params.swing_damping / (m * l);
        let d_adot = inv * Vector2::new(-params.cart_friction, 0.0);
        let dm_dphi = Matrix2::new(0.0, -m * l * s, -s, 0.0);
        let d_phi = inv * (Vector2::new(m * l * phidot * phidot * c, -params.gravity * c) - dm_dphi * qdd);
        let d_phidot = inv * Vector2::new(2.0 * m * l * phidot * s, -beta);
        let d_u = inv * Vector2::new(params.force_gain, 0.0);

        a[(pos, vel)] = 1.0;
        a[(ang, rate)] = 1.0;
        for (row, k) in [(vel, 0usize), (rate, 1usize)] {
            a[(row, vel)] = d_adot[k];
            a[(row, ang)] = d_phi[k];
            a[(row, rate)] = d_phidot[k];
            b[(row, axis)] = d_u[k];
        }
    }
    Ok(ContinuousModel { a, b, c: output_matrix() })
}

/// Scales every parameter except gravity by an independent factor drawn
/// uniformly from `[1 − magnitude, 1 + magnitude]` with a ChaCha8 stream
/// seeded by `seed`.
pub fn perturb_params(params: &CraneParams, magnitude: f64, seed: u64) -> Result<CraneParams, CraneError> {
    if !(0.0..1.0).contains(&magnitude) {
        return Err(CraneError::BadMagnitude(magnitude));
    }
    if magnitude == 0.0 {
        return Ok(*params);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor = || 1.0 + rng.gen_range(-magnitude..=magnitude);
    Ok(CraneParams {
        cart_mass: params.cart_mass * factor(),
        payload_mass: params.payload_mass * factor(),
        cable_length: params.cable_length * factor(),
        force_gain: params.force_gain * factor(),
        cart_friction: params.cart_friction * factor(),
        swing_damping: params.swing_damping * factor(),
        gravity: params.gravity,
    })
}

/// Advances the plant over `dt` with the input held, using `substeps`
/// classical RK4 steps.
pub fn step_rk4(state: &CraneState, input: &ControlInput, params: &CraneParams, dt: f64, substeps: usize) -> CraneState {
    let h = dt / substeps as f64;
    let f = |x: &StateVector| dynamics_unchecked(&CraneState::from_slice(x.as_slice()), input, params);
    let mut x = state.to_vector();
    for _ in 0..substeps {
        let k1 = f(&x);
        let k2 = f(&(x + k1 * (0.5 * h)));
        let k3 = f(&(x + k2 * (0.5 * h)));
        let k4 = f(&(x + k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    CraneState::from_slice(x.as_slice())
}

/// Dynamic vector field over `DVector` for use with the generic integrators.
pub fn vector_field<'a>(
    input: ControlInput,
    params: &'a CraneParams,
) -> impl FnMut(f64, &DVector<f64>) -> DVector<f64> + 'a {
    move |_t, x| {
        let d = dynamics_unchecked(&CraneState::from_slice(x.as_slice()), &input, params);
        DVector::from_column_slice(d.as_slice())
    }
}
