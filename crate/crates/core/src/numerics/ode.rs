//! Fixed-step and adaptive initial-value integrators.
//!
//! All integrators take a vector field `f(t, x)` and return every accepted
//! step in an [`IntegratorResult`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::scalar::{lit, to_f64, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError {
    #[error("invalid integrator arguments: {0}")]
    InvalidArguments(&'static str),
    #[error("non-finite state produced at step {step}")]
    NonFinite { step: usize },
    #[error("implicit step {step} did not converge")]
    ImplicitNotConverged { step: usize },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorResult<T: Scalar> {
    pub times: Vec<T>,
    pub states: Vec<DVector<T>>,
    pub step_count: usize,
    /// Only nonzero for adaptive integrators.
    pub rejected_step_count: usize,
}

impl<T: Scalar> IntegratorResult<T> {
    fn start(t0: T, x0: DVector<T>) -> Self {
        Self {
            times: vec![t0],
            states: vec![x0],
            step_count: 0,
            rejected_step_count: 0,
        }
    }

    fn push(&mut self, t: T, x: DVector<T>) {
        self.times.push(t);
        self.states.push(x);
        self.step_count += 1;
    }

    pub fn final_state(&self) -> &DVector<T> {
        self.states.last().expect("result holds the initial state")
    }

    pub fn final_time(&self) -> T {
        *self.times.last().expect("result holds the initial time")
    }
}

fn all_finite<T: Scalar>(x: &DVector<T>) -> bool {
    x.iter().all(|v| v.is_finite())
}

fn check_fixed_args<T: Scalar>(h: T, n_steps: usize) -> Result<(), IntegrationError> {
    if !(h > T::zero()) || !h.is_finite() {
        return Err(IntegrationError::InvalidArguments("step size must be positive"));
    }
    if n_steps == 0 {
        return Err(IntegrationError::InvalidArguments("need at least one step"));
    }
    Ok(())
}

fn fixed_step<T, F, S>(
    mut f: F,
    t0: T,
    x0: DVector<T>,
    h: T,
    n_steps: usize,
    mut step: S,
) -> Result<IntegratorResult<T>, IntegrationError>
where
    T: Scalar,
    F: FnMut(T, &DVector<T>) -> DVector<T>,
    S: FnMut(&mut F, T, &DVector<T>, T, usize) -> Result<DVector<T>, IntegrationError>,
{
    check_fixed_args(h, n_steps)?;
    if !all_finite(&x0) {
        return Err(IntegrationError::NonFinite { step: 0 });
    }
    let mut out = IntegratorResult::start(t0, x0);
    for k in 0..n_steps {
        let t = t0 + h * lit::<T>(k as f64);
        let x_next = step(&mut f, t, out.final_state(), h, k + 1)?;
        if !all_finite(&x_next) {
            return Err(IntegrationError::NonFinite { step: k + 1 });
        }
        out.push(t0 + h * lit::<T>((k + 1) as f64), x_next);
    }
    Ok(out)
}

/// Forward Euler: `x_{k+1} = x_k + h f(t_k, x_k)`.
pub fn euler_explicit<T, F>(
    f: F,
    t0: T,
    x0: DVector<T>,
    h: T,
    n_steps: usize,
) -> Result<IntegratorResult<T>, IntegrationError>
where
    T: Scalar,
    F: FnMut(T, &DVector<T>) -> DVector<T>,
{
    fixed_step(f, t0, x0, h, n_steps, |f, t, x, h, _| Ok(x + f(t, x) * h))
}

/// Backward Euler. Each step solves `z = x_k + h f(t_{k+1}, z)` by Newton
/// iteration on a finite-difference Jacobian, falling back to damped
/// fixed-point iteration when Newton stalls.
pub fn euler_implicit<T, F>(
    f: F,
    t0: T,
    x0: DVector<T>,
    h: T,
    n_steps: usize,
) -> Result<IntegratorResult<T>, IntegrationError>
where
    T: Scalar,
    F: FnMut(T, &DVector<T>) -> DVector<T>,
{
    fixed_step(f, t0, x0, h, n_steps, |f, t, x, h, step| {
        let t_next = t + h;
        newton_implicit(f, t_next, x, h)
            .or_else(|| fixed_point_implicit(f, t_next, x, h))
            .ok_or(IntegrationError::ImplicitNotConverged { step })
    })
}

const IMPLICIT_MAX_ITER: usize = 100;

fn implicit_tol<T: Scalar>() -> T {
    let eps = T::default_epsilon() * lit(100.0);
    if eps > lit(1e-10) {
        eps
    } else {
        lit(1e-10)
    }
}

fn newton_implicit<T, F>(f: &mut F, t: T, x: &DVector<T>, h: T) -> Option<DVector<T>>
where
    T: Scalar,
    F: FnMut(T, &DVector<T>) -> DVector<T>,
{
    let n = x.len();
    let tol = implicit_tol::<T>();
    let fd = T::default_epsilon().sqrt();
    let mut z = x.clone();
    for _ in 0..IMPLICIT_MAX_ITER {
        let fz = f(t, &z);
        let residual = &z - x - &fz * h;
        let mut jac = DMatrix::<T>::identity(n, n);
        for j in 0..n {
            let dz = fd * (T::one() + z[j].abs());
            let mut zp = z.clone();
            zp[j] += dz;
            let col = (f(t, &zp) - &fz) / dz;
            for i in 0..n {
                jac[(i, j)] -= h * col[i];
            }
        }
        let delta = jac.lu().solve(&residual)?;
        z -= &delta;
        if !all_finite(&z) {
            return None;
        }
        if delta.amax() <= tol * (T::one() + z.amax()) {
            return Some(z);
        }
    }
    None
}

fn fixed_point_implicit<T, F>(f: &mut F, t: T, x: &DVector<T>, h: T) -> Option<DVector<T>>
where
    T: Scalar,
    F: FnMut(T, &DVector<T>) -> DVector<T>,
{
    let tol = implicit_tol::<T>();
    let damping: T = lit(0.5);
    let mut z = x.clone();
    for _ in 0..IMPLICIT_MAX_ITER {
        let target = x + f(t, &z) * h;
        let next = &z * (T::one() - damping) + target * damping;
        let change = (&next - &z).amax();
        z = next;
        if !all_finite(&z) {
            return None;
        }
        if change <= tol * (T::one() + z.amax()) {
            return Some(z);
        }
    }
    None
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<T, F>(f: &mut F, t: T, x: &DVector<T>, h: T) -> DVector<T>
where
    T: Scalar,
    F: FnMut(T, &DVector<T>) -> DVector<T>,
{
    let half: T = lit(0.5);
    let k1 = f(t, x);
    let k2 = f(t + h * half, &(x + &k1 * (h * half)));
    let k3 = f(t + h * half, &(x + &k2 * (h * half)));
    let k4 = f(t + h, &(x + &k3 * h));
    x + (k1 + k2 * lit::<T>(2.0) + k3 * lit::<T>(2.0) + k4) * (h / lit(6.0))
}

pub fn rk4<T, F>(
    f: F,
    t0: T,
    x0: DVector<T>,
    h: T,
    n_steps: usize,
) -> Result<IntegratorResult<T>, IntegrationError>
where
    T: Scalar,
    F: FnMut(T, &DVector<T>) -> DVector<T>,
{
    fixed_step(f, t0, x0, h, n_steps, |f, t, x, h, _| Ok(rk4_step(f, t, x, h)))
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand–Prince 4(5) integration from `t0` to `t_end`.
///
/// The local error estimate of every accepted step satisfies
/// `rms(err_i / (abs_tol + rel_tol * max(|x_i|, |x_new_i|))) <= 1`.
pub fn rk45_adaptive<T, F>(
    mut f: F,
    t0: T,
    x0: DVector<T>,
    t_end: T,
    rel_tol: T,
    abs_tol: T,
) -> Result<IntegratorResult<T>, IntegrationError>
where
    T: Scalar,
    F: FnMut(T, &DVector<T>) -> DVector<T>,
{
    if !(t_end > t0) {
        return Err(IntegrationError::InvalidArguments("t_end must exceed t0"));
    }
    if !(rel_tol > T::zero()) || !(abs_tol > T::zero()) {
        return Err(IntegrationError::InvalidArguments("tolerances must be positive"));
    }
    if !all_finite(&x0) {
        return Err(IntegrationError::NonFinite { step: 0 });
    }
    let span = t_end - t0;
    let h_min = span * lit(1e-12);
    let n = x0.len();
    let scale = |x: &DVector<T>, y: &DVector<T>, i: usize| abs_tol + rel_tol * x[i].abs().max(y[i].abs());
    let rms = |v: &DVector<T>, x: &DVector<T>, y: &DVector<T>| -> T {
        if n == 0 {
            return T::zero();
        }
        let mut acc = T::zero();
        for i in 0..n {
            let r = v[i] / scale(x, y, i);
            acc += r * r;
        }
        (acc / lit(n as f64)).sqrt()
    };

    let mut out = IntegratorResult::start(t0, x0.clone());
    let mut t = t0;
    let mut x = x0;
    let mut k1 = f(t, &x);

    // Starting step heuristic (Hairer, Nørsett & Wanner).
    let zero = DVector::<T>::zeros(n);
    let d0 = rms(&x, &x, &zero);
    let d1 = rms(&k1, &x, &zero);
    let mut h = if d0 < lit(1e-5) || d1 < lit(1e-5) {
        lit::<T>(1e-6) * span.max(T::one())
    } else {
        lit::<T>(0.01) * d0 / d1
    };
    h = h.min(span);

    let safety: T = lit(0.9);
    let grow_max: T = lit(5.0);
    let shrink_min: T = lit(0.2);
    let order_exp: T = lit(-0.2);

    while t < t_end {
        let mut last = false;
        if t + h >= t_end {
            h = t_end - t;
            last = true;
        }
        if h < h_min {
            return Err(IntegrationError::StepUnderflow { t: to_f64(t) });
        }
        let mut ks: Vec<DVector<T>> = Vec::with_capacity(7);
        ks.push(k1.clone());
        for s in 1..7 {
            let mut xs = x.clone();
            for (j, kj) in ks.iter().enumerate().take(s) {
                let a = DP_A[s][j];
                if a != 0.0 {
                    xs += kj * (h * lit::<T>(a));
                }
            }
            ks.push(f(t + h * lit::<T>(DP_C[s]), &xs));
        }
        let mut x5 = x.clone();
        let mut err = DVector::<T>::zeros(n);
        for s in 0..7 {
            if DP_B5[s] != 0.0 {
                x5 += &ks[s] * (h * lit::<T>(DP_B5[s]));
            }
            err += &ks[s] * (h * lit::<T>(DP_B5[s] - DP_B4[s]));
        }
        let err_norm = rms(&err, &x, &x5);
        if !err_norm.is_finite() {
            out.rejected_step_count += 1;
            h *= shrink_min;
            continue;
        }
        if err_norm <= T::one() {
            t = if last { t_end } else { t + h };
            if !all_finite(&x5) {
                return Err(IntegrationError::NonFinite { step: out.step_count + 1 });
            }
            x = x5;
            // FSAL: stage 7 was evaluated at the accepted point.
            k1 = ks.pop().expect("seven stages");
            out.push(t, x.clone());
            let factor = if err_norm == T::zero() {
                grow_max
            } else {
                (safety * err_norm.powf(order_exp)).min(grow_max).max(shrink_min)
            };
            h = (h * factor).min(span);
        } else {
            out.rejected_step_count += 1;
            let factor = (safety * err_norm.powf(order_exp)).max(shrink_min);
            h *= factor;
        }
    }
    Ok(out)
}
