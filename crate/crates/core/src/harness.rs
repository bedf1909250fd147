//! Closed-loop simulation of the crane against controller hooks, with
//! trajectory recording, per-sample hook timing and fault isolation.
//!
//! Fault levels: 1 a hook returned an error or panicked, 2 a hook returned
//! an output of the wrong length or with non-finite entries, 3 the plant
//! state became non-finite or the cable reached the horizontal, 4 the
//! per-testcase watchdog budget ran out.

use std::any::Any;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::crane::{
    perturb_params, step_rk4, ContinuousModel, ControlInput, CraneParams, CraneState, INPUT_DIM, OUTPUT_DIM,
    STATE_DIM,
};
use crate::testcases::{public_view, PublicTestcase, Testcase};

pub type ControllerState = Box<dyn Any + Send>;
pub type HookError = Box<dyn std::error::Error + Send + Sync>;
pub type HookResult<T> = Result<T, HookError>;

pub const LEVEL_HOOK_FAULT: u8 = 1;
pub const LEVEL_INVALID_OUTPUT: u8 = 2;
pub const LEVEL_INTEGRATION_FAULT: u8 = 3;
pub const LEVEL_WATCHDOG: u8 = 4;

pub const DEFAULT_WATCHDOG: Duration = Duration::from_secs(120);

/// The four controller callbacks. Per-run state lives in the opaque
/// [`ControllerState`] returned by `setup`; the harness only threads it
/// through.
pub trait ControllerHooks: Send {
    fn setup(&self, tc: &PublicTestcase) -> HookResult<ControllerState>;

    fn target_generator(&self, t: f64, measurement: &[f64], state: &mut ControllerState) -> HookResult<Vec<f64>>;

    fn state_estimator(
        &self,
        t: f64,
        measurement: &[f64],
        reference: &[f64],
        state: &mut ControllerState,
    ) -> HookResult<Vec<f64>>;

    fn mp_controller(
        &self,
        t: f64,
        estimate: &[f64],
        reference: &[f64],
        state: &mut ControllerState,
    ) -> HookResult<Vec<f64>>;
}

/// Fetches the concrete controller state, turning a type mismatch into a
/// hook error.
pub fn downcast_state<T: 'static>(state: &mut ControllerState) -> HookResult<&mut T> {
    state.downcast_mut::<T>().ok_or_else(|| "controller state has an unexpected type".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEvent {
    pub level: u8,
    pub sample: usize,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantModel {
    Nonlinear,
    /// Linear continuous-time model `ẋ = A x + B u`, integrated the same way.
    Linear(ContinuousModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub substeps: usize,
    pub watchdog: Option<Duration>,
    /// Constant offset added to the input before it reaches the plant; the
    /// recorded input is the one the controller returned.
    pub input_disturbance: [f64; 2],
    pub plant: PlantModel,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { substeps: 10, watchdog: Some(DEFAULT_WATCHDOG), input_disturbance: [0.0; 2], plant: PlantModel::Nonlinear }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub testcase: String,
    pub plant_params: CraneParams,
    pub ts: f64,
    pub times: Vec<f64>,
    pub true_states: Vec<CraneState>,
    pub measurements: Vec<[f64; OUTPUT_DIM]>,
    pub estimates: Vec<Vec<f64>>,
    pub references: Vec<Vec<f64>>,
    pub inputs: Vec<ControlInput>,
    pub solver_time_per_sample: Vec<f64>,
    pub error_events: Vec<ErrorEvent>,
    /// Set when an integration fault ended the run early.
    pub truncated: bool,
}

impl Trajectory {
    fn empty(tc: &Testcase, params: CraneParams) -> Self {
        Self {
            testcase: tc.name.clone(),
            plant_params: params,
            ts: tc.ts,
            times: Vec::new(),
            true_states: Vec::new(),
            measurements: Vec::new(),
            estimates: Vec::new(),
            references: Vec::new(),
            inputs: Vec::new(),
            solver_time_per_sample: Vec::new(),
            error_events: Vec::new(),
            truncated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&CraneState> {
        self.true_states.last()
    }

    /// Copy with timing zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut t = self.clone();
        t.solver_time_per_sample.iter_mut().for_each(|s| *s = 0.0);
        t
    }

    fn push(&mut self, row: Row) {
        self.times.push(row.t);
        self.true_states.push(row.state);
        self.measurements.push(row.measurement);
        self.estimates.push(row.estimate);
        self.references.push(row.reference);
        self.inputs.push(row.input);
        self.solver_time_per_sample.push(row.solver_time);
        self.error_events.extend(row.events);
    }

    pub const CSV_HEADER: &'static str = "t,x,xdot,y,ydot,theta,thetadot,psi,psidot,\
meas_x,meas_y,meas_theta,meas_psi,\
est_x,est_xdot,est_y,est_ydot,est_theta,est_thetadot,est_psi,est_psidot,\
ref_x,ref_xdot,ref_y,ref_ydot,ref_theta,ref_thetadot,ref_psi,ref_psidot,\
ux,uy,solver_time";

    /// One row per sample in the column order of [`Trajectory::CSV_HEADER`].
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for k in 0..self.len() {
            let mut cols: Vec<f64> = vec![self.times[k]];
            cols.extend(self.true_states[k].to_vector().iter());
            cols.extend(self.measurements[k]);
            cols.extend(pad8(&self.estimates[k]));
            cols.extend(pad8(&self.references[k]));
            cols.extend([self.inputs[k].ux, self.inputs[k].uy, self.solver_time_per_sample[k]]);
            let line: Vec<String> = cols.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

fn pad8(v: &[f64]) -> [f64; STATE_DIM] {
    let mut out = [0.0; STATE_DIM];
    for (o, x) in out.iter_mut().zip(v) {
        *o = *x;
    }
    out
}

/// One recorded sample plus the plant state it leads to.
#[derive(Debug, Clone)]
struct Row {
    t: f64,
    state: CraneState,
    measurement: [f64; OUTPUT_DIM],
    estimate: Vec<f64>,
    reference: Vec<f64>,
    input: ControlInput,
    solver_time: f64,
    events: Vec<ErrorEvent>,
}

/// Measurement at sample `k`; the noise draw depends only on the testcase
/// seed and `k`, so any sample can be reproduced in isolation.
pub fn measure(tc: &Testcase, state: &CraneState, k: usize) -> [f64; OUTPUT_DIM] {
    let mut y = [state.x, state.y, state.theta, state.psi];
    if tc.measurement_noise_std.iter().any(|s| *s > 0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        rng.set_stream(1 << 32 | k as u64);
        for (yi, sd) in y.iter_mut().zip(tc.measurement_noise_std) {
            if sd > 0.0 {
                *yi += Normal::new(0.0, sd).expect("finite std").sample(&mut rng);
            }
        }
    }
    y
}

fn plant_params(tc: &Testcase) -> CraneParams {
    perturb_params(&CraneParams::nominal(), tc.param_perturbation, tc.seed).unwrap_or_else(|_| CraneParams::nominal())
}

fn advance(state: &CraneState, u: ControlInput, params: &CraneParams, opts: &SimOptions, ts: f64) -> CraneState {
    let applied = ControlInput::new(u.ux + opts.input_disturbance[0], u.uy + opts.input_disturbance[1]);
    match &opts.plant {
        PlantModel::Nonlinear => step_rk4(state, &applied, params, ts, opts.substeps),
        PlantModel::Linear(m) => {
            let uv = DVector::from_column_slice(&[applied.ux, applied.uy]);
            let f = |x: &DVector<f64>| &m.a * x + &m.b * &uv;
            let h = ts / opts.substeps as f64;
            let mut x = DVector::from_column_slice(state.to_vector().as_slice());
            for _ in 0..opts.substeps {
                let k1 = f(&x);
                let k2 = f(&(&x + &k1 * (0.5 * h)));
                let k3 = f(&(&x + &k2 * (0.5 * h)));
                let k4 = f(&(&x + &k3 * h));
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            CraneState::from_slice(x.as_slice())
        }
    }
}

fn plant_fault(state: &CraneState) -> Option<String> {
    if !state.is_finite() {
        Some("plant state became non-finite".into())
    } else if state.theta.abs() >= std::f64::consts::FRAC_PI_2 || state.psi.abs() >= std::f64::consts::FRAC_PI_2 {
        Some("swing angle reached the horizontal".into())
    } else {
        None
    }
}

fn call<T>(f: impl FnOnce() -> HookResult<T>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(payload) => Err(match payload.downcast_ref::<&str>() {
            Some(s) => format!("panic: {s}"),
            None => match payload.downcast_ref::<String>() {
                Some(s) => format!("panic: {s}"),
                None => "panic".into(),
            },
        }),
    }
}

fn check_vector(v: &[f64], len: usize, what: &str) -> Result<(), String> {
    if v.len() != len {
        Err(format!("{what} has length {} (expected {len})", v.len()))
    } else if v.iter().any(|x| !x.is_finite()) {
        Err(format!("{what} contains non-finite values"))
    } else {
        Ok(())
    }
}

/// Runs the hooks over one sample. Returns the input to apply and any fault
/// events; hooks are skipped once one of them faults.
fn run_hooks(
    hooks: &dyn ControllerHooks,
    cstate: &mut Option<ControllerState>,
    k: usize,
    t: f64,
    y: &[f64; OUTPUT_DIM],
    row: &mut Row,
) {
    let fault = |level: u8, description: String| ErrorEvent { level, sample: k, description };
    let Some(st) = cstate.as_mut() else {
        return;
    };
    let started = Instant::now();
    let result = (|| {
        let reference = call(|| hooks.target_generator(t, y, st)).map_err(|e| (LEVEL_HOOK_FAULT, format!("target_generator: {e}")))?;
        check_vector(&reference, STATE_DIM, "reference").map_err(|e| (LEVEL_INVALID_OUTPUT, e))?;
        row.reference = reference.clone();
        let estimate = call(|| hooks.state_estimator(t, y, &reference, st))
            .map_err(|e| (LEVEL_HOOK_FAULT, format!("state_estimator: {e}")))?;
        check_vector(&estimate, STATE_DIM, "estimate").map_err(|e| (LEVEL_INVALID_OUTPUT, e))?;
        row.estimate = estimate.clone();
        let u = call(|| hooks.mp_controller(t, &estimate, &reference, st))
            .map_err(|e| (LEVEL_HOOK_FAULT, format!("mp_controller: {e}")))?;
        check_vector(&u, INPUT_DIM, "input").map_err(|e| (LEVEL_INVALID_OUTPUT, e))?;
        Ok::<_, (u8, String)>(ControlInput::new(u[0], u[1]))
    })();
    row.solver_time = started.elapsed().as_secs_f64();
    match result {
        Ok(u) => row.input = u,
        Err((level, msg)) => row.events.push(fault(level, msg)),
    }
}

/// The simulation loop. Each finished sample is handed to `sink` together
/// with the next plant state; `deadline` is checked between samples.
fn simulate_rows(
    tc: &Testcase,
    hooks: &dyn ControllerHooks,
    opts: &SimOptions,
    deadline: Option<Instant>,
    sink: &mut dyn FnMut(Row, Option<CraneState>),
) {
    let params = plant_params(tc);
    let n = tc.samples();
    let view = public_view(tc);
    let mut setup_event = None;
    let mut cstate = match call(|| hooks.setup(&view)) {
        Ok(s) => Some(s),
        Err(e) => {
            setup_event = Some(ErrorEvent { level: LEVEL_HOOK_FAULT, sample: 0, description: format!("setup: {e}") });
            None
        }
    };
    let mut state = CraneState::at_rest(tc.start[0], tc.start[1]);
    for k in 0..=n {
        let t = k as f64 * tc.ts;
        let y = measure(tc, &state, k);
        let mut row = Row {
            t,
            state,
            measurement: y,
            estimate: vec![0.0; STATE_DIM],
            reference: vec![0.0; STATE_DIM],
            input: ControlInput::ZERO,
            solver_time: 0.0,
            events: setup_event.take().into_iter().collect(),
        };
        if deadline.is_some_and(|d| Instant::now() > d) {
            if cstate.take().is_some() {
                row.events.push(ErrorEvent {
                    level: LEVEL_WATCHDOG,
                    sample: k,
                    description: "watchdog budget exhausted".into(),
                });
            }
        } else {
            run_hooks(hooks, &mut cstate, k, t, &y, &mut row);
        }
        if k == n {
            sink(row, None);
            break;
        }
        let next = advance(&state, row.input, &params, opts, tc.ts);
        if let Some(msg) = plant_fault(&next) {
            row.events.push(ErrorEvent { level: LEVEL_INTEGRATION_FAULT, sample: k + 1, description: msg });
            sink(row, None);
            return;
        }
        sink(row, Some(next));
        state = next;
    }
}

/// Simulates one testcase. With a watchdog configured the hooks run on a
/// separate thread, so even a hook that never returns cannot hold the run
/// beyond its budget; the rest of the run then continues with zero input.
pub fn simulate(tc: &Testcase, hooks: Box<dyn ControllerHooks>, opts: &SimOptions) -> Trajectory {
    let params = plant_params(tc);
    let mut traj = Trajectory::empty(tc, params);
    let Some(budget) = opts.watchdog else {
        let mut truncated = true;
        simulate_rows(tc, hooks.as_ref(), opts, None, &mut |row, next| {
            truncated = next.is_none() && row_is_fault(&row);
            traj.push(row);
        });
        traj.truncated = truncated;
        return traj;
    };

    let deadline = Instant::now() + budget;
    let (tx, rx) = mpsc::channel::<(Row, Option<CraneState>)>();
    let tc_thread = tc.clone();
    let opts_thread = opts.clone();
    std::thread::spawn(move || {
        simulate_rows(&tc_thread, hooks.as_ref(), &opts_thread, Some(deadline), &mut |row, next| {
            let _ = tx.send((row, next));
        });
    });

    let n = tc.samples();
    let mut next_state = None;
    loop {
        let wait = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(wait) {
            Ok((row, next)) => {
                let fault = row_is_fault(&row);
                traj.push(row);
                match next {
                    Some(s) => next_state = Some(s),
                    None => {
                        traj.truncated = fault;
                        return traj;
                    }
                }
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                // The worker died outside any hook; treat like a stuck hook.
                break;
            }
            Err(mpsc::RecvTimeoutError::Timeout) => break,
        }
    }

    // Finish from the last known plant state with zero input.
    let mut k = traj.len();
    let mut state = next_state.unwrap_or_else(|| CraneState::at_rest(tc.start[0], tc.start[1]));
    let mut events = vec![ErrorEvent { level: LEVEL_WATCHDOG, sample: k, description: "watchdog budget exhausted".into() }];
    while k <= n {
        let row = Row {
            t: k as f64 * tc.ts,
            state,
            measurement: measure(tc, &state, k),
            estimate: vec![0.0; STATE_DIM],
            reference: vec![0.0; STATE_DIM],
            input: ControlInput::ZERO,
            solver_time: 0.0,
            events: std::mem::take(&mut events),
        };
        traj.push(row);
        if k == n {
            break;
        }
        let next = advance(&state, ControlInput::ZERO, &params, opts, tc.ts);
        if let Some(msg) = plant_fault(&next) {
            traj.error_events.push(ErrorEvent { level: LEVEL_INTEGRATION_FAULT, sample: k + 1, description: msg });
            traj.truncated = true;
            break;
        }
        state = next;
        k += 1;
    }
    traj
}

fn row_is_fault(row: &Row) -> bool {
    row.events.iter().any(|e| e.level == LEVEL_INTEGRATION_FAULT)
}

pub type HooksFactory<'a> = dyn Fn(&PublicTestcase) -> Box<dyn ControllerHooks> + Sync + 'a;

/// Simulates every testcase with fresh hooks from `factory`. Results come
/// back in suite order whatever the parallelism.
pub fn run_suite(suite: &[Testcase], factory: &HooksFactory<'_>, parallelism: usize, opts: &SimOptions) -> Vec<Trajectory> {
    let workers = parallelism.max(1).min(suite.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Trajectory>>> = Mutex::new(vec![None; suite.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= suite.len() {
                    break;
                }
                let tc = &suite[i];
                let traj = match call(|| Ok(factory(&public_view(tc)))) {
                    Ok(hooks) => simulate(tc, hooks, opts),
                    Err(e) => simulate(tc, Box::new(FailedFactory(e)), opts),
                };
                results.lock().expect("results lock")[i] = Some(traj);
            });
        }
    });
    results.into_inner().expect("results lock").into_iter().map(|t| t.expect("every testcase simulated")).collect()
}

/// Stands in for hooks whose construction panicked.
struct FailedFactory(String);

impl ControllerHooks for FailedFactory {
    fn setup(&self, _tc: &PublicTestcase) -> HookResult<ControllerState> {
        Err(format!("controller construction failed: {}", self.0).into())
    }
    fn target_generator(&self, _: f64, _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        unreachable!("setup always fails")
    }
    fn state_estimator(&self, _: f64, _: &[f64], _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        unreachable!("setup always fails")
    }
    fn mp_controller(&self, _: f64, _: &[f64], _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        unreachable!("setup always fails")
    }
}

/// Hooks that always return zero input and echo the measurement.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroController;

impl ControllerHooks for ZeroController {
    fn setup(&self, _tc: &PublicTestcase) -> HookResult<ControllerState> {
        Ok(Box::new(()))
    }
    fn target_generator(&self, _: f64, _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        Ok(vec![0.0; STATE_DIM])
    }
    fn state_estimator(&self, _: f64, y: &[f64], _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        Ok(vec![y[0], 0.0, y[1], 0.0, y[2], 0.0, y[3], 0.0])
    }
    fn mp_controller(&self, _: f64, _: &[f64], _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        Ok(vec![0.0; INPUT_DIM])
    }
}
