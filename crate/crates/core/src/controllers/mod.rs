//! Reference controller corpus: unconstrained LQR, hard- and soft-constrained
//! linear MPC, offset-free MPC, move blocking and a real-time-iteration
//! nonlinear MPC, all behind the harness hooks.

mod horizon;
mod reference;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crane::{linearize, CraneParams, CraneState, INPUT_DIM, OUTPUT_DIM, STATE_DIM};
use crate::harness::{downcast_state, ControllerHooks, ControllerState, HookResult};
use crate::mpc::{
    build_cost, build_prediction, discretize_zoh, kalman_step, offset_free_augment, riccati_lqr, BlockingSpec,
    CondensedCost, CostSpec, DiscreteModel, Gaussian, MpcError, Prediction,
};
use crate::planner::{PlannerError, PlannerOptions};
use crate::regions::{Point, Region};
use crate::testcases::PublicTestcase;

pub use horizon::{
    region_rows, rti_step, solve_horizon, Condensed, ConstraintSpec, CraneRk4Map, DiscreteMap, Guess,
    HorizonSolution, HorizonSpec, PayloadModel, RtiOutput, SolveStatus,
};
pub use reference::ReferencePath;

/// Via points from `start` to `target` on a grid of `cell_size`, each with
/// at least `clearance` of signed margin.
pub fn plan_path(
    region: &Region,
    start: Point,
    target: Point,
    n_via: usize,
    cell_size: f64,
    clearance: f64,
) -> Result<Vec<Point>, PlannerError> {
    crate::planner::plan_path(region, start, target, &PlannerOptions { cell_size, clearance, n_via })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    LqrUnconstrained,
    LinearHard,
    LinearSoft,
    OffsetFree,
    MoveBlocked,
    NmpcRti,
}

impl Formulation {
    pub const ALL: [Formulation; 6] = [
        Formulation::LqrUnconstrained,
        Formulation::LinearHard,
        Formulation::LinearSoft,
        Formulation::OffsetFree,
        Formulation::MoveBlocked,
        Formulation::NmpcRti,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Formulation::LqrUnconstrained => "lqr_unconstrained",
            Formulation::LinearHard => "linear_hard",
            Formulation::LinearSoft => "linear_soft",
            Formulation::OffsetFree => "offset_free",
            Formulation::MoveBlocked => "move_blocked",
            Formulation::NmpcRti => "nmpc_rti",
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Formulation {
    type Err = ControllerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| ControllerError::Invalid(format!("unknown controller `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCost {
    /// Stationary Riccati solution for `(Q, R)`.
    Riccati,
    /// Same weight as the stages.
    Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub formulation: Formulation,
    pub horizon: usize,
    /// Diagonal of `Q` over `(x, ẋ, y, ẏ, θ, θ̇, ψ, ψ̇)`.
    pub q_diag: [f64; STATE_DIM],
    pub r_diag: [f64; INPUT_DIM],
    pub terminal: TerminalCost,
    pub constrain_payload: bool,
    /// Tightening of region and obstacle rows (m).
    pub region_margin: f64,
    pub input_limit: f64,
    /// Slack weights `(ρ₁, ρ₂)` for `linear_soft`.
    pub soft_weights: [f64; 2],
    /// Slack weights used when a hard QP turns out infeasible.
    pub fallback_soft_weights: [f64; 2],
    /// Block lengths for `move_blocked`; must sum to the horizon.
    pub blocking: Option<Vec<usize>>,
    /// Kalman filter when set, finite-difference velocities otherwise.
    pub estimator: bool,
    pub process_noise_std: f64,
    pub measurement_noise_std: f64,
    pub disturbance_noise_std: f64,
    /// Route the reference around obstacles with the grid planner; a
    /// straight line otherwise.
    pub planner: bool,
    pub planner_cell: f64,
    pub planner_clearance: f64,
    pub n_via: usize,
    /// Fraction of `T_f` at which the reference reaches the target.
    pub arrival_fraction: f64,
    pub obstacle_range: f64,
    /// RK4 substeps of the prediction model in `nmpc_rti`.
    pub rti_substeps: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self::reference(Formulation::LinearHard)
    }
}

impl ControllerConfig {
    /// Tuned defaults for each formulation.
    pub fn reference(formulation: Formulation) -> Self {
        let mut c = Self {
            formulation,
            horizon: 30,
            q_diag: [50.0, 5.0, 50.0, 5.0, 50.0, 5.0, 50.0, 5.0],
            r_diag: [0.01, 0.01],
            terminal: TerminalCost::Riccati,
            constrain_payload: true,
            region_margin: 0.005,
            input_limit: 1.0,
            soft_weights: [100.0, 1000.0],
            fallback_soft_weights: [1000.0, 10000.0],
            blocking: None,
            estimator: true,
            process_noise_std: 1e-3,
            measurement_noise_std: 1e-4,
            disturbance_noise_std: 1e-2,
            planner: true,
            planner_cell: 0.01,
            planner_clearance: 0.04,
            n_via: 24,
            arrival_fraction: 0.6,
            obstacle_range: 0.3,
            rti_substeps: 4,
        };
        match formulation {
            Formulation::LqrUnconstrained => c.planner = false,
            Formulation::MoveBlocked => {
                c.blocking = Some([vec![1; 10], vec![2; 5], vec![5; 2]].concat());
            }
            _ => {}
        }
        c
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: &str| Err(ControllerError::Invalid(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.q_diag.iter().any(|q| !(*q >= 0.0)) || self.r_diag.iter().any(|r| !(*r > 0.0)) {
            return bad("Q must be nonnegative and R positive");
        }
        if !(self.input_limit > 0.0) || !(self.region_margin >= 0.0) {
            return bad("input limit must be positive and margins nonnegative");
        }
        if self.formulation == Formulation::MoveBlocked {
            match &self.blocking {
                None => return bad("move_blocked needs a blocking spec"),
                Some(b) => {
                    if b.contains(&0) || b.iter().sum::<usize>() != self.horizon {
                        return bad("block lengths must be positive and sum to the horizon");
                    }
                }
            }
        }
        if self.formulation == Formulation::LinearSoft && self.soft_weights.iter().all(|w| *w == 0.0) {
            return bad("linear_soft needs a positive slack weight");
        }
        if !(self.arrival_fraction > 0.0 && self.arrival_fraction <= 1.0) {
            return bad("arrival fraction must lie in (0, 1]");
        }
        if self.planner && !(self.planner_cell > 0.0) {
            return bad("planner cell size must be positive");
        }
        Ok(())
    }
}

/// Built-in controllers by name.
pub fn corpus() -> Vec<(&'static str, ControllerConfig)> {
    Formulation::ALL.iter().map(|f| (f.as_str(), ControllerConfig::reference(*f))).collect()
}

pub fn corpus_config(name: &str) -> Option<ControllerConfig> {
    corpus().into_iter().find(|(n, _)| *n == name).map(|(_, c)| c)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("invalid controller configuration: {0}")]
    Invalid(String),
    #[error("{formulation} cannot handle this testcase: {reason}")]
    Incompatible { formulation: Formulation, reason: String },
    #[error("no reference path: {0}; try a finer planner grid or a smaller clearance")]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
}

/// Checks the configuration against the testcase and returns hooks whose
/// `setup` does all offline work.
pub fn make_controller(config: &ControllerConfig, tc: &PublicTestcase) -> Result<Box<dyn ControllerHooks>, ControllerError> {
    config.validate()?;
    let has_obstacles = !tc.region.obstacles().is_empty();
    let linear = config.formulation != Formulation::NmpcRti;
    if has_obstacles && linear && !config.planner {
        return Err(ControllerError::Incompatible {
            formulation: config.formulation,
            reason: "elliptical obstacles need nmpc_rti or a planned corridor (planner on)".into(),
        });
    }
    // Surface planner failures now rather than as a hook fault.
    MpcState::new(config, tc)?;
    Ok(Box::new(MpcController { config: config.clone() }))
}

/// Hooks for any configuration in the corpus.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub config: ControllerConfig,
}

impl MpcController {
    pub fn new(config: ControllerConfig) -> Self {
        Self { config }
    }
}

enum Estimator {
    Kalman { model: DiscreteModel<f64>, process: DMatrix<f64>, measurement: DMatrix<f64>, belief: Gaussian<f64> },
    FiniteDifference { previous: Option<[f64; OUTPUT_DIM]>, ts: f64 },
}

/// Everything a controller carries between samples.
pub struct MpcState {
    config: ControllerConfig,
    ts: f64,
    reference: ReferencePath,
    model: DiscreteModel<f64>,
    prediction: Prediction<f64>,
    condensed: CondensedCost<f64>,
    spec: HorizonSpec,
    lqr_gain: DMatrix<f64>,
    rti_model: CraneRk4Map,
    estimator: Estimator,
    disturbance: DVector<f64>,
    guess: Guess,
    warm: Vec<usize>,
    last_input: DVector<f64>,
    /// Samples where no usable QP solution was found.
    pub failed_solves: usize,
    pub soft_fallbacks: usize,
}

impl MpcState {
    pub fn new(config: &ControllerConfig, tc: &PublicTestcase) -> Result<Self, ControllerError> {
        let params: CraneParams = tc.params;
        let n = config.horizon;
        let lin = linearize(&params, &CraneState::default()).map_err(|e| ControllerError::Invalid(e.to_string()))?;
        let model = discretize_zoh(&lin.a, &lin.b, &lin.c, tc.ts)?;
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&config.q_diag));
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(&config.r_diag));
        let lqr = riccati_lqr(&model, &q, &r, 1e-10, 100_000)?;
        let p = match config.terminal {
            TerminalCost::Riccati => lqr.p.clone(),
            TerminalCost::Stage => q.clone(),
        };
        let cost = CostSpec::new(q, r, p)?;
        let prediction = build_prediction(&model, n)?;
        let condensed = build_cost(&prediction, &cost)?;

        let points = if config.planner {
            // Narrow passages: relax the clearance before giving up.
            let mut clearance = config.planner_clearance;
            loop {
                match plan_path(&tc.region, tc.start, tc.target, config.n_via, config.planner_cell, clearance) {
                    Ok(p) => break p,
                    Err(PlannerError::NoRoute) if clearance > 0.25 * config.planner_clearance => clearance *= 0.5,
                    Err(e) => return Err(e.into()),
                }
            }
        } else {
            vec![tc.start, tc.target]
        };
        let reference = ReferencePath::new(points, config.arrival_fraction * tc.t_final);

        let blocking = match &config.blocking {
            Some(b) if config.formulation == Formulation::MoveBlocked => Some(BlockingSpec::new(b.clone())?),
            _ => None,
        };
        let spec = HorizonSpec {
            cost,
            constraints: ConstraintSpec {
                region: tc.region.clone(),
                cable_length: params.cable_length,
                constrain_region: config.formulation != Formulation::LqrUnconstrained,
                constrain_payload: config.constrain_payload,
                payload_model: if config.formulation == Formulation::NmpcRti {
                    PayloadModel::Linearized
                } else {
                    PayloadModel::SmallAngle
                },
                margin: config.region_margin,
                input_limit: config.input_limit,
                obstacle_range: config.obstacle_range,
            },
            soft: (config.formulation == Formulation::LinearSoft).then_some(config.soft_weights),
            fallback_soft: config.fallback_soft_weights,
            blocking,
        };

        let start = CraneState::at_rest(tc.start[0], tc.start[1]).to_vector();
        let start = DVector::from_column_slice(start.as_slice());
        let offset_free = config.formulation == Formulation::OffsetFree;
        let estimator = if config.estimator || offset_free {
            let kf_model = if offset_free { offset_free_augment(&model, &model.b, &DMatrix::zeros(OUTPUT_DIM, INPUT_DIM))? } else { model.clone() };
            let nk = kf_model.nx();
            let mut process = DMatrix::from_diagonal_element(nk, nk, config.process_noise_std.powi(2));
            let mut prior = DMatrix::from_diagonal_element(nk, nk, 1e-6);
            for i in STATE_DIM..nk {
                process[(i, i)] = config.disturbance_noise_std.powi(2);
                prior[(i, i)] = 1e-2;
            }
            let mut mean = DVector::zeros(nk);
            mean.rows_mut(0, STATE_DIM).copy_from(&start);
            Estimator::Kalman {
                model: kf_model,
                process,
                measurement: DMatrix::from_diagonal_element(OUTPUT_DIM, OUTPUT_DIM, config.measurement_noise_std.powi(2)),
                belief: Gaussian { mean, cov: prior },
            }
        } else {
            Estimator::FiniteDifference { previous: None, ts: tc.ts }
        };

        let guess = Guess {
            x: (0..=n).map(|i| DVector::from_column_slice(&reference.state_at(i as f64 * tc.ts))).collect(),
            u: vec![DVector::zeros(INPUT_DIM); n],
        };
        Ok(Self {
            config: config.clone(),
            ts: tc.ts,
            reference,
            model,
            prediction,
            condensed,
            spec,
            lqr_gain: lqr.k,
            rti_model: CraneRk4Map { params, ts: tc.ts, substeps: config.rti_substeps.max(1) },
            estimator,
            disturbance: DVector::zeros(INPUT_DIM),
            guess,
            warm: Vec::new(),
            last_input: DVector::zeros(INPUT_DIM),
            failed_solves: 0,
            soft_fallbacks: 0,
        })
    }

    pub fn reference(&self) -> &ReferencePath {
        &self.reference
    }

    pub fn model(&self) -> &DiscreteModel<f64> {
        &self.model
    }

    pub fn horizon_spec(&self) -> &HorizonSpec {
        &self.spec
    }

    pub fn guess(&self) -> &Guess {
        &self.guess
    }

    /// Current disturbance estimate (offset-free only, zero otherwise).
    pub fn disturbance(&self) -> &DVector<f64> {
        &self.disturbance
    }

    pub fn estimate(&mut self, y: &[f64]) -> Result<DVector<f64>, MpcError> {
        let y4: [f64; OUTPUT_DIM] = [y[0], y[1], y[2], y[3]];
        match &mut self.estimator {
            Estimator::Kalman { model, process, measurement, belief } => {
                let mut u = self.last_input.clone();
                if model.nx() > STATE_DIM {
                    // The filter's input channel excludes the disturbance it estimates.
                    u = u.rows(0, INPUT_DIM).into_owned();
                }
                *belief = kalman_step(model, process, measurement, belief, &u, &DVector::from_column_slice(&y4))?;
                if belief.mean.len() > STATE_DIM {
                    self.disturbance = belief.mean.rows(STATE_DIM, INPUT_DIM).into_owned();
                }
                Ok(belief.mean.rows(0, STATE_DIM).into_owned())
            }
            Estimator::FiniteDifference { previous, ts } => {
                let rate = |i: usize| previous.map_or(0.0, |p| (y4[i] - p[i]) / *ts);
                let x = DVector::from_column_slice(&[y4[0], rate(0), y4[1], rate(1), y4[2], rate(2), y4[3], rate(3)]);
                *previous = Some(y4);
                Ok(x)
            }
        }
    }

    pub fn control(&mut self, t: f64, x_hat: &DVector<f64>, reference: &DVector<f64>) -> Result<DVector<f64>, MpcError> {
        let n = self.config.horizon;
        let u = if self.config.formulation == Formulation::LqrUnconstrained {
            -&self.lqr_gain * (x_hat - reference)
        } else {
            let refs: Vec<DVector<f64>> =
                (1..=n).map(|i| DVector::from_column_slice(&self.reference.state_at(t + i as f64 * self.ts))).collect();
            let u_ref = vec![-&self.disturbance; n];
            let mut guess = self.guess.clone();
            guess.x[0] = x_hat.clone();
            let solution = if self.config.formulation == Formulation::NmpcRti {
                rti_step(&self.rti_model, x_hat, &refs, &u_ref, &guess, &self.spec, &self.warm)?.solution
            } else {
                let gamma_d = &self.prediction.gamma * DVector::from_fn(n * INPUT_DIM, |i, _| self.disturbance[i % INPUT_DIM]);
                let cond = Condensed { pred: &self.prediction, cost: &self.condensed, offset: gamma_d };
                solve_horizon(&cond, &self.spec, x_hat, &refs, &u_ref, &guess, &self.warm)?
            };
            match solution.status {
                SolveStatus::Optimal => {}
                SolveStatus::SoftFallback => self.soft_fallbacks += 1,
                SolveStatus::Failed => self.failed_solves += 1,
            }
            self.warm = solution.active_set.clone();
            let shift_model: &dyn DiscreteMap =
                if self.config.formulation == Formulation::NmpcRti { &self.rti_model } else { &self.model };
            self.guess = solution.as_guess().shifted(shift_model);
            solution.inputs[0].clone()
        };
        self.last_input = u.clone();
        Ok(u)
    }
}

impl ControllerHooks for MpcController {
    fn setup(&self, tc: &PublicTestcase) -> HookResult<ControllerState> {
        Ok(Box::new(MpcState::new(&self.config, tc)?))
    }

    fn target_generator(&self, t: f64, _measurement: &[f64], state: &mut ControllerState) -> HookResult<Vec<f64>> {
        Ok(downcast_state::<MpcState>(state)?.reference.state_at(t).to_vec())
    }

    fn state_estimator(&self, _t: f64, measurement: &[f64], _reference: &[f64], state: &mut ControllerState) -> HookResult<Vec<f64>> {
        let st = downcast_state::<MpcState>(state)?;
        Ok(st.estimate(measurement)?.iter().copied().collect())
    }

    fn mp_controller(&self, t: f64, estimate: &[f64], reference: &[f64], state: &mut ControllerState) -> HookResult<Vec<f64>> {
        let st = downcast_state::<MpcState>(state)?;
        let u = st.control(t, &DVector::from_column_slice(estimate), &DVector::from_column_slice(reference))?;
        Ok(u.iter().copied().collect())
    }
}
