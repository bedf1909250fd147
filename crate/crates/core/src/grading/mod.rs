//! Completion checking, work accounting, violation listing and marking.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crane::{payload_position, CraneParams, CraneState};
use crate::harness::Trajectory;
use crate::numerics::quad::{quad_simpson, quad_trapezoid};
use crate::regions::Point;
use crate::testcases::Testcase;

pub use report::{render_report, render_svg, violations_text, RenderOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumMode {
    /// Equilibrium must hold at the final sample `t = T_f`.
    #[default]
    FinalTime,
    /// Any single sample within `[0, T_f]` suffices.
    Legacy,
}

/// Infinity-norm errors at one sample, compared against the tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumErrors {
    pub cart: f64,
    pub payload: f64,
    pub rates: f64,
    pub inputs: f64,
}

impl EquilibriumErrors {
    pub fn at(traj: &Trajectory, k: usize, target: Point) -> Self {
        let s = &traj.true_states[k];
        let cart = s.cart_position();
        let payload = payload_position(s, &traj.plant_params);
        let u = traj.inputs[k];
        Self {
            cart: (cart[0] - target[0]).abs().max((cart[1] - target[1]).abs()),
            payload: (payload[0] - target[0]).abs().max((payload[1] - target[1]).abs()),
            rates: s.xdot.abs().max(s.ydot.abs()).max(s.thetadot.abs()).max(s.psidot.abs()),
            inputs: u.ux.abs().max(u.uy.abs()),
        }
    }

    /// Names of the bullets that fail.
    pub fn failing(&self, eps_t: f64, eps_r: f64) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !(self.cart <= eps_t) {
            out.push("cart");
        }
        if !(self.payload <= eps_t) {
            out.push("payload");
        }
        if !(self.rates <= eps_r) {
            out.push("rates");
        }
        if !(self.inputs <= eps_r) {
            out.push("inputs");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCheck {
    pub ok: bool,
    pub mode: EquilibriumMode,
    /// Sample the verdict refers to: the final sample, or in legacy mode the
    /// first sample at equilibrium.
    pub sample: Option<usize>,
    pub errors: Option<EquilibriumErrors>,
    pub failing: Vec<String>,
    /// Set when the trajectory is too short to judge.
    pub runtime_error: Option<String>,
}

pub fn check_equilibrium(traj: &Trajectory, tc: &Testcase, mode: EquilibriumMode) -> EquilibriumCheck {
    let n = tc.samples();
    if traj.truncated || traj.len() != n + 1 {
        return EquilibriumCheck {
            ok: false,
            mode,
            sample: None,
            errors: None,
            failing: vec!["runtime_error".into()],
            runtime_error: Some(format!("trajectory has {} of {} samples", traj.len(), n + 1)),
        };
    }
    let judge = |k: usize| {
        let e = EquilibriumErrors::at(traj, k, tc.target);
        (e, e.failing(tc.eps_t, tc.eps_r))
    };
    let (sample, (errors, failing)) = match mode {
        EquilibriumMode::FinalTime => (n, judge(n)),
        EquilibriumMode::Legacy => match (0..=n).find(|&k| judge(k).1.is_empty()) {
            Some(k) => (k, judge(k)),
            None => (n, judge(n)),
        },
    };
    EquilibriumCheck {
        ok: failing.is_empty(),
        mode,
        sample: Some(sample),
        errors: Some(errors),
        failing: failing.into_iter().map(String::from).collect(),
        runtime_error: None,
    }
}

/// Total absolute drive-force work `∫ |k ux ẋ| + |k uy ẏ| dt` from the
/// samples: Simpson for an even number of intervals, trapezoid otherwise.
pub fn compute_work(traj: &Trajectory, params: &CraneParams) -> f64 {
    let power: Vec<f64> = traj
        .true_states
        .iter()
        .zip(&traj.inputs)
        .map(|(s, u)| (params.force_gain * u.ux * s.xdot).abs() + (params.force_gain * u.uy * s.ydot).abs())
        .collect();
    if power.len() < 2 {
        return 0.0;
    }
    if power.len() % 2 == 1 {
        quad_simpson(&power, traj.ts).unwrap_or(0.0)
    } else {
        quad_trapezoid(&power, traj.ts).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Region,
    InputInterval,
    WorkBudget,
    Equilibrium,
    RuntimeError,
}

impl ViolationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationKind::Region => "region",
            ViolationKind::InputInterval => "input_interval",
            ViolationKind::WorkBudget => "work_budget",
            ViolationKind::Equilibrium => "equilibrium",
            ViolationKind::RuntimeError => "runtime_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Cart,
    Payload,
    Input,
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub subject: Subject,
    /// Time of the worst sample in the excursion.
    pub time: f64,
    pub magnitude: f64,
    pub first_sample: usize,
    pub last_sample: usize,
    pub description: String,
}

/// Groups samples with positive `excess` into contiguous excursions and
/// reports each with its peak.
fn excursions(excess: impl Iterator<Item = f64>, ts: f64, mut make: impl FnMut(usize, usize, usize, f64, f64) -> Violation) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut open: Option<(usize, usize, f64)> = None;
    let mut last = 0;
    for (k, e) in excess.enumerate() {
        last = k;
        if e > 0.0 {
            open = Some(match open {
                None => (k, k, e),
                Some((first, _, peak)) if e > peak => (first, k, e),
                Some(o) => o,
            });
        } else if let Some((first, peak_k, peak)) = open.take() {
            out.push(make(first, k - 1, peak_k, peak_k as f64 * ts, peak));
        }
    }
    if let Some((first, peak_k, peak)) = open {
        out.push(make(first, last, peak_k, peak_k as f64 * ts, peak));
    }
    out
}

/// Region excursions of cart and payload, input-interval excursions per
/// component, and one entry per runtime error event; checked at samples.
pub fn detect_violations(traj: &Trajectory, tc: &Testcase) -> Vec<Violation> {
    let mut out = Vec::new();
    let positions: [(Subject, Box<dyn Fn(&CraneState) -> Point>); 2] = [
        (Subject::Cart, Box::new(|s: &CraneState| s.cart_position())),
        (Subject::Payload, Box::new(|s: &CraneState| payload_position(s, &traj.plant_params))),
    ];
    for (subject, pos) in &positions {
        let excess = traj.true_states.iter().map(|s| {
            let p = pos(s);
            if tc.region.contains(p) {
                0.0
            } else {
                tc.region.signed_margin(p).abs().max(f64::MIN_POSITIVE)
            }
        });
        out.extend(excursions(excess, traj.ts, |first, last, _k, time, peak| Violation {
            kind: ViolationKind::Region,
            subject: *subject,
            time,
            magnitude: peak,
            first_sample: first,
            last_sample: last,
            description: format!("{subject:?} outside the region by up to {peak:.4} m").to_lowercase(),
        }));
    }
    for (name, get) in [("ux", (|u: &crate::crane::ControlInput| u.ux) as fn(&_) -> f64), ("uy", |u| u.uy)] {
        let excess = traj.inputs.iter().map(|u| {
            let v = get(u).abs() - 1.0;
            if v > 0.0 { v } else { 0.0 }
        });
        out.extend(excursions(excess, traj.ts, |first, last, _k, time, peak| Violation {
            kind: ViolationKind::InputInterval,
            subject: Subject::Input,
            time,
            magnitude: peak,
            first_sample: first,
            last_sample: last,
            description: format!("{name} outside [-1, 1] by up to {peak:.4}"),
        }));
    }
    for e in &traj.error_events {
        out.push(Violation {
            kind: ViolationKind::RuntimeError,
            subject: Subject::System,
            time: e.sample as f64 * traj.ts,
            magnitude: e.level as f64,
            first_sample: e.sample,
            last_sample: e.sample,
            description: format!("level {} error: {}", e.level, e.description),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub testcase: String,
    pub equilibrium_ok: bool,
    pub input_interval_ok: bool,
    pub work_ok: bool,
    pub constraints_ok: bool,
    pub overall_ok: bool,
    pub equilibrium: EquilibriumCheck,
    pub work: f64,
    pub w_max: f64,
    /// Largest `|u|` component over the run and when it occurred.
    pub peak_input: (f64, f64),
    /// Deepest region excursion `(magnitude, time)`, if any.
    pub worst_region: Option<(f64, f64)>,
    /// Every violation, including the work and equilibrium clauses.
    pub violations: Vec<Violation>,
}

pub fn check_completion(traj: &Trajectory, tc: &Testcase, params: &CraneParams, mode: EquilibriumMode) -> CompletionReport {
    let equilibrium = check_equilibrium(traj, tc, mode);
    let mut violations = detect_violations(traj, tc);
    let work = compute_work(traj, params);
    let work_ok = work <= tc.w_max;
    let input_interval_ok = !violations.iter().any(|v| v.kind == ViolationKind::InputInterval);
    let constraints_ok = !violations.iter().any(|v| matches!(v.kind, ViolationKind::Region | ViolationKind::RuntimeError));

    let mut peak_input = (0.0, 0.0);
    for (k, u) in traj.inputs.iter().enumerate() {
        let m = u.ux.abs().max(u.uy.abs());
        if m > peak_input.0 {
            peak_input = (m, k as f64 * traj.ts);
        }
    }
    let worst_region = violations
        .iter()
        .filter(|v| v.kind == ViolationKind::Region)
        .max_by(|a, b| a.magnitude.total_cmp(&b.magnitude))
        .map(|v| (v.magnitude, v.time));

    let last = traj.len().saturating_sub(1);
    if !work_ok {
        violations.push(Violation {
            kind: ViolationKind::WorkBudget,
            subject: Subject::System,
            time: last as f64 * traj.ts,
            magnitude: work - tc.w_max,
            first_sample: 0,
            last_sample: last,
            description: format!("work {work:.4} J exceeds budget {:.4} J", tc.w_max),
        });
    }
    if !equilibrium.ok {
        let excess = equilibrium
            .errors
            .map(|e| (e.cart - tc.eps_t).max(e.payload - tc.eps_t).max(e.rates - tc.eps_r).max(e.inputs - tc.eps_r))
            .unwrap_or(f64::INFINITY);
        let sample = equilibrium.sample.unwrap_or(last);
        violations.push(Violation {
            kind: ViolationKind::Equilibrium,
            subject: Subject::System,
            time: sample as f64 * traj.ts,
            magnitude: excess,
            first_sample: sample,
            last_sample: sample,
            description: match &equilibrium.runtime_error {
                Some(msg) => format!("no equilibrium verdict: {msg}"),
                None => format!("not at equilibrium at t = {:.3} s ({})", sample as f64 * traj.ts, equilibrium.failing.join(", ")),
            },
        });
    }
    CompletionReport {
        testcase: tc.name.clone(),
        equilibrium_ok: equilibrium.ok,
        input_interval_ok,
        work_ok,
        constraints_ok,
        overall_ok: equilibrium.ok && input_interval_ok && work_ok && constraints_ok,
        equilibrium,
        work,
        w_max: tc.w_max,
        peak_input,
        worst_region,
        violations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum of per-testcase marks.
    #[default]
    Sum,
    /// Mean of per-testcase marks.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rubric {
    pub max_marks_per_testcase: f64,
    /// Deduction per violation of each kind.
    pub weights: BTreeMap<ViolationKind, f64>,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for Rubric {
    fn default() -> Self {
        let weights = [
            (ViolationKind::Region, 2.0),
            (ViolationKind::InputInterval, 2.0),
            (ViolationKind::WorkBudget, 3.0),
            (ViolationKind::Equilibrium, 5.0),
            (ViolationKind::RuntimeError, 5.0),
        ]
        .into_iter()
        .collect();
        Self { max_marks_per_testcase: 10.0, weights, aggregation: Aggregation::Sum }
    }
}

impl Rubric {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.max_marks_per_testcase >= 0.0 && self.max_marks_per_testcase.is_finite()) {
            return Err("max_marks_per_testcase must be finite and nonnegative".into());
        }
        if let Some((k, w)) = self.weights.iter().find(|(_, w)| !(**w >= 0.0 && w.is_finite())) {
            return Err(format!("weight for {} must be finite and nonnegative, got {w}", k.as_str()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestcaseMarks {
    pub testcase: String,
    pub overall_ok: bool,
    pub marks: f64,
    pub max_marks: f64,
    pub deductions: BTreeMap<ViolationKind, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marks {
    pub testcases: Vec<TestcaseMarks>,
    pub aggregation: Aggregation,
    pub total: f64,
    pub max_total: f64,
}

/// Full marks minus the rubric weight for every violation, floored at zero.
pub fn score(reports: &[CompletionReport], rubric: &Rubric) -> Result<Marks, String> {
    rubric.validate()?;
    let testcases: Vec<TestcaseMarks> = reports
        .iter()
        .map(|r| {
            let mut deductions = BTreeMap::new();
            for v in &r.violations {
                *deductions.entry(v.kind).or_insert(0.0) += rubric.weights.get(&v.kind).copied().unwrap_or(0.0);
            }
            let lost: f64 = deductions.values().sum();
            TestcaseMarks {
                testcase: r.testcase.clone(),
                overall_ok: r.overall_ok,
                marks: (rubric.max_marks_per_testcase - lost).max(0.0),
                max_marks: rubric.max_marks_per_testcase,
                deductions,
            }
        })
        .collect();
    let sum: f64 = testcases.iter().map(|t| t.marks).sum();
    let n = testcases.len() as f64;
    let (total, max_total) = match rubric.aggregation {
        Aggregation::Sum => (sum, rubric.max_marks_per_testcase * n),
        Aggregation::Mean if n > 0.0 => (sum / n, rubric.max_marks_per_testcase),
        Aggregation::Mean => (0.0, rubric.max_marks_per_testcase),
    };
    Ok(Marks { testcases, aggregation: rubric.aggregation, total, max_total })
}
