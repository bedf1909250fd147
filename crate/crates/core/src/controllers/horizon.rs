//! One receding-horizon QP: constraint rows from a guess trajectory,
//! condensing through the `mpc` builders, and the solve with a soft-slack
//! fallback. Shared by the linear controllers and the real-time iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::crane::{step_rk4, ControlInput, CraneParams, CraneState};
use crate::mpc::{
    build_blocking, build_cost, build_prediction_ltv, build_trajectory_constraints_staged, soften_constraints,
    BlockingSpec, CondensedCost, CostSpec, DiscreteModel, MpcError, Prediction, StageConstraint, TrajectoryConstraints,
};
use crate::numerics::qp::{solve_qp_warm, QpProblem, QpStatus};
use crate::regions::{ellipse_residual, rect_halfspaces, Point, Rect, Region};

/// A discrete-time plant model `x⁺ = f(x, u)`.
pub trait DiscreteMap {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// `(∂f/∂x, ∂f/∂u)`; central differences unless overridden.
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (nx, nu) = (self.nx(), self.nu());
        let mut a = DMatrix::zeros(nx, nx);
        let mut b = DMatrix::zeros(nx, nu);
        for j in 0..nx {
            let h = 1e-6 * x[j].abs().max(1.0);
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += h;
            xm[j] -= h;
            a.set_column(j, &((self.step(&xp, u) - self.step(&xm, u)) / (2.0 * h)));
        }
        for j in 0..nu {
            let h = 1e-6 * u[j].abs().max(1.0);
            let (mut up, mut um) = (u.clone(), u.clone());
            up[j] += h;
            um[j] -= h;
            b.set_column(j, &((self.step(x, &up) - self.step(x, &um)) / (2.0 * h)));
        }
        (a, b)
    }
}

/// The nonlinear crane over one sample, RK4 with `substeps` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct CraneRk4Map {
    pub params: CraneParams,
    pub ts: f64,
    pub substeps: usize,
}

impl DiscreteMap for CraneRk4Map {
    fn nx(&self) -> usize {
        8
    }
    fn nu(&self) -> usize {
        2
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let next = step_rk4(&CraneState::from_slice(x.as_slice()), &ControlInput::new(u[0], u[1]), &self.params, self.ts, self.substeps);
        DVector::from_column_slice(next.to_vector().as_slice())
    }
}

impl DiscreteMap for DiscreteModel<f64> {
    fn nx(&self) -> usize {
        self.a.nrows()
    }
    fn nu(&self) -> usize {
        self.b.ncols()
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone())
    }
}

/// How the payload position `x + l sin θ` enters the constraint rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadModel {
    /// `x + l θ`, independent of the guess.
    SmallAngle,
    /// First-order expansion of `x + l sin θ` at the guess angle.
    Linearized,
}

/// Geometry and limits turned into per-stage rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub region: Region,
    pub cable_length: f64,
    pub constrain_region: bool,
    pub constrain_payload: bool,
    pub payload_model: PayloadModel,
    /// Tightening applied to every region and obstacle row (m).
    pub margin: f64,
    pub input_limit: f64,
    /// Obstacles farther than this from the guess are left out (m).
    pub obstacle_range: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSpec {
    pub cost: CostSpec<f64>,
    pub constraints: ConstraintSpec,
    /// `(ρ₁, ρ₂)` when the region rows are always soft.
    pub soft: Option<[f64; 2]>,
    /// Slack weights for the fallback after an infeasible hard QP.
    pub fallback_soft: [f64; 2],
    pub blocking: Option<BlockingSpec>,
}

/// State and input sequences: `x` holds `x_0 … x_N`, `u` holds `u_0 … u_{N−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Guess {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

impl Guess {
    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    /// Drops the first stage and repeats the last input, extending the state
    /// sequence through `model`.
    pub fn shifted(&self, model: &dyn DiscreteMap) -> Guess {
        let mut u: Vec<_> = self.u[1..].to_vec();
        u.push(self.u.last().unwrap().clone());
        let mut x: Vec<_> = self.x[1..].to_vec();
        x.push(model.step(x.last().unwrap(), u.last().unwrap()));
        Guess { x, u }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// The hard problem was infeasible; the slack-relaxed problem was used.
    SoftFallback,
    /// No usable solution; zero input.
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    /// `u_0 … u_{N−1}`.
    pub inputs: Vec<DVector<f64>>,
    /// Predicted `x_0 … x_N` under the model used for condensing.
    pub states: Vec<DVector<f64>>,
    pub status: SolveStatus,
    pub active_set: Vec<usize>,
}

impl HorizonSolution {
    pub fn as_guess(&self) -> Guess {
        Guess { x: self.states.clone(), u: self.inputs.clone() }
    }
}

fn cart_pos(x: &DVector<f64>) -> Point {
    [x[0], x[2]]
}

/// Payload position at the guess and its row coefficients on the state.
fn payload_row(x: &DVector<f64>, l: f64, model: PayloadModel) -> (Point, [f64; 2], [f64; 2]) {
    match model {
        PayloadModel::SmallAngle => ([x[0] + l * x[4], x[2] + l * x[6]], [l, l], [0.0, 0.0]),
        PayloadModel::Linearized => {
            let (t, p) = (x[4], x[6]);
            let gain = [l * t.cos(), l * p.cos()];
            // p ≈ x + l sin θ̄ + l cos θ̄ (θ − θ̄) = x + gain·θ + bias
            let bias = [l * t.sin() - gain[0] * t, l * p.sin() - gain[1] * p];
            ([x[0] + l * t.sin(), x[2] + l * p.sin()], gain, bias)
        }
    }
}

/// Rectangle whose constraints apply at `p`: the one with the larger margin.
fn pick_rect(rects: &[Rect], p: Point) -> Rect {
    let mut best = rects[0];
    let mut margin = rects[0].signed_margin(p);
    for r in &rects[1..] {
        let m = r.signed_margin(p);
        if m > margin {
            best = *r;
            margin = m;
        }
    }
    best
}

/// Region rows `E x ≤ c` for one predicted state, built around its guess.
pub fn region_rows(spec: &ConstraintSpec, guess: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let nx = guess.len();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    if !spec.constrain_region {
        return (DMatrix::zeros(0, nx), DVector::zeros(0));
    }
    let rects = spec.region.rects();
    // Each subject: its position at the guess, the coefficients of its x and
    // y coordinates on (x, θ) and (y, ψ), and a constant bias.
    let mut subjects = vec![(cart_pos(guess), [0.0, 0.0], [0.0, 0.0])];
    if spec.constrain_payload {
        subjects.push(payload_row(guess, spec.cable_length, spec.payload_model));
    }
    for (p, gain, bias) in subjects {
        let emit = |a: [f64; 2], b: f64, rows: &mut Vec<(Vec<f64>, f64)>| {
            let mut e = vec![0.0; nx];
            e[0] = a[0];
            e[2] = a[1];
            e[4] = a[0] * gain[0];
            e[6] = a[1] * gain[1];
            rows.push((e, b - a[0] * bias[0] - a[1] * bias[1]));
        };
        for hs in rect_halfspaces(&pick_rect(&rects, p)) {
            emit(hs.a, hs.b - spec.margin, &mut rows);
        }
        for ob in spec.region.obstacles() {
            let dist = ((p[0] - ob.center[0]).powi(2) + (p[1] - ob.center[1]).powi(2)).sqrt()
                - ob.semi_axes[0].max(ob.semi_axes[1]);
            if dist > spec.obstacle_range {
                continue;
            }
            let (g, grad) = ellipse_residual(ob, p);
            let norm = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
            if norm < 1e-12 {
                continue;
            }
            // g(p̄) + ∇gᵀ(p − p̄) ≥ 0, scaled to meters: −n̂ᵀp ≤ (g − ∇gᵀp̄)/|∇g| − margin
            let a = [-grad[0] / norm, -grad[1] / norm];
            let b = (g - grad[0] * p[0] - grad[1] * p[1]) / norm - spec.margin;
            emit(a, b, &mut rows);
        }
    }
    let mut e = DMatrix::zeros(rows.len(), nx);
    let mut c = DVector::zeros(rows.len());
    for (i, (row, b)) in rows.into_iter().enumerate() {
        e.row_mut(i).copy_from_slice(&row);
        c[i] = b;
    }
    (e, c)
}

fn stack(v: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = v.iter().map(|x| x.len()).sum();
    let mut out = DVector::zeros(n);
    let mut r = 0;
    for x in v {
        out.rows_mut(r, x.len()).copy_from(x);
        r += x.len();
    }
    out
}

fn unstack(v: &DVector<f64>, block: usize) -> Vec<DVector<f64>> {
    (0..v.len() / block).map(|i| v.rows(i * block, block).into_owned()).collect()
}

/// Condensed data for one solve: `X = Φ x₀ + Γ U + offset`.
pub struct Condensed<'a> {
    pub pred: &'a Prediction<f64>,
    pub cost: &'a CondensedCost<f64>,
    pub offset: DVector<f64>,
}

/// Solves the horizon QP around `guess`. `refs` holds the state references
/// for `x_1 … x_N`, `u_ref` the input references for `u_0 … u_{N−1}`.
pub fn solve_horizon(
    cond: &Condensed<'_>,
    spec: &HorizonSpec,
    x0: &DVector<f64>,
    refs: &[DVector<f64>],
    u_ref: &[DVector<f64>],
    guess: &Guess,
    warm: &[usize],
) -> Result<HorizonSolution, MpcError> {
    let (nx, nu, n) = (cond.pred.nx, cond.pred.nu, cond.pred.horizon);
    if refs.len() != n || u_ref.len() != n || guess.x.len() != n + 1 {
        return Err(MpcError::Dimension("reference or guess length does not match the horizon".into()));
    }
    let free = &cond.pred.phi * x0 + &cond.offset;
    let r_bar_u_ref = {
        let mut v = DVector::zeros(n * nu);
        for (i, ur) in u_ref.iter().enumerate() {
            v.rows_mut(i * nu, nu).copy_from(&(&spec.cost.r * ur));
        }
        v
    };
    let f_full = cond.cost.tracking_linear_term(&free, &stack(refs)) - r_bar_u_ref;

    let mut region_stages = Vec::with_capacity(n);
    let mut input_stages = Vec::with_capacity(n);
    let lim = DVector::from_element(nu, spec.constraints.input_limit);
    for i in 0..n {
        let (e, c) = region_rows(&spec.constraints, &guess.x[i + 1]);
        let m = c.len();
        region_stages.push(StageConstraint::new(e, DMatrix::zeros(m, nu), c)?);
        input_stages.push(StageConstraint::input_box(nx, &(-&lim), &lim));
    }
    let region = build_trajectory_constraints_staged(&region_stages, None, cond.pred, Some(&cond.offset))?;
    let inputs = build_trajectory_constraints_staged(&input_stages, None, cond.pred, Some(&cond.offset))?;

    let t = spec.blocking.as_ref().map(|b| build_blocking::<f64>(b, nu));
    let (h, f, region, inputs) = match &t {
        Some(t) => (
            t.transpose() * &cond.cost.h * t,
            t.transpose() * &f_full,
            TrajectoryConstraints { g: &region.g * t, w: region.w.clone(), l: region.l.clone() },
            TrajectoryConstraints { g: &inputs.g * t, w: inputs.w.clone(), l: inputs.l.clone() },
        ),
        None => (cond.cost.h.clone(), f_full, region, inputs),
    };
    let nv = h.nrows();
    let expand = |v: DVector<f64>| match &t {
        Some(t) => t * v,
        None => v,
    };

    let soft_solve = |weights: [f64; 2]| -> Result<Option<(DVector<f64>, Vec<usize>)>, MpcError> {
        let soft = soften_constraints(&region, weights[0], weights[1])?;
        let qp = soft.qp(&h, &f, Some((&inputs.g, &inputs.rhs(x0))), x0);
        let sol = solve_qp_warm(&qp, &[]).map_err(|e| MpcError::InvalidArgument(e.to_string()))?;
        Ok((sol.status == QpStatus::Optimal).then(|| (sol.x_star.rows(0, nv).into_owned(), sol.active_set)))
    };

    let (v, status, active) = if let Some(w) = spec.soft {
        match soft_solve(w)? {
            Some((v, a)) => (v, SolveStatus::Optimal, a),
            None => (DVector::zeros(nv), SolveStatus::Failed, Vec::new()),
        }
    } else {
        let all = region.stack(&inputs);
        let qp = QpProblem::new(h.clone(), f.clone()).with_inequalities(all.g.clone(), all.rhs(x0));
        let sol = solve_qp_warm(&qp, warm).map_err(|e| MpcError::InvalidArgument(e.to_string()))?;
        if sol.status == QpStatus::Optimal {
            (sol.x_star, SolveStatus::Optimal, sol.active_set)
        } else {
            match soft_solve(spec.fallback_soft)? {
                Some((v, _)) => (v, SolveStatus::SoftFallback, Vec::new()),
                None => (DVector::zeros(nv), SolveStatus::Failed, Vec::new()),
            }
        }
    };
    let u = expand(v);
    let x = free + &cond.pred.gamma * &u;
    let mut states = vec![x0.clone()];
    states.extend(unstack(&x, nx));
    Ok(HorizonSolution { inputs: unstack(&u, nu), states, status, active_set: active })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtiOutput {
    pub input: DVector<f64>,
    pub solution: HorizonSolution,
    /// Warm start for the next sample: the solution shifted by one stage.
    pub next_guess: Guess,
}

/// One real-time iteration: linearize `model` along `guess` (with `x_0`
/// replaced by the current estimate), condense with the affine gap terms,
/// solve one QP and shift.
pub fn rti_step(
    model: &dyn DiscreteMap,
    x0: &DVector<f64>,
    refs: &[DVector<f64>],
    u_ref: &[DVector<f64>],
    guess: &Guess,
    spec: &HorizonSpec,
    warm: &[usize],
) -> Result<RtiOutput, MpcError> {
    let n = guess.horizon();
    if n == 0 || guess.x.len() != n + 1 {
        return Err(MpcError::Dimension("guess must hold N inputs and N + 1 states".into()));
    }
    let nx = model.nx();
    let mut a_seq = Vec::with_capacity(n);
    let mut b_seq = Vec::with_capacity(n);
    let mut gaps = Vec::with_capacity(n);
    for i in 0..n {
        let xi = if i == 0 { x0 } else { &guess.x[i] };
        let (a, b) = model.jacobians(xi, &guess.u[i]);
        // x⁺ ≈ f(x̄, ū) + A(x − x̄) + B(u − ū)
        gaps.push(model.step(xi, &guess.u[i]) - &a * xi - &b * &guess.u[i]);
        a_seq.push(a);
        b_seq.push(b);
    }
    let pred = build_prediction_ltv(&a_seq, &b_seq)?;
    let identity = vec![DMatrix::identity(nx, nx); n];
    let offset = &build_prediction_ltv(&a_seq, &identity)?.gamma * stack(&gaps);
    let cost = build_cost(&pred, &spec.cost)?;
    let cond = Condensed { pred: &pred, cost: &cost, offset };
    let solution = solve_horizon(&cond, spec, x0, refs, u_ref, guess, warm)?;
    let next_guess = solution.as_guess().shifted(model);
    Ok(RtiOutput { input: solution.inputs[0].clone(), solution, next_guess })
}
