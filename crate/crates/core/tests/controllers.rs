use nalgebra::{DMatrix, DVector};

use cranebench::controllers::{
    make_controller, plan_path, region_rows, rti_step, solve_horizon, Condensed, ConstraintSpec, ControllerConfig,
    ControllerError, Formulation, Guess, HorizonSpec, PayloadModel,
};
use cranebench::crane::{linearize, CraneParams, CraneState};
use cranebench::harness::{simulate, SimOptions, Trajectory};
use cranebench::mpc::{build_cost, build_prediction, discretize_zoh, riccati_lqr, CostSpec, DiscreteModel};
use cranebench::regions::{ellipse_residual, Ellipse, Point, Rect, Region};
use cranebench::testcases::{default_testcase, public_view, ShapeFamily, Testcase};

fn crane_model() -> DiscreteModel<f64> {
    let lin = linearize(&CraneParams::nominal(), &CraneState::default()).unwrap();
    discretize_zoh(&lin.a, &lin.b, &lin.c, 0.05).unwrap()
}

fn run(tc: &Testcase, config: &ControllerConfig) -> Trajectory {
    let hooks = make_controller(config, &public_view(tc)).unwrap();
    simulate(tc, hooks, &SimOptions::default())
}

fn max_input_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.inputs.iter().zip(&b.inputs).map(|(p, q)| (p.ux - q.ux).abs().max((p.uy - q.uy).abs())).fold(0.0, f64::max)
}

fn horizon_spec(model: &DiscreteModel<f64>, region: Region, payload_model: PayloadModel) -> HorizonSpec {
    let cfg = ControllerConfig::default();
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.q_diag));
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.r_diag));
    let p = riccati_lqr(model, &q, &r, 1e-10, 10_000).unwrap().p;
    HorizonSpec {
        cost: CostSpec::new(q, r, p).unwrap(),
        constraints: ConstraintSpec {
            region,
            cable_length: CraneParams::nominal().cable_length,
            constrain_region: true,
            constrain_payload: true,
            payload_model,
            margin: 0.005,
            input_limit: 1.0,
            obstacle_range: 0.3,
        },
        soft: None,
        fallback_soft: [1e3, 1e4],
        blocking: None,
    }
}

/// A guess from the zero-input rollout of `model`.
fn rollout_guess(model: &DiscreteModel<f64>, x0: &DVector<f64>, n: usize) -> Guess {
    let mut x = vec![x0.clone()];
    for _ in 0..n {
        x.push(&model.a * x.last().unwrap());
    }
    Guess { x, u: vec![DVector::zeros(2); n] }
}

fn target_refs(tc: &Testcase, n: usize) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut r = DVector::zeros(8);
    r[0] = tc.target[0];
    r[2] = tc.target[1];
    (vec![r; n], vec![DVector::zeros(2); n])
}

#[test]
fn rti_on_a_linear_model_reproduces_the_linear_qp() {
    let model = crane_model();
    let tc = default_testcase(ShapeFamily::Wedge);
    let spec = horizon_spec(&model, tc.region.clone(), PayloadModel::SmallAngle);
    let n = 20;
    let mut x0 = DVector::zeros(8);
    x0[0] = tc.start[0];
    x0[2] = tc.start[1];
    let guess = rollout_guess(&model, &x0, n);
    let (refs, u_ref) = target_refs(&tc, n);

    let pred = build_prediction(&model, n).unwrap();
    let cost = build_cost(&pred, &spec.cost).unwrap();
    let cond = Condensed { pred: &pred, cost: &cost, offset: DVector::zeros(8 * n) };
    let linear = solve_horizon(&cond, &spec, &x0, &refs, &u_ref, &guess, &[]).unwrap();
    let rti = rti_step(&model, &x0, &refs, &u_ref, &guess, &spec, &[]).unwrap();
    assert!(!linear.active_set.is_empty(), "the instance should have active constraints");
    for (a, b) in linear.inputs.iter().zip(&rti.solution.inputs) {
        assert!((a - b).amax() <= 1e-8);
    }
}

#[test]
fn rti_is_a_fixed_point_at_the_optimum() {
    let model = crane_model();
    let tc = default_testcase(ShapeFamily::Wedge);
    let spec = horizon_spec(&model, tc.region.clone(), PayloadModel::SmallAngle);
    let n = 20;
    let mut x0 = DVector::zeros(8);
    x0[0] = tc.start[0];
    x0[2] = tc.start[1];
    let (refs, u_ref) = target_refs(&tc, n);
    let first = rti_step(&model, &x0, &refs, &u_ref, &rollout_guess(&model, &x0, n), &spec, &[]).unwrap();
    let second = rti_step(&model, &x0, &refs, &u_ref, &first.solution.as_guess(), &spec, &first.solution.active_set).unwrap();
    assert!((first.input - second.input).amax() <= 1e-8);
}

#[test]
fn linearized_ellipse_row_matches_finite_differences() {
    let obstacle = Ellipse::new([0.5, 0.4], [0.1, 0.05], 0.6);
    let region = Region::RectMinusObstacles { rect: Rect::axis_aligned([0.5, 0.5], [0.5, 0.5]), obstacles: vec![obstacle] };
    let model = crane_model();
    let mut spec = horizon_spec(&model, region, PayloadModel::SmallAngle).constraints;
    spec.constrain_payload = false;
    spec.margin = 0.0;
    let h = 1e-6;
    for p in [[0.7, 0.4], [0.5, 0.55], [0.38, 0.3], [0.62, 0.52]] {
        let mut guess = DVector::zeros(8);
        guess[0] = p[0];
        guess[2] = p[1];
        let (e, c) = region_rows(&spec, &guess);
        assert_eq!(e.nrows(), 5, "four rectangle rows and one obstacle row");
        let g = |q: Point| ellipse_residual(&obstacle, q).0;
        let fd = [(g([p[0] + h, p[1]]) - g([p[0] - h, p[1]])) / (2.0 * h), (g([p[0], p[1] + h]) - g([p[0], p[1] - h])) / (2.0 * h)];
        let norm = fd[0].hypot(fd[1]);
        assert!((e[(4, 0)] + fd[0] / norm).abs() <= 1e-6);
        assert!((e[(4, 2)] + fd[1] / norm).abs() <= 1e-6);
        // The guess point lies exactly on the linearized boundary shifted by g/|∇g|.
        let slack = c[4] - (e[(4, 0)] * p[0] + e[(4, 2)] * p[1]);
        assert!((slack - g(p) / norm).abs() <= 1e-9);
    }
}

fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum()
}

#[test]
fn planner_threads_a_two_wall_maze_near_the_optimum() {
    // Wall 1 rises from the floor at x = 1 leaving a gap above y = 0.75;
    // wall 2 hangs from the ceiling at x = 1.5 leaving a gap below y = 0.25.
    let region = Region::RectMinusObstacles {
        rect: Rect::axis_aligned([1.0, 0.5], [1.0, 0.5]),
        obstacles: vec![Ellipse::new([1.0, 0.3], [0.05, 0.45], 0.0), Ellipse::new([1.5, 0.7], [0.05, 0.45], 0.0)],
    };
    let (start, goal) = ([0.3, 0.5], [1.8, 0.5]);
    let path = plan_path(&region, start, goal, 32, 0.01, 0.03).unwrap();
    assert!(path.iter().all(|p| region.contains(*p)));
    // Hand-computed optimum through the gap corners (1, 0.75) and (1.5, 0.25).
    let optimum = polyline_length(&[start, [1.0, 0.75], [1.5, 0.25], goal]);
    let length = polyline_length(&path);
    assert!(length >= optimum - 1e-9, "{length} shorter than the optimum {optimum}");
    assert!(length <= 1.5 * optimum, "{length} vs optimum {optimum}");
}

#[test]
fn planner_without_obstacles_is_a_straight_line() {
    let region = Region::SingleRect { rect: Rect::axis_aligned([0.0, 0.0], [1.0, 1.0]) };
    let path = plan_path(&region, [-0.5, -0.5], [0.5, 0.4], 10, 0.02, 0.05).unwrap();
    assert_eq!(path.len(), 10);
    for p in &path {
        // Collinear with the segment start → goal.
        let cross = (p[0] + 0.5) * 0.9 - (p[1] + 0.5) * 1.0;
        assert!(cross.abs() < 1e-9);
    }
}

#[test]
fn move_blocking_with_unit_blocks_equals_linear_hard() {
    let tc = default_testcase(ShapeFamily::Wedge);
    let hard = ControllerConfig::reference(Formulation::LinearHard);
    let blocked = ControllerConfig {
        formulation: Formulation::MoveBlocked,
        blocking: Some(vec![1; hard.horizon]),
        ..hard.clone()
    };
    let a = run(&tc, &hard);
    let b = run(&tc, &blocked);
    assert!(max_input_gap(&a, &b) <= 1e-9);
}

#[test]
fn soft_equals_hard_when_constraints_never_bind() {
    let mut tc = default_testcase(ShapeFamily::Wedge);
    tc.region = Region::SingleRect { rect: Rect::axis_aligned([0.5, 0.1], [2.0, 2.0]) };
    tc.start = [0.3, 0.1];
    tc.target = [0.6, 0.15];
    let hard = run(&tc, &ControllerConfig::reference(Formulation::LinearHard));
    let soft = run(&tc, &ControllerConfig::reference(Formulation::LinearSoft));
    assert!(max_input_gap(&hard, &soft) <= 1e-6);
}

#[test]
fn reference_controllers_run_clean_on_compatible_defaults() {
    let mut pairs = Vec::new();
    for family in ShapeFamily::ALL {
        for f in [Formulation::LinearHard, Formulation::OffsetFree, Formulation::MoveBlocked, Formulation::NmpcRti] {
            pairs.push((family, f));
        }
    }
    pairs.push((ShapeFamily::Wedge, Formulation::LqrUnconstrained));
    pairs.push((ShapeFamily::Wedge, Formulation::LinearSoft));
    for (family, formulation) in pairs {
        let tc = default_testcase(family);
        let traj = run(&tc, &ControllerConfig::reference(formulation));
        assert_eq!(traj.len(), tc.samples() + 1, "{formulation} on {family}");
        assert!(traj.error_events.is_empty(), "{formulation} on {family}: {:?}", traj.error_events);
    }
}

#[test]
fn unconstrained_lqr_rejects_obstacle_testcases() {
    let tc = default_testcase(ShapeFamily::RegionEllipses);
    let err = make_controller(&ControllerConfig::reference(Formulation::LqrUnconstrained), &public_view(&tc)).err().unwrap();
    assert!(matches!(err, ControllerError::Incompatible { .. }), "{err}");
}

#[test]
fn lqr_controller_is_a_static_gain() {
    // With a time-invariant reference the input is an affine function of
    // the estimate: doubling the offset doubles the input change.
    let tc = default_testcase(ShapeFamily::Wedge);
    let cfg = ControllerConfig::reference(Formulation::LqrUnconstrained);
    let hooks = make_controller(&cfg, &public_view(&tc)).unwrap();
    let mut state = hooks.setup(&public_view(&tc)).unwrap();
    let t = tc.t_final;
    let r = hooks.target_generator(t, &[0.0; 4], &mut state).unwrap();
    let u = |dx: f64, state: &mut _| {
        let mut x = r.clone();
        x[0] += dx;
        hooks.mp_controller(t, &x, &r, state).unwrap()
    };
    let (u0, u1, u2) = (u(0.0, &mut state), u(0.01, &mut state), u(0.02, &mut state));
    for i in 0..2 {
        assert!(((u2[i] - u0[i]) - 2.0 * (u1[i] - u0[i])).abs() < 1e-12);
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let tc = default_testcase(ShapeFamily::Wedge);
    let view = public_view(&tc);
    let bad = [
        ControllerConfig { horizon: 0, ..ControllerConfig::default() },
        ControllerConfig { r_diag: [0.0, 0.01], ..ControllerConfig::default() },
        ControllerConfig { blocking: Some(vec![1, 2]), ..ControllerConfig::reference(Formulation::MoveBlocked) },
    ];
    for cfg in bad {
        assert!(matches!(make_controller(&cfg, &view).err(), Some(ControllerError::Invalid(_))));
    }
}
