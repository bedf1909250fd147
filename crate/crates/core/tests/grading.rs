use std::collections::BTreeMap;
use std::fs;

use cranebench::controllers::{make_controller, ControllerConfig, Formulation};
use cranebench::crane::{ControlInput, CraneParams, CraneState};
use cranebench::grading::{
    check_completion, check_equilibrium, compute_work, detect_violations, render_report, render_svg, score,
    violations_text, Aggregation, CompletionReport, EquilibriumMode, Rubric, ViolationKind,
};
use cranebench::harness::{simulate, ErrorEvent, SimOptions, Trajectory};
use cranebench::testcases::{default_testcase, public_view, ShapeFamily, Testcase};

/// A full-length trajectory with the states and inputs produced by `f(k)`.
fn synthetic(tc: &Testcase, f: impl Fn(usize) -> (CraneState, ControlInput)) -> Trajectory {
    let n = tc.samples();
    let (states, inputs): (Vec<_>, Vec<_>) = (0..=n).map(f).unzip();
    Trajectory {
        testcase: tc.name.clone(),
        plant_params: CraneParams::nominal(),
        ts: tc.ts,
        times: (0..=n).map(|k| k as f64 * tc.ts).collect(),
        measurements: states.iter().map(|s| [s.x, s.y, s.theta, s.psi]).collect(),
        estimates: states.iter().map(|s| s.to_vector().as_slice().to_vec()).collect(),
        references: vec![vec![0.0; 8]; n + 1],
        true_states: states,
        inputs,
        solver_time_per_sample: vec![0.0; n + 1],
        error_events: Vec::new(),
        truncated: false,
    }
}

fn at_target(tc: &Testcase) -> Trajectory {
    synthetic(tc, |_| (CraneState::at_rest(tc.target[0], tc.target[1]), ControlInput::ZERO))
}

fn params() -> CraneParams {
    CraneParams::nominal()
}

#[test]
fn resting_at_the_target_is_equilibrium() {
    let tc = default_testcase(ShapeFamily::Wedge);
    let eq = check_equilibrium(&at_target(&tc), &tc, EquilibriumMode::FinalTime);
    assert!(eq.ok, "{eq:?}");
    assert_eq!(eq.sample, Some(tc.samples()));
}

#[test]
fn payload_offset_fails_only_the_payload_bullet() {
    let tc = default_testcase(ShapeFamily::Wedge);
    let l = params().cable_length;
    // Payload displaced by exactly 2 ε_t while the cart sits on the target.
    let theta = (2.0 * tc.eps_t / l).asin();
    let traj = synthetic(&tc, |_| (CraneState { theta, ..CraneState::at_rest(tc.target[0], tc.target[1]) }, ControlInput::ZERO));
    let eq = check_equilibrium(&traj, &tc, EquilibriumMode::FinalTime);
    assert!(!eq.ok);
    assert_eq!(eq.failing, vec!["payload".to_string()]);
    assert!((eq.errors.unwrap().payload - 2.0 * tc.eps_t).abs() < 1e-12);
}

#[test]
fn each_equilibrium_bullet_is_checked() {
    let tc = default_testcase(ShapeFamily::Wedge);
    let rest = CraneState::at_rest(tc.target[0], tc.target[1]);
    let cases: [(CraneState, ControlInput, &str); 4] = [
        (CraneState { x: rest.x + 1.5 * tc.eps_t, ..rest }, ControlInput::ZERO, "cart"),
        (CraneState { psidot: 2.0 * tc.eps_r, ..rest }, ControlInput::ZERO, "rates"),
        (CraneState { ydot: -2.0 * tc.eps_r, ..rest }, ControlInput::ZERO, "rates"),
        (rest, ControlInput::new(0.0, 2.0 * tc.eps_r), "inputs"),
    ];
    for (state, input, bullet) in cases {
        let traj = synthetic(&tc, |_| (state, input));
        let eq = check_equilibrium(&traj, &tc, EquilibriumMode::FinalTime);
        assert!(eq.failing.contains(&bullet.to_string()), "{bullet}: {:?}", eq.failing);
    }
    // Just inside the tolerances still passes.
    let edge = CraneState { x: rest.x + 0.999 * tc.eps_t, xdot: tc.eps_r, ..rest };
    let traj = synthetic(&tc, |_| (edge, ControlInput::new(tc.eps_r, 0.0)));
    assert!(check_equilibrium(&traj, &tc, EquilibriumMode::FinalTime).ok);
}

#[test]
fn passing_through_equilibrium_counts_only_in_legacy_mode() {
    let tc = default_testcase(ShapeFamily::Wedge);
    let n = tc.samples();
    let traj = synthetic(&tc, |k| {
        let x = if k == n / 2 { tc.target[0] } else { tc.target[0] + 0.5 };
        (CraneState::at_rest(x, tc.target[1]), ControlInput::ZERO)
    });
    assert!(!check_equilibrium(&traj, &tc, EquilibriumMode::FinalTime).ok);
    let legacy = check_equilibrium(&traj, &tc, EquilibriumMode::Legacy);
    assert!(legacy.ok);
    assert_eq!(legacy.sample, Some(n / 2));
}

#[test]
fn truncated_trajectory_has_no_equilibrium() {
    let tc = default_testcase(ShapeFamily::Wedge);
    let mut traj = at_target(&tc);
    let keep = tc.samples() / 2;
    traj.times.truncate(keep);
    traj.true_states.truncate(keep);
    traj.inputs.truncate(keep);
    traj.truncated = true;
    let eq = check_equilibrium(&traj, &tc, EquilibriumMode::Legacy);
    assert!(!eq.ok);
    assert!(eq.runtime_error.is_some());
}

#[test]
fn work_of_constant_push_is_force_times_distance() {
    let tc = default_testcase(ShapeFamily::Wedge);
    let (u, v) = (0.4, 0.3);
    let traj = synthetic(&tc, |k| {
        let t = k as f64 * tc.ts;
        (CraneState { xdot: v, ..CraneState::at_rest(tc.start[0] + v * t, tc.start[1]) }, ControlInput::new(u, 0.0))
    });
    let expected = params().force_gain * u * v * tc.t_final;
    assert!((compute_work(&traj, &params()) - expected).abs() < 1e-12);

    // Braking is counted: reversing the force does not cancel work.
    let braking = synthetic(&tc, |k| {
        (traj.true_states[k], ControlInput::new(if k % 2 == 0 { u } else { -u }, 0.0))
    });
    assert!((compute_work(&braking, &params()) - expected).abs() < 1e-12);
}

#[test]
fn work_is_linear_in_input_magnitude_and_uses_both_axes() {
    let tc = default_testcase(ShapeFamily::Wedge);
    let base = |alpha: f64| {
        synthetic(&tc, |k| {
            let t = k as f64 * tc.ts;
            let s = CraneState { xdot: (3.0 * t).sin(), ydot: t.cos() * 0.2, ..CraneState::at_rest(4.0, 1.0) };
            (s, ControlInput::new(alpha * 0.5 * (2.0 * t).cos(), -alpha * 0.3))
        })
    };
    let w1 = compute_work(&base(1.0), &params());
    assert!(w1 > 0.0);
    for alpha in [0.25, 2.0, 3.5] {
        assert!((compute_work(&base(alpha), &params()) - alpha * w1).abs() < 1e-12 * (1.0 + w1));
    }
    // Simpson and trapezoid agree closely on a smooth power profile.
    let traj = base(1.0);
    let mut even = traj.clone();
    even.true_states.pop();
    even.inputs.pop();
    let w_trap = compute_work(&even, &params());
    let tail = {
        let s = traj.true_states[tc.samples()];
        let u = traj.inputs[tc.samples()];
        let p = |s: &CraneState, u: &ControlInput| params().force_gain * ((u.ux * s.xdot).abs() + (u.uy * s.ydot).abs());
        let sp = traj.true_states[tc.samples() - 1];
        let up = traj.inputs[tc.samples() - 1];
        0.5 * tc.ts * (p(&s, &u) + p(&sp, &up))
    };
    assert!((w_trap + tail - w1).abs() < 1e-2 * w1);
}

#[test]
fn input_excursion_is_one_violation_with_its_peak() {
    let tc = default_testcase(ShapeFamily::Wedge);
    let traj = synthetic(&tc, |k| {
        let ux = match k {
            10 => 1.1,
            11 => 1.2,
            12 => 1.05,
            _ => 0.0,
        };
        (CraneState::at_rest(tc.target[0], tc.target[1]), ControlInput::new(ux, 0.0))
    });
    let v = detect_violations(&traj, &tc);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].kind, ViolationKind::InputInterval);
    assert!((v[0].magnitude - 0.2).abs() < 1e-12);
    assert_eq!((v[0].first_sample, v[0].last_sample), (10, 12));
    assert!((v[0].time - 11.0 * tc.ts).abs() < 1e-12);

    let split = synthetic(&tc, |k| {
        let uy = if k == 5 || k == 7 { -1.3 } else { -1.0 };
        (CraneState::at_rest(tc.target[0], tc.target[1]), ControlInput::new(0.0, uy))
    });
    assert_eq!(detect_violations(&split, &tc).len(), 2);
}

#[test]
fn grazing_an_obstacle_reports_the_penetration_depth() {
    let tc = default_testcase(ShapeFamily::RegionEllipses);
    let e = tc.region.obstacles()[0];
    let depth = 0.3 * e.semi_axes[0];
    let p = [e.center[0] - e.semi_axes[0] + depth, e.center[1]];
    let traj = synthetic(&tc, |k| {
        let x = if k == 40 { p[0] } else { tc.start[0] };
        let y = if k == 40 { p[1] } else { tc.start[1] };
        (CraneState::at_rest(x, y), ControlInput::ZERO)
    });
    let v = detect_violations(&traj, &tc);
    // Cart and payload coincide with zero swing: one excursion each.
    assert_eq!(v.len(), 2);
    for viol in &v {
        assert_eq!(viol.kind, ViolationKind::Region);
        assert_eq!(viol.first_sample, 40);
        assert!((viol.magnitude - depth).abs() < 1e-9, "{}", viol.magnitude);
    }
}

#[test]
fn runtime_events_are_violations() {
    let tc = default_testcase(ShapeFamily::Wedge);
    let mut traj = at_target(&tc);
    traj.error_events.push(ErrorEvent { level: 2, sample: 4, description: "bad output".into() });
    let report = check_completion(&traj, &tc, &params(), EquilibriumMode::FinalTime);
    assert!(!report.constraints_ok && !report.overall_ok);
    assert!(report.equilibrium_ok && report.work_ok && report.input_interval_ok);
    assert_eq!(report.violations.len(), 1);
    assert_eq!(report.violations[0].kind, ViolationKind::RuntimeError);
}

fn linear_hard_run() -> (Testcase, Trajectory) {
    let tc = default_testcase(ShapeFamily::Wedge);
    let hooks = make_controller(&ControllerConfig::reference(Formulation::LinearHard), &public_view(&tc)).unwrap();
    let traj = simulate(&tc, hooks, &SimOptions::default());
    (tc, traj)
}

fn clauses(r: &CompletionReport) -> [bool; 4] {
    [r.equilibrium_ok, r.input_interval_ok, r.work_ok, r.constraints_ok]
}

#[test]
fn completion_clauses_fail_independently() {
    let (tc, traj) = linear_hard_run();
    let base = check_completion(&traj, &tc, &params(), EquilibriumMode::FinalTime);
    assert!(base.overall_ok, "{}", violations_text(&base));

    let n = tc.samples();
    let mut equilibrium = traj.clone();
    equilibrium.true_states[n].x -= 0.1;
    assert!(tc.region.contains(equilibrium.true_states[n].cart_position()));
    let mut input = traj.clone();
    input.inputs[n / 2].ux = 1.2;
    let mut region = traj.clone();
    region.true_states[n / 2].y += 5.0;
    let tight = Testcase { w_max: 0.5 * base.work, ..tc.clone() };

    let cases = [
        (check_completion(&equilibrium, &tc, &params(), EquilibriumMode::FinalTime), 0),
        (check_completion(&input, &tc, &params(), EquilibriumMode::FinalTime), 1),
        (check_completion(&traj, &tight, &params(), EquilibriumMode::FinalTime), 2),
        (check_completion(&region, &tc, &params(), EquilibriumMode::FinalTime), 3),
    ];
    for (report, failing) in cases {
        let flags = clauses(&report);
        assert!(!report.overall_ok);
        for (i, ok) in flags.iter().enumerate() {
            // Changing one sample's input or position shifts the work a little;
            // only the clause under test may flip.
            assert_eq!(*ok, i != failing, "clause {i} in case {failing}: {flags:?}");
        }
    }
}

fn report_with(kinds: &[ViolationKind]) -> CompletionReport {
    let tc = default_testcase(ShapeFamily::Wedge);
    let mut r = check_completion(&at_target(&tc), &tc, &params(), EquilibriumMode::FinalTime);
    assert!(r.violations.is_empty());
    let template = {
        let mut bad = at_target(&tc);
        bad.inputs[3].ux = 2.0;
        check_completion(&bad, &tc, &params(), EquilibriumMode::FinalTime).violations[0].clone()
    };
    for kind in kinds {
        r.violations.push(cranebench::grading::Violation { kind: *kind, ..template.clone() });
    }
    r.overall_ok = kinds.is_empty();
    r
}

#[test]
fn rubric_deducts_weights_and_floors_at_zero() {
    let rubric = Rubric::default();
    let clean = report_with(&[]);
    let two_inputs = report_with(&[ViolationKind::InputInterval, ViolationKind::InputInterval]);
    let wreck = report_with(&[ViolationKind::Equilibrium, ViolationKind::RuntimeError, ViolationKind::RuntimeError]);
    let marks = score(&[clean, two_inputs, wreck], &rubric).unwrap();
    let got: Vec<f64> = marks.testcases.iter().map(|t| t.marks).collect();
    assert_eq!(got, vec![10.0, 6.0, 0.0]);
    assert_eq!(marks.testcases[1].deductions[&ViolationKind::InputInterval], 4.0);
    assert_eq!(marks.total, 16.0);
    assert_eq!(marks.max_total, 30.0);

    let mean = score(&[report_with(&[]), report_with(&[ViolationKind::Region])], &Rubric { aggregation: Aggregation::Mean, ..rubric.clone() })
        .unwrap();
    assert_eq!(mean.total, 9.0);
    assert_eq!(mean.max_total, 10.0);

    let zero = Rubric { weights: BTreeMap::new(), ..rubric.clone() };
    assert_eq!(score(&[report_with(&[ViolationKind::WorkBudget])], &zero).unwrap().total, 10.0);
    assert_eq!(score(&[], &rubric).unwrap().total, 0.0);

    let mut bad = rubric.clone();
    bad.weights.insert(ViolationKind::Region, -1.0);
    assert!(score(&[], &bad).is_err());
    bad.weights.insert(ViolationKind::Region, f64::NAN);
    assert!(score(&[], &bad).is_err());
}

#[test]
fn rubric_round_trips_through_json() {
    let rubric = Rubric::default();
    let text = serde_json::to_string(&rubric).unwrap();
    assert!(text.contains("input_interval"));
    assert_eq!(serde_json::from_str::<Rubric>(&text).unwrap(), rubric);
}

#[test]
fn svg_draws_region_paths_and_obstacles() {
    for family in [ShapeFamily::Wedge, ShapeFamily::EdgeCircles, ShapeFamily::RegionEllipses] {
        let tc = default_testcase(family);
        let svg = render_svg(&tc, &at_target(&tc));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<path").count(), 2);
        assert_eq!(svg.matches("<ellipse").count(), tc.region.obstacles().len());
        assert_eq!(svg.matches(r#"class="region""#).count(), tc.region.rects().len());
        assert_eq!(svg.matches(r#"class="start""#).count(), 1);
        assert_eq!(svg.matches(r#"class="target""#).count(), 1);
    }
}

#[test]
fn clean_report_says_no_violations() {
    let text = violations_text(&report_with(&[]));
    assert!(text.contains("PASS") && text.contains("no violations"));
    let text = violations_text(&report_with(&[ViolationKind::Region]));
    assert!(text.contains("FAIL") && text.contains("1 violation(s)"));
}

#[test]
fn report_bundle_regenerates_identically_from_saved_trajectories() {
    let (tc, traj) = linear_hard_run();
    let trajs = vec![traj];
    let reports: Vec<_> = trajs.iter().map(|t| check_completion(t, &tc, &params(), EquilibriumMode::FinalTime)).collect();
    let marks = score(&reports, &Rubric::default()).unwrap();
    let first = tempfile::tempdir().unwrap();
    let out = render_report(std::slice::from_ref(&tc), &trajs, &reports, Some(&marks), first.path());
    assert!(out.errors.is_empty(), "{:?}", out.errors);
    assert_eq!(out.written.len(), 7);

    let saved = fs::read_to_string(first.path().join(&tc.name).join("trajectory.json")).unwrap();
    let reloaded: Trajectory = serde_json::from_str(&saved).unwrap();
    let reports2: Vec<_> = [&reloaded].iter().map(|t| check_completion(t, &tc, &params(), EquilibriumMode::FinalTime)).collect();
    let marks2 = score(&reports2, &Rubric::default()).unwrap();
    let second = tempfile::tempdir().unwrap();
    render_report(std::slice::from_ref(&tc), &[reloaded], &reports2, Some(&marks2), second.path());
    for path in &out.written {
        let rel = path.strip_prefix(first.path()).unwrap();
        assert_eq!(fs::read(path).unwrap(), fs::read(second.path().join(rel)).unwrap(), "{}", rel.display());
    }
}

#[test]
fn render_errors_are_collected_not_fatal() {
    let tc = default_testcase(ShapeFamily::Wedge);
    let traj = at_target(&tc);
    let report = check_completion(&traj, &tc, &params(), EquilibriumMode::FinalTime);
    let dir = tempfile::tempdir().unwrap();
    // A file where the testcase directory should go.
    fs::write(dir.path().join(&tc.name), b"occupied").unwrap();
    let out = render_report(&[tc], &[traj], &[report], None, dir.path());
    assert_eq!(out.errors.len(), 1);
    assert!(out.written.iter().any(|p| p.ends_with("summary.json")));
}
