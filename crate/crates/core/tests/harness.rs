use std::time::{Duration, Instant};

use nalgebra::DVector;

use cranebench::controllers::{make_controller, ControllerConfig, Formulation};
use cranebench::crane::{linearize, CraneParams, CraneState};
use cranebench::harness::{
    downcast_state, measure, run_suite, simulate, ControllerHooks, ControllerState, HookResult, PlantModel, SimOptions,
    Trajectory, ZeroController, LEVEL_HOOK_FAULT, LEVEL_INTEGRATION_FAULT, LEVEL_INVALID_OUTPUT, LEVEL_WATCHDOG,
};
use cranebench::mpc::discretize_zoh;
use cranebench::testcases::{default_testcase, generate_suite, PublicTestcase, ShapeFamily, SuiteSpec, Testcase};

/// Counts samples and misbehaves from `from` onwards.
struct Scripted {
    from: usize,
    behaviour: fn(usize) -> HookResult<Vec<f64>>,
}

impl ControllerHooks for Scripted {
    fn setup(&self, _tc: &PublicTestcase) -> HookResult<ControllerState> {
        Ok(Box::new(0usize))
    }
    fn target_generator(&self, _: f64, _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        Ok(vec![0.0; 8])
    }
    fn state_estimator(&self, _: f64, y: &[f64], _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        Ok(vec![y[0], 0.0, y[1], 0.0, y[2], 0.0, y[3], 0.0])
    }
    fn mp_controller(&self, _: f64, _: &[f64], _: &[f64], state: &mut ControllerState) -> HookResult<Vec<f64>> {
        let k = downcast_state::<usize>(state)?;
        *k += 1;
        if *k - 1 >= self.from {
            (self.behaviour)(*k - 1)
        } else {
            Ok(vec![0.0, 0.0])
        }
    }
}

fn scripted(from: usize, behaviour: fn(usize) -> HookResult<Vec<f64>>) -> Box<dyn ControllerHooks> {
    Box::new(Scripted { from, behaviour })
}

fn short_testcase() -> Testcase {
    Testcase { t_final: 1.0, ..default_testcase(ShapeFamily::Wedge) }
}

fn assert_full_length(traj: &Trajectory, tc: &Testcase) {
    let n = tc.samples() + 1;
    assert_eq!(traj.len(), n);
    for len in [
        traj.true_states.len(),
        traj.measurements.len(),
        traj.estimates.len(),
        traj.references.len(),
        traj.inputs.len(),
        traj.solver_time_per_sample.len(),
    ] {
        assert_eq!(len, n);
    }
    for (k, t) in traj.times.iter().enumerate() {
        assert!((t - k as f64 * tc.ts).abs() < 1e-12);
    }
}

#[test]
fn zero_controller_leaves_the_crane_at_rest() {
    let tc = default_testcase(ShapeFamily::EdgeCircles);
    let traj = simulate(&tc, Box::new(ZeroController), &SimOptions::default());
    assert_full_length(&traj, &tc);
    assert!(traj.error_events.is_empty());
    let rest = CraneState::at_rest(tc.start[0], tc.start[1]);
    for s in &traj.true_states {
        assert!((s.to_vector() - rest.to_vector()).amax() < 1e-12);
    }
}

#[test]
fn hook_error_is_isolated_as_level_one() {
    let tc = short_testcase();
    let traj = simulate(&tc, scripted(3, |_| Err("boom".into())), &SimOptions::default());
    assert_full_length(&traj, &tc);
    assert_eq!(traj.error_events[0].level, LEVEL_HOOK_FAULT);
    assert_eq!(traj.error_events[0].sample, 3);
    assert!(traj.error_events.iter().all(|e| e.level == LEVEL_HOOK_FAULT && e.sample >= 3));
    assert!(traj.inputs[3..].iter().all(|u| u.ux == 0.0 && u.uy == 0.0));
}

#[test]
fn panicking_hook_is_isolated_as_level_one() {
    let tc = short_testcase();
    let traj = simulate(&tc, scripted(2, |_| panic!("controller bug")), &SimOptions::default());
    assert_full_length(&traj, &tc);
    assert_eq!(traj.error_events[0].level, LEVEL_HOOK_FAULT);
    assert!(traj.error_events[0].description.contains("controller bug"));
}

#[test]
fn malformed_outputs_are_level_two() {
    let tc = short_testcase();
    for behaviour in [
        (|_| Ok(vec![0.0, 0.0, 0.0])) as fn(usize) -> HookResult<Vec<f64>>,
        |_| Ok(vec![f64::NAN, 0.0]),
        |_| Ok(vec![f64::INFINITY, 0.0]),
        |_| Ok(vec![]),
    ] {
        let traj = simulate(&tc, scripted(0, behaviour), &SimOptions::default());
        assert_full_length(&traj, &tc);
        assert!(!traj.error_events.is_empty());
        assert!(traj.error_events.iter().all(|e| e.level == LEVEL_INVALID_OUTPUT));
        assert!(traj.inputs.iter().all(|u| u.ux == 0.0 && u.uy == 0.0));
    }
}

#[test]
fn plant_blow_up_truncates_with_level_three() {
    let tc = short_testcase();
    let traj = simulate(&tc, scripted(1, |_| Ok(vec![1e12, 1e12])), &SimOptions::default());
    assert!(traj.truncated);
    assert!(traj.len() < tc.samples() + 1);
    let last = traj.error_events.last().unwrap();
    assert_eq!(last.level, LEVEL_INTEGRATION_FAULT);
    assert!(traj.true_states.iter().all(|s| s.is_finite()));
}

#[test]
fn stuck_hook_hits_the_watchdog_and_the_run_completes() {
    let tc = short_testcase();
    let opts = SimOptions { watchdog: Some(Duration::from_millis(500)), ..SimOptions::default() };
    let started = Instant::now();
    let traj = simulate(
        &tc,
        scripted(4, |_| loop {
            std::thread::sleep(Duration::from_millis(20));
        }),
        &opts,
    );
    assert!(started.elapsed() < Duration::from_secs(5));
    assert_full_length(&traj, &tc);
    let event = traj.error_events.iter().find(|e| e.level == LEVEL_WATCHDOG).expect("watchdog event");
    assert_eq!(event.sample, 4);
    assert!(traj.inputs[4..].iter().all(|u| u.ux == 0.0 && u.uy == 0.0));
}

#[test]
fn inputs_are_recorded_unclamped() {
    let tc = short_testcase();
    let traj = simulate(&tc, scripted(0, |_| Ok(vec![1.5, -1.5])), &SimOptions::default());
    assert!(traj.inputs.iter().all(|u| u.ux == 1.5 && u.uy == -1.5));
    assert!(traj.error_events.is_empty());
}

#[test]
fn timing_is_nonnegative() {
    let tc = short_testcase();
    let hooks = make_controller(&ControllerConfig::reference(Formulation::LinearHard), &cranebench::testcases::public_view(&tc)).unwrap();
    let traj = simulate(&tc, hooks, &SimOptions::default());
    assert!(traj.solver_time_per_sample.iter().all(|t| *t >= 0.0 && t.is_finite()));
    assert!(traj.solver_time_per_sample.iter().any(|t| *t > 0.0));
}

/// Output feedback `u = −kp (y_pos − target)`, a closed-form linear law.
struct PositionFeedback {
    target: [f64; 2],
}

const KP: f64 = 0.3;

impl ControllerHooks for PositionFeedback {
    fn setup(&self, _tc: &PublicTestcase) -> HookResult<ControllerState> {
        Ok(Box::new(()))
    }
    fn target_generator(&self, _: f64, _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        Ok(vec![0.0; 8])
    }
    fn state_estimator(&self, _: f64, y: &[f64], _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        Ok(vec![y[0], 0.0, y[1], 0.0, y[2], 0.0, y[3], 0.0])
    }
    fn mp_controller(&self, _: f64, x: &[f64], _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        Ok(vec![-KP * (x[0] - self.target[0]), -KP * (x[2] - self.target[1])])
    }
}

#[test]
fn linear_plant_matches_the_discrete_closed_loop_recursion() {
    let tc = default_testcase(ShapeFamily::Wedge);
    let lin = linearize(&CraneParams::nominal(), &CraneState::default()).unwrap();
    let opts = SimOptions { plant: PlantModel::Linear(lin.clone()), substeps: 200, ..SimOptions::default() };
    let traj = simulate(&tc, Box::new(PositionFeedback { target: tc.target }), &opts);
    assert!(traj.error_events.is_empty());

    let model = discretize_zoh(&lin.a, &lin.b, &lin.c, tc.ts).unwrap();
    let mut x = DVector::from_column_slice(CraneState::at_rest(tc.start[0], tc.start[1]).to_vector().as_slice());
    let mut worst: f64 = 0.0;
    for s in &traj.true_states {
        worst = worst.max((DVector::from_column_slice(s.to_vector().as_slice()) - &x).amax());
        let u = DVector::from_column_slice(&[-KP * (x[0] - tc.target[0]), -KP * (x[2] - tc.target[1])]);
        x = &model.a * &x + &model.b * u;
    }
    assert!(worst <= 1e-8, "deviation {worst:e}");
}

#[test]
fn measurement_noise_is_reproducible_per_sample() {
    let mut tc = short_testcase();
    tc.measurement_noise_std = [0.01, 0.01, 0.001, 0.0];
    let s = CraneState::at_rest(0.3, 0.1);
    assert_eq!(measure(&tc, &s, 7), measure(&tc, &s, 7));
    assert_ne!(measure(&tc, &s, 7), measure(&tc, &s, 8));
    assert_eq!(measure(&tc, &s, 7)[3], 0.0);
    let a = simulate(&tc, Box::new(ZeroController), &SimOptions::default());
    let b = simulate(&tc, Box::new(ZeroController), &SimOptions::default());
    assert_eq!(a.measurements, b.measurements);
}

fn suite() -> Vec<Testcase> {
    generate_suite(&SuiteSpec::new(ShapeFamily::Wedge, 12, 5)).unwrap()
}

#[test]
fn run_suite_is_order_stable_and_parallelism_invariant() {
    let suite = suite();
    let cfg = ControllerConfig::reference(Formulation::LinearHard);
    let factory = |view: &PublicTestcase| make_controller(&cfg, view).unwrap();
    let serial = run_suite(&suite, &factory, 1, &SimOptions::default());
    let parallel = run_suite(&suite, &factory, 8, &SimOptions::default());
    assert_eq!(serial.len(), suite.len());
    for ((a, b), tc) in serial.iter().zip(&parallel).zip(&suite) {
        assert_eq!(a.testcase, tc.name);
        assert_eq!(a.without_timing(), b.without_timing());
    }
}

#[test]
fn one_stuck_testcase_does_not_affect_the_rest() {
    let suite: Vec<Testcase> = (0..4).map(|i| Testcase { name: format!("case-{i}"), ..short_testcase() }).collect();
    let factory = |view: &PublicTestcase| -> Box<dyn ControllerHooks> {
        if view.name == "case-1" {
            scripted(2, |_| loop {
                std::thread::sleep(Duration::from_millis(20));
            })
        } else if view.name == "case-2" {
            panic!("factory failure")
        } else {
            Box::new(ZeroController)
        }
    };
    let opts = SimOptions { watchdog: Some(Duration::from_millis(300)), ..SimOptions::default() };
    let trajs = run_suite(&suite, &factory, 2, &opts);
    assert_eq!(trajs.len(), 4);
    assert!(trajs[0].error_events.is_empty() && trajs[3].error_events.is_empty());
    assert_eq!(trajs[1].error_events[0].level, LEVEL_WATCHDOG);
    assert_eq!(trajs[2].error_events[0].level, LEVEL_HOOK_FAULT);
    for (t, tc) in trajs.iter().zip(&suite) {
        assert_full_length(t, tc);
    }
}

#[test]
fn csv_and_json_exports() {
    let tc = short_testcase();
    let traj = simulate(&tc, scripted(3, |_| Err("boom".into())), &SimOptions::default());
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), tc.samples() + 2);
    let columns = Trajectory::CSV_HEADER.split(',').count();
    assert_eq!(columns, 32);
    assert!(lines.iter().all(|l| l.split(',').count() == columns));
    let json = traj.to_json().unwrap();
    assert!(json.contains("error_events") && json.contains("boom"));
    let back: Trajectory = serde_json::from_str(&json).unwrap();
    assert_eq!(back, traj);
}
