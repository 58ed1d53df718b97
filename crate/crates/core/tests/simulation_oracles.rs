use nalgebra::{Vector2, Vector3};
use prfusion::config::ScenarioConfig;
use prfusion::dynamics::{DynamicsTerms, Wrench};
use prfusion::kinematics::{EePose, Posture, RobotGeometry};
use prfusion::estimation::KinematicState;
use prfusion::sensors::{EncoderModel, ImuModel};
use prfusion::simulation::*;

fn bundled(name: &str) -> Scenario {
    ScenarioConfig::bundled(name).unwrap().scenario().unwrap()
}

/// Exact model, exact sensors.
fn ideal(mut s: Scenario) -> Scenario {
    s.model = s.plant;
    s.encoder = EncoderModel::exact();
    s.imu = ImuModel::ideal(s.imu.mount);
    s.estimator_mount = s.imu.mount;
    s
}

fn tracking_error(log: &SimLog) -> f64 {
    log.records
        .iter()
        .map(|r| (r.truth.pose.position() - r.reference.pose.position()).norm())
        .fold(0.0, f64::max)
}

#[test]
fn identical_seeds_give_identical_logs() {
    let s = bundled("link2_collision");
    assert_eq!(run_scenario(&s).unwrap(), run_scenario(&s).unwrap());
    let mut other = s.clone();
    other.seed += 1;
    assert_ne!(run_scenario(&s).unwrap(), run_scenario(&other).unwrap());
}

#[test]
fn log_has_uniform_ticks_and_closed_loops() {
    let log = run_scenario(&bundled("rectangle_contact_free")).unwrap();
    for (k, r) in log.records.iter().enumerate() {
        assert!((r.t - k as f64 * log.sample_time).abs() < 1e-12);
        assert!(r.loop_closure < 1e-9, "tick {k}: {:e}", r.loop_closure);
    }
}

#[test]
fn exact_model_tracks_the_rectangle() {
    let log = run_scenario(&ideal(bundled("rectangle_contact_free"))).unwrap();
    let err = tracking_error(&log);
    assert!(err < 1e-4, "max tracking error {err:e} m");
}

#[test]
fn contact_free_run_has_no_external_wrench() {
    let log = run_scenario(&bundled("rectangle_contact_free")).unwrap();
    assert!(log.onset().is_none());
    assert!(log.records.iter().all(|r| r.external == Wrench::ZERO));
}

#[test]
fn step_response_settles_without_large_overshoot() {
    let geo = RobotGeometry::default();
    let params = prfusion::dynamics::DynamicsParams::default();
    let cfg = ControllerConfig::default();
    let reference = KinematicState::at_rest(EePose::new(0.0, 0.0, 0.0));
    let offset = 0.01;
    let mut state = PlantState::at_rest(EePose::new(offset, 0.0, 0.0));
    let mut peak_overshoot: f64 = 0.0;
    for _ in 0..1000 {
        let posture = Posture::new(&state.pose, &geo).unwrap();
        let terms = DynamicsTerms::evaluate(&posture, &state.twist, &params);
        let f_m = tracking_controller(&reference, &state.pose, &state.twist, &terms, &cfg);
        state = step_plant(&state, &f_m, |_, _| Ok(Wrench::ZERO), 1e-3, 10, &geo, &params).unwrap();
        peak_overshoot = peak_overshoot.max(-state.pose.x);
    }
    assert!(state.pose.x.abs() < 1e-6, "residual {}", state.pose.x);
    assert!(peak_overshoot < 0.1 * offset, "overshoot {peak_overshoot}");
}

#[test]
fn controller_output_is_saturated() {
    let geo = RobotGeometry::default();
    let params = prfusion::dynamics::DynamicsParams::default();
    let cfg = ControllerConfig::default();
    let pose = EePose::new(0.0, 0.0, 0.0);
    let posture = Posture::new(&pose, &geo).unwrap();
    let terms = DynamicsTerms::evaluate(&posture, &Vector3::zeros(), &params);
    let far = KinematicState::at_rest(EePose::new(10.0, -10.0, 0.0));
    let f = tracking_controller(&far, &pose, &Vector3::zeros(), &terms, &cfg);
    assert_eq!(f.fx, cfg.force_limit);
    assert_eq!(f.fy, -cfg.force_limit);
    let strict = ControllerConfig { moment_limit: 1e-3, ..cfg };
    let turn = KinematicState::at_rest(EePose::new(0.0, 0.0, 1.0));
    assert_eq!(tracking_controller(&turn, &pose, &Vector3::zeros(), &terms, &strict).mz, 1e-3);
}

#[test]
fn platform_contact_force_rises_while_compressing() {
    let log = run_scenario(&bundled("platform_collision")).unwrap();
    let onset = log.onset_index().unwrap();
    let forces: Vec<f64> = log.records[onset..].iter().map(|r| r.contact_force).collect();
    let peak = forces
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    assert!(peak > 2, "compression phase too short");
    for w in forces[..=peak].windows(2) {
        assert!(w[1] >= w[0], "{} then {}", w[0], w[1]);
    }
}

#[test]
fn every_contact_scenario_makes_contact_after_onset() {
    for name in prfusion::config::CONTACT_SCENARIOS {
        let s = bundled(name);
        let log = run_scenario(&s).unwrap();
        let onset = log.onset().unwrap_or_else(|| panic!("{name}: no contact"));
        assert!(onset >= s.contact.onset - 1e-12, "{name}");
        assert!(log.records.iter().filter(|r| r.t < s.contact.onset).all(|r| r.contact_force == 0.0));
    }
}

#[test]
fn rectangle_reaches_configured_limits() {
    let s = bundled("rectangle_contact_free");
    let traj = &s.trajectory;
    let v = traj.samples.iter().map(|x| x.twist.xy().norm()).fold(0.0, f64::max);
    let a = traj.samples.iter().map(|x| x.accel.xy().norm()).fold(0.0, f64::max);
    assert!((v / traj.limits.unwrap().v_max - 1.0).abs() < 0.01, "{v}");
    assert!((a / traj.limits.unwrap().a_max - 1.0).abs() < 0.01, "{a}");
}

#[test]
fn trajectory_twist_matches_differentiated_pose() {
    let s = bundled("rectangle_contact_free");
    let traj = &s.trajectory;
    let dt = traj.sample_time;
    for k in 1..traj.len() - 1 {
        let d = (traj.samples[k + 1].pose.position() - traj.samples[k - 1].pose.position()) / (2.0 * dt);
        let v: Vector2<f64> = traj.samples[k].twist.xy();
        // Central differences across an acceleration switch are off by at most a_max·dt/2.
        assert!((d - v).norm() <= 0.5 * traj.limits.unwrap().a_max * dt + 1e-9, "tick {k}");
    }
}

#[test]
fn degenerate_rectangle_is_static() {
    let geo = RobotGeometry::default();
    let c = Vector2::new(0.01, 0.02);
    let traj = generate_rectangle_trajectory(&[c; 4], 0.0, MotionLimits { v_max: 1.0, a_max: 5.0 }, 0.01, 1e-3, &geo)
        .unwrap();
    assert!(traj.samples.iter().all(|s| s.pose.position() == c && s.twist == Vector3::zeros()));
}

#[test]
fn stop_on_detection_truncates_the_run() {
    let mut s = bundled("platform_collision");
    let full = run_scenario(&s).unwrap();
    s.stop_on = Some((7.5, 0.5));
    let stopped = run_scenario(&s).unwrap();
    assert!(stopped.records.len() < full.records.len());
    assert_eq!(stopped.records[..], full.records[..stopped.records.len()]);
}
