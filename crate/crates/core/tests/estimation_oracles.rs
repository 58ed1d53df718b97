mod common;

use common::{fitted_rate, rng};
use nalgebra::{Matrix3, SMatrix, Vector3};
use prfusion::config::ScenarioConfig;
use prfusion::detection::nrmse;
use prfusion::dynamics::{forward_dynamics, DynamicsParams, DynamicsTerms, Wrench};
use prfusion::estimation::*;
use prfusion::kinematics::{EePose, Posture, RobotGeometry};
use prfusion::sensors::{imu_true_outputs, ImuMount, ImuSample};
use prfusion::simulation::{step_plant, PlantState, Trajectory};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn random_state(r: &mut impl Rng) -> KinematicState {
    KinematicState {
        pose: EePose::new(r.random_range(-0.1..0.1), r.random_range(-0.1..0.1), r.random_range(-3.0..3.0)),
        twist: Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-5.0..5.0)),
        accel: Vector3::new(
            r.random_range(-20.0..20.0),
            r.random_range(-20.0..20.0),
            r.random_range(-50.0..50.0),
        ),
    }
}

/// Hand-derived accelerometer rows of the output Jacobian.
fn accel_jacobian_oracle(state: &KinematicState, mount: &ImuMount) -> SMatrix<f64, 3, 9> {
    let (s, c) = state.pose.phi.sin_cos();
    let (ax, ay) = (state.accel.x, state.accel.y);
    let p = mount.position;
    let w = state.twist.z;
    let mut j = SMatrix::<f64, 3, 9>::zeros();
    j.set_column(2, &Vector3::new(-s * ax + c * ay, -c * ax - s * ay, 0.0));
    j.set_column(5, &Vector3::new(-2.0 * w * p.x, -2.0 * w * p.y, 0.0));
    j.set_column(6, &Vector3::new(c, -s, 0.0));
    j.set_column(7, &Vector3::new(s, c, 0.0));
    j.set_column(8, &Vector3::new(-p.y, p.x, 0.0));
    mount.sensor_from_ee().matrix() * j
}

#[test]
fn output_jacobian_matches_analytic_oracle() {
    let mut r = rng(51);
    let mount = ImuMount::default();
    for _ in 0..100 {
        let state = random_state(&mut r);
        let (_, c) = output_model(&state, &mount);
        let oracle = accel_jacobian_oracle(&state, &mount);
        let analytic = c.fixed_view::<3, 9>(6, 0).into_owned();
        assert!((analytic - oracle).norm() / oracle.norm() < 1e-12);
        let err = (accel_jacobian_numeric(&state, &mount) - oracle).norm() / oracle.norm();
        assert!(err < 1e-6, "numeric accel block rel err {err:e}");
        assert_eq!(c.fixed_view::<3, 3>(0, 0).into_owned(), Matrix3::identity());
        assert!(c.fixed_view::<3, 3>(0, 3).amax() == 0.0 && c.fixed_view::<3, 3>(0, 6).amax() == 0.0);
    }
}

#[test]
fn output_jacobian_is_smooth_across_the_angle_wrap() {
    let mount = ImuMount::default();
    let mut state = random_state(&mut rng(52));
    state.pose.phi = std::f64::consts::PI - 1e-7;
    let oracle = accel_jacobian_oracle(&state, &mount);
    assert!((accel_jacobian_numeric(&state, &mount) - oracle).norm() / oracle.norm() < 1e-6);
}

/// Noisy sinusoidal motion with its measurements.
fn sine_motion(steps: usize, seed: u64) -> (Vec<KinematicState>, Vec<StateVector>) {
    let mount = ImuMount::default();
    let mut r = rng(seed);
    let noise = [0.0005, 0.0005, 0.001, 0.002, 0.002, 0.002, 0.05, 0.05, 0.05];
    let dists: Vec<Normal<f64>> = noise.iter().map(|s| Normal::new(0.0, *s).unwrap()).collect();
    let mut truth = Vec::with_capacity(steps);
    let mut measured = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * 1e-3;
        let w = [2.0 * std::f64::consts::PI, 3.0, 5.0];
        let amp = [0.05, 0.04, 0.2];
        let state = KinematicState {
            pose: EePose::new(amp[0] * (w[0] * t).sin(), amp[1] * (w[1] * t).cos(), amp[2] * (w[2] * t).sin()),
            twist: Vector3::new(
                amp[0] * w[0] * (w[0] * t).cos(),
                -amp[1] * w[1] * (w[1] * t).sin(),
                amp[2] * w[2] * (w[2] * t).cos(),
            ),
            accel: Vector3::new(
                -amp[0] * w[0] * w[0] * (w[0] * t).sin(),
                -amp[1] * w[1] * w[1] * (w[1] * t).cos(),
                -amp[2] * w[2] * w[2] * (w[2] * t).sin(),
            ),
        };
        let (omega, accel) = imu_true_outputs(&state, &mount);
        let mut y = measurement(&state.pose, &ImuSample { omega, accel, timestamp: t });
        for (i, d) in dists.iter().enumerate() {
            y[i] += d.sample(&mut r);
        }
        truth.push(state);
        measured.push(y);
    }
    (truth, measured)
}

fn scaled(cfg: &EkfConfig, factor: f64) -> EkfConfig {
    EkfConfig {
        process_noise: cfg.process_noise * factor,
        measurement_noise: cfg.measurement_noise * factor,
        initial_covariance: cfg.initial_covariance * factor,
        ..*cfg
    }
}

#[test]
fn joint_covariance_scaling_leaves_gain_and_mean_unchanged() {
    let (truth, ys) = sine_motion(500, 53);
    let mount = ImuMount::default();
    let base = EkfConfig::default();
    for factor in [1e-3, 7.0, 1e4] {
        let cfg = scaled(&base, factor);
        let mut a = EkfState::new(truth[0], &base);
        let mut b = EkfState::new(truth[0], &cfg);
        for y in &ys {
            let (na, ka) = ekf_step_with_gain(&a, y, &base, &mount).unwrap();
            let (nb, kb) = ekf_step_with_gain(&b, y, &cfg, &mount).unwrap();
            assert!((ka - kb).amax() <= 1e-10 * ka.amax().max(1.0), "factor {factor}: {:e} of {:e}", (ka - kb).amax(), ka.amax());
            let (ma, mb) = (na.mean.to_vector(), nb.mean.to_vector());
            assert!((ma - mb).amax() <= 1e-10 * ma.amax().max(1.0));
            a = na;
            b = nb;
        }
    }
}

#[test]
fn covariance_stays_symmetric_positive_semidefinite() {
    let steps = 1_000_000;
    let (truth, ys) = sine_motion(steps, 54);
    let mount = ImuMount::default();
    let cfg = EkfConfig::default();
    let mut ekf = EkfState::new(truth[0], &cfg);
    for (k, y) in ys.iter().enumerate() {
        ekf = ekf_step(&ekf, y, &cfg, &mount).unwrap();
        let p = ekf.covariance;
        assert_eq!(p, p.transpose());
        if k % 1000 == 0 {
            let min = p.symmetric_eigenvalues().min();
            assert!(min >= -1e-10, "step {k}: min eigenvalue {min:e}");
        } else {
            assert!(p.diagonal().min() > 0.0);
        }
    }
}

#[test]
fn huge_measurement_noise_reduces_update_to_prediction() {
    let (truth, ys) = sine_motion(2, 55);
    let mount = ImuMount::default();
    let cfg = EkfConfig {
        measurement_noise: StateVector::repeat(1e14),
        ..EkfConfig::default()
    };
    let ekf = EkfState::new(truth[0], &cfg);
    let (post, gain) = ekf_step_with_gain(&ekf, &ys[1], &cfg, &mount).unwrap();
    let (prior, _) = process_model(&truth[0], cfg.sample_time);
    assert!(gain.amax() < 1e-8);
    assert!((post.mean.to_vector() - prior.to_vector()).amax() < 1e-6);
}

fn rectangle() -> (ScenarioConfig, Trajectory) {
    let cfg = ScenarioConfig::bundled("rectangle_contact_free").unwrap();
    let traj = cfg.build_trajectory(&cfg.trajectory).unwrap();
    (cfg, traj)
}

#[test]
fn noiseless_filter_reproduces_acceleration() {
    let (cfg, traj) = rectangle();
    let mount = cfg.imu_mount();
    let ekf_cfg = cfg.ekf_config();
    let mut ekf = EkfState::new(traj.samples[0], &ekf_cfg);
    let mut est = [Vec::new(), Vec::new()];
    let mut truth = [Vec::new(), Vec::new()];
    for (k, s) in traj.samples.iter().enumerate() {
        let (omega, accel) = imu_true_outputs(s, &mount);
        let y = measurement(&s.pose, &ImuSample { omega, accel, timestamp: k as f64 * 1e-3 });
        ekf = ekf_step(&ekf, &y, &ekf_cfg, &mount).unwrap();
        for axis in 0..2 {
            est[axis].push(ekf.mean.accel[axis]);
            truth[axis].push(s.accel[axis]);
        }
    }
    for axis in 0..2 {
        let e = nrmse(&est[axis], &truth[axis]).unwrap();
        assert!(e < 5e-3, "axis {axis}: {e}");
    }
}

#[test]
fn rectangle_states_are_locally_observable() {
    let (cfg, traj) = rectangle();
    let mount = cfg.imu_mount();
    for s in traj.samples.iter().step_by(10) {
        let report = observability_check(s, &mount, cfg.sample_time);
        assert_eq!(report.rank, 9);
        assert!(report.observable);
    }
}

#[test]
fn pose_rows_alone_give_full_rank() {
    let mut c = Matrix9::zeros();
    c.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    assert_eq!(observability_rank(&transition_matrix(1e-3), &c).rank, 9);
    let report = observability_rank(&Matrix9::identity(), &Matrix9::zeros());
    assert_eq!(report.rank, 0);
    assert!(!report.observable);
}

#[test]
fn observer_error_decays_at_the_gain_on_a_pinned_plant() {
    let geo = RobotGeometry::default();
    let params = DynamicsParams::default();
    let posture = Posture::new(&EePose::new(0.01, -0.02, 0.1), &geo).unwrap();
    let twist = Vector3::zeros();
    let terms = DynamicsTerms::evaluate(&posture, &twist, &params);
    let f_ext = Wrench::new(30.0, 0.0, 0.0);
    // Motors hold the platform against the contact.
    let f_m = Wrench::from_vector(&(terms.bias() - f_ext.to_vector()));
    let dt = 1e-3;
    for gain in [20.0, 100.0, 500.0] {
        let cfg = MoConfig::uniform(gain);
        let mut mo = momentum_observer_step(&MoState::default(), &terms, &twist, &f_m, &cfg, dt);
        let mut errors = Vec::new();
        for _ in 0..(6.0 / gain / dt) as usize {
            mo = momentum_observer_step(&mo, &terms, &twist, &f_m, &cfg, dt);
            errors.push(f_ext.fx - mo.estimate.fx);
            assert!(mo.estimate.fy.abs() < 1e-9 && mo.estimate.mz.abs() < 1e-9);
        }
        let rate = fitted_rate(&errors, 30.0, dt);
        assert!((rate / gain - 1.0).abs() < 0.1, "gain {gain}: fitted {rate}");
    }
}

#[test]
fn observer_error_decays_at_the_gain_on_a_moving_plant() {
    let geo = RobotGeometry::default();
    let params = DynamicsParams::default();
    let dt = 1e-3;
    let f_ext = Wrench::new(5.0, -3.0, 0.0);
    for gain in [20.0, 100.0, 500.0] {
        let cfg = MoConfig::uniform(gain);
        let mut state = PlantState {
            pose: EePose::new(-0.02, 0.01, 0.0),
            twist: Vector3::new(0.05, 0.0, 0.0),
        };
        let f_m = Wrench::ZERO;
        let mut mo = MoState::default();
        let mut errors = Vec::new();
        for _ in 0..(5.0 / gain / dt) as usize {
            let posture = Posture::new(&state.pose, &geo).unwrap();
            let terms = DynamicsTerms::evaluate(&posture, &state.twist, &params);
            mo = momentum_observer_step(&mo, &terms, &state.twist, &f_m, &cfg, dt);
            errors.push(f_ext.fx - mo.estimate.fx);
            state = step_plant(&state, &f_m, |_, _| Ok(f_ext), dt, 10, &geo, &params).unwrap();
        }
        let rate = fitted_rate(&errors, f_ext.fx, dt);
        assert!((rate / gain - 1.0).abs() < 0.1, "gain {gain}: fitted {rate}");
    }
}

#[test]
fn observer_stays_at_zero_at_rest() {
    let geo = RobotGeometry::default();
    let params = DynamicsParams::default();
    let posture = Posture::new(&EePose::new(0.0, 0.0, 0.0), &geo).unwrap();
    let terms = DynamicsTerms::evaluate(&posture, &Vector3::zeros(), &params);
    let f_m = Wrench::from_vector(&terms.bias());
    let cfg = MoConfig::uniform(135.0);
    let mut mo = MoState::default();
    for _ in 0..1000 {
        mo = momentum_observer_step(&mo, &terms, &Vector3::zeros(), &f_m, &cfg, 1e-3);
    }
    assert!(mo.estimate.to_vector().amax() < 1e-12);
}

#[test]
fn direct_method_inverts_the_dynamics() {
    let geo = RobotGeometry::default();
    let params = DynamicsParams {
        gravity: [0.0, -9.81],
        ..DynamicsParams::default()
    };
    let mut r = rng(56);
    for pose in common::random_poses(57, 100) {
        let posture = Posture::new(&pose, &geo).unwrap();
        let twist = common::random_twist(&mut r);
        let f_m = Wrench::new(r.random_range(-20.0..20.0), r.random_range(-20.0..20.0), r.random_range(-1.0..1.0));
        let terms = DynamicsTerms::evaluate(&posture, &twist, &params);
        for f_ext in [Wrench::ZERO, Wrench::new(30.0, 0.0, 0.0)] {
            let accel = forward_dynamics(&posture, &twist, &f_m, &f_ext, &params).unwrap();
            let est = direct_force(&terms, &accel, &f_m);
            assert!((est.to_vector() - f_ext.to_vector()).amax() < 1e-9);
        }
    }
}

#[test]
fn direct_method_sees_an_injected_step_within_one_tick() {
    let geo = RobotGeometry::default();
    let params = DynamicsParams::default();
    let dt = 1e-3;
    let mut state = PlantState::at_rest(EePose::new(0.0, 0.0, 0.0));
    let f_m = Wrench::new(2.0, 0.0, 0.0);
    let step_tick = 20;
    for k in 0..40 {
        let f_ext = if k >= step_tick { Wrench::new(30.0, 0.0, 0.0) } else { Wrench::ZERO };
        let posture = Posture::new(&state.pose, &geo).unwrap();
        let terms = DynamicsTerms::evaluate(&posture, &state.twist, &params);
        let accel = forward_dynamics(&posture, &state.twist, &f_m, &f_ext, &params).unwrap();
        let est = direct_force(&terms, &accel, &f_m);
        if k >= step_tick {
            assert!((est.fx - 30.0).abs() < 0.1, "tick {k}: {}", est.fx);
        } else {
            assert!(est.to_vector().amax() < 1e-9);
        }
        state = step_plant(&state, &f_m, |_, _| Ok(f_ext), dt, 10, &geo, &params).unwrap();
    }
}

#[test]
fn low_pass_passes_dc_and_attenuates_high_frequencies() {
    let mut f = Butterworth2::new(20.0, 1000.0);
    let mut out = 0.0;
    for _ in 0..2000 {
        out = f.update(3.0);
    }
    assert!((out - 3.0).abs() < 1e-9);
    // At the cutoff the gain is 1/√2; at ten times the cutoff about −40 dB.
    for (freq, expected) in [(20.0, 1.0 / 2f64.sqrt()), (200.0, 0.01)] {
        let mut f = Butterworth2::new(20.0, 1000.0);
        let mut peak: f64 = 0.0;
        for k in 0..4000 {
            let y = f.update((2.0 * std::f64::consts::PI * freq * k as f64 * 1e-3).sin());
            if k > 2000 {
                peak = peak.max(y.abs());
            }
        }
        assert!((peak / expected - 1.0).abs() < 0.35, "{freq} Hz: {peak}");
    }
}
