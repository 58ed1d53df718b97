//! End-to-end pipelines shared by the command-line tool and the test suites.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig, ThresholdMode};
use crate::detection::{
    latency_table, nrmse, snr, DetectionError, LatencyTable, MethodThresholds, ScenarioDetections,
};
use crate::estimation::KinematicState;
use crate::sensors::{calibrate_mounting, imu_true_outputs, CalibrationResult, ImuMount, ImuSample, ImuSimulator, SensorError};
use crate::simulation::{run_scenario, SimLog, SimulationError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

impl ExperimentError {
    /// Configuration problems, as opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(self, ExperimentError::Config(ConfigError::Invalid { .. } | ConfigError::Parse(_) | ConfigError::UnknownBundled(_)))
    }
}

/// Detection thresholds per method: calibrated on a contact-free run of the
/// calibration trajectory, or fixed from the config.
pub fn detection_thresholds(cfg: &ScenarioConfig) -> Result<MethodThresholds, ExperimentError> {
    let d = &cfg.detection;
    let mut thresholds = match d.mode {
        ThresholdMode::Fixed => {
            MethodThresholds::uniform(cfg.detector(d.force_threshold, d.moment_threshold), &cfg.observer.gains)
        }
        ThresholdMode::Calibrate => {
            let log = run_scenario(&cfg.threshold_calibration_scenario()?)?;
            MethodThresholds::calibrate(&log, d.safety_factor, &cfg.threshold_floor())?
        }
    };
    let debounce = cfg.detector(1.0, 1.0).debounce;
    thresholds.direct.debounce = debounce;
    for (_, c) in thresholds.observers.iter_mut() {
        c.debounce = debounce;
    }
    Ok(thresholds)
}

/// Direct method and the paired observer at the same fixed thresholds.
pub fn paired_thresholds(cfg: &ScenarioConfig) -> MethodThresholds {
    let d = &cfg.detection;
    MethodThresholds::uniform(
        cfg.detector(d.paired_force_threshold, d.paired_moment_threshold),
        &cfg.observer.gains,
    )
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: SimLog,
    pub thresholds: MethodThresholds,
    pub detections: ScenarioDetections,
    pub paired: ScenarioDetections,
}

/// Runs the configured scenario and evaluates all detectors on it.
pub fn run_with_detection(cfg: &ScenarioConfig, thresholds: &MethodThresholds) -> Result<RunOutcome, ExperimentError> {
    let log = run_scenario(&cfg.scenario()?)?;
    let detections = ScenarioDetections::evaluate(&log, thresholds);
    let paired = ScenarioDetections::evaluate(&log, &paired_thresholds(cfg));
    Ok(RunOutcome {
        log,
        thresholds: thresholds.clone(),
        detections,
        paired,
    })
}

/// Runs several configs in parallel and tabulates their latencies. Thresholds
/// come from the first config.
pub fn latency_sweep(configs: &[ScenarioConfig]) -> Result<(LatencyTable, Vec<RunOutcome>), ExperimentError> {
    let Some(first) = configs.first() else {
        return Err(ExperimentError::Detection(DetectionError::EmptyLog));
    };
    let thresholds = detection_thresholds(first)?;
    let outcomes = configs
        .par_iter()
        .map(|c| run_with_detection(c, &thresholds))
        .collect::<Result<Vec<_>, _>>()?;
    let detections: Vec<ScenarioDetections> = outcomes.iter().map(|o| o.detections.clone()).collect();
    let paired: Vec<ScenarioDetections> = outcomes.iter().map(|o| o.paired.clone()).collect();
    let table = latency_table(&detections, &thresholds, Some((first.detection.paired_gain, &paired)));
    Ok((table, outcomes))
}

/// Acceleration estimation quality of the EKF and of numeric differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccelQuality {
    /// Per translational axis.
    pub ekf_nrmse: [f64; 2],
    pub ekf_snr_db: [f64; 2],
    pub numeric_nrmse: [f64; 2],
    pub numeric_snr_db: [f64; 2],
}

impl AccelQuality {
    pub fn worst_ekf_nrmse(&self) -> f64 {
        self.ekf_nrmse[0].max(self.ekf_nrmse[1])
    }

    pub fn best_numeric_nrmse(&self) -> f64 {
        self.numeric_nrmse[0].min(self.numeric_nrmse[1])
    }

    pub fn worst_ekf_snr(&self) -> f64 {
        self.ekf_snr_db[0].min(self.ekf_snr_db[1])
    }

    pub fn best_numeric_snr(&self) -> f64 {
        self.numeric_snr_db[0].max(self.numeric_snr_db[1])
    }
}

/// Metrics over the translational axes; the platform angle of the
/// rectangle motion is constant, so its acceleration has no range.
pub fn accel_quality(log: &SimLog) -> Result<AccelQuality, DetectionError> {
    let mut q = AccelQuality {
        ekf_nrmse: [0.0; 2],
        ekf_snr_db: [0.0; 2],
        numeric_nrmse: [0.0; 2],
        numeric_snr_db: [0.0; 2],
    };
    for axis in 0..2 {
        let truth: Vec<f64> = log.records.iter().map(|r| r.truth.accel[axis]).collect();
        let ekf: Vec<f64> = log.records.iter().map(|r| r.ekf_accel[axis]).collect();
        let numeric: Vec<f64> = log.records.iter().map(|r| r.numeric_accel[axis]).collect();
        q.ekf_nrmse[axis] = nrmse(&ekf, &truth)?;
        q.ekf_snr_db[axis] = snr(&ekf, &truth)?;
        q.numeric_nrmse[axis] = nrmse(&numeric, &truth)?;
        q.numeric_snr_db[axis] = snr(&numeric, &truth)?;
    }
    Ok(q)
}

/// Synthetic IMU recording along the mounting-calibration trajectory, with
/// reference states as ground truth.
pub fn mounting_calibration_data(
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<(Vec<ImuSample>, Vec<KinematicState>), ExperimentError> {
    let trajectory = cfg.build_trajectory(&cfg.mounting.trajectory)?;
    let mut model = cfg.imu_model();
    model.accel_noise_density *= cfg.mounting.noise_scale;
    model.gyro_noise_density *= cfg.mounting.noise_scale;
    if !cfg.mounting.include_bias {
        model.accel_bias_range = 0.0;
        model.gyro_bias_range = 0.0;
    }
    // The recording is aligned offline, so the transport delay is removed.
    model.delay = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut imu = ImuSimulator::new(model, &mut rng);
    let samples = trajectory
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let (omega, accel) = imu_true_outputs(s, &model.mount);
            imu.sample(&omega, &accel, k as f64 * trajectory.sample_time, &mut rng)
        })
        .collect();
    Ok((samples, trajectory.samples))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MountingReport {
    pub truth: ImuMount,
    pub result: CalibrationResult,
    /// Largest position error, m.
    pub position_error: f64,
    /// Largest angle error, rad.
    pub angle_error: f64,
    /// Per-component errors `[x, y, z]`.
    pub position_errors: [f64; 3],
    pub angle_errors: [f64; 3],
}

pub fn mounting_calibration(cfg: &ScenarioConfig) -> Result<MountingReport, ExperimentError> {
    let (samples, states) = mounting_calibration_data(cfg, cfg.seed)?;
    let result = calibrate_mounting(&samples, &states, &cfg.calibration_bounds(), &cfg.pso_config())?;
    let truth = cfg.imu_mount();
    let dp = result.mount.position - truth.position;
    let da = result.mount.euler_xyz - truth.euler_xyz;
    Ok(MountingReport {
        truth,
        result,
        position_error: dp.amax(),
        angle_error: da.amax(),
        position_errors: [dp.x.abs(), dp.y.abs(), dp.z.abs()],
        angle_errors: [da.x.abs(), da.y.abs(), da.z.abs()],
    })
}
