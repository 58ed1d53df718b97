//! Encoder and IMU measurement models, and IMU mounting calibration.
//!
//! Accelerometer convention: the device reports specific force, so a sensor at
//! rest with its z axis pointing up reads `+9.81` on z. The gravity term of the
//! acceleration decomposition is therefore `ᴱR₀ · (−g)` with
//! `g = (0, 0, −9.81)` m/s² ([`GRAVITY_WORLD`]). This is the only place the sign is fixed.

use std::collections::VecDeque;

use nalgebra::{Rotation3, SVector, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::KinematicState;

pub const STANDARD_GRAVITY: f64 = 9.80665;
/// Gravitational acceleration in the inertial frame (z up).
pub const GRAVITY_WORLD: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensorError {
    #[error("degenerate excitation: {0}")]
    DegenerateExcitation(String),
    #[error("samples and states differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("calibration needs at least {0} samples, got {1}")]
    TooFewSamples(usize, usize),
    #[error("invalid sensor model: {0}")]
    InvalidModel(String),
}

/// Pose of the IMU frame S relative to the end-effector frame E.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuMount {
    /// `p_S` in the end-effector frame, m.
    pub position: Vector3<f64>,
    /// Intrinsic x-y-z Euler angles of S relative to E, rad.
    pub euler_xyz: Vector3<f64>,
}

impl Default for ImuMount {
    fn default() -> Self {
        Self::from_mm_deg([-5.0, 1.0, -97.0], [2.8, -5.2, 2.3])
    }
}

impl ImuMount {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            euler_xyz: Vector3::zeros(),
        }
    }

    pub fn from_mm_deg(position_mm: [f64; 3], euler_deg: [f64; 3]) -> Self {
        Self {
            position: Vector3::from(position_mm) * 1e-3,
            euler_xyz: Vector3::from(euler_deg.map(f64::to_radians)),
        }
    }

    /// `ᴱR_S = R_x(a) R_y(b) R_z(c)`.
    pub fn ee_from_sensor(&self) -> Rotation3<f64> {
        let e = self.euler_xyz;
        Rotation3::from_axis_angle(&Vector3::x_axis(), e.x)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), e.y)
            * Rotation3::from_axis_angle(&Vector3::z_axis(), e.z)
    }

    /// `ˢR_E`.
    pub fn sensor_from_ee(&self) -> Rotation3<f64> {
        self.ee_from_sensor().inverse()
    }

    fn to_vector(self) -> SVector<f64, 6> {
        SVector::<f64, 6>::from_iterator(self.position.iter().chain(self.euler_xyz.iter()).copied())
    }

    fn from_vector(v: &SVector<f64, 6>) -> Self {
        Self {
            position: Vector3::new(v[0], v[1], v[2]),
            euler_xyz: Vector3::new(v[3], v[4], v[5]),
        }
    }
}

/// Kinematic acceleration, angular rate and angular acceleration of the
/// platform, all expressed in the end-effector frame.
#[derive(Debug, Clone, Copy)]
struct PlatformMotion {
    accel_e: Vector3<f64>,
    rate: f64,
    rate_dot: f64,
}

impl PlatformMotion {
    fn new(state: &KinematicState) -> Self {
        let (s, c) = state.pose.phi.sin_cos();
        // ᴱR₀ applied to the in-plane acceleration.
        let accel_e = Vector3::new(
            c * state.accel.x + s * state.accel.y,
            -s * state.accel.x + c * state.accel.y,
            0.0,
        );
        Self {
            accel_e,
            rate: state.twist.z,
            rate_dot: state.accel.z,
        }
    }

    fn outputs(&self, mount: &ImuMount, sensor_from_ee: &Rotation3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let p = mount.position;
        let omega = Vector3::new(0.0, 0.0, self.rate);
        let omega_dot = Vector3::new(0.0, 0.0, self.rate_dot);
        // ᴱR₀ leaves the vertical axis unchanged for planar rotations.
        let accel = self.accel_e + omega_dot.cross(&p) + omega.cross(&omega.cross(&p)) - GRAVITY_WORLD;
        (sensor_from_ee * omega, sensor_from_ee * accel)
    }
}

/// Noise-free gyroscope and accelerometer outputs `(ω_S, a_S)` in the sensor frame.
pub fn imu_true_outputs(state: &KinematicState, mount: &ImuMount) -> (Vector3<f64>, Vector3<f64>) {
    PlatformMotion::new(state).outputs(mount, &mount.sensor_from_ee())
}

fn quantize(value: f64, step: f64) -> f64 {
    if step > 0.0 {
        (value / step).round() * step
    } else {
        value
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    if std > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    /// White-noise standard deviation, rad.
    pub noise_std: f64,
    /// Quantization step, rad.
    pub resolution: f64,
}

impl Default for EncoderModel {
    fn default() -> Self {
        Self::from_deg(4e-4, 1.2e-5)
    }
}

impl EncoderModel {
    pub fn from_deg(noise_std_deg: f64, resolution_deg: f64) -> Self {
        Self {
            noise_std: noise_std_deg.to_radians(),
            resolution: resolution_deg.to_radians(),
        }
    }

    pub fn exact() -> Self {
        Self {
            noise_std: 0.0,
            resolution: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.noise_std >= 0.0 && self.resolution >= 0.0) {
            return Err(SensorError::InvalidModel("encoder noise and resolution must be >= 0".into()));
        }
        Ok(())
    }
}

/// `quantize(q_a + N(0, σ²))`, rounded to the nearest resolution step.
pub fn sample_encoders<R: Rng + ?Sized>(q_a: &Vector3<f64>, model: &EncoderModel, rng: &mut R) -> Vector3<f64> {
    q_a.map(|q| quantize(q + gaussian(rng, model.noise_std), model.resolution))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuModel {
    /// m/s²/√Hz.
    pub accel_noise_density: f64,
    /// rad/s/√Hz.
    pub gyro_noise_density: f64,
    /// Half-width of the uniform per-axis bias draw, m/s².
    pub accel_bias_range: f64,
    /// Half-width of the uniform per-axis bias draw, rad/s.
    pub gyro_bias_range: f64,
    pub accel_resolution: f64,
    pub gyro_resolution: f64,
    /// Output delay in samples.
    pub delay: usize,
    pub sample_rate: f64,
    pub mount: ImuMount,
}

impl Default for ImuModel {
    /// BMI160 datasheet values with the delay measured on the bench.
    fn default() -> Self {
        Self {
            accel_noise_density: 180e-6 * STANDARD_GRAVITY,
            gyro_noise_density: 0.007f64.to_radians(),
            accel_bias_range: 0.04 * STANDARD_GRAVITY,
            gyro_bias_range: 3f64.to_radians(),
            accel_resolution: 2.99e-4,
            gyro_resolution: 1.91e-3f64.to_radians(),
            delay: 3,
            sample_rate: 1000.0,
            mount: ImuMount::default(),
        }
    }
}

impl ImuModel {
    /// No noise, bias, quantization or delay.
    pub fn ideal(mount: ImuMount) -> Self {
        Self {
            accel_noise_density: 0.0,
            gyro_noise_density: 0.0,
            accel_bias_range: 0.0,
            gyro_bias_range: 0.0,
            accel_resolution: 0.0,
            gyro_resolution: 0.0,
            delay: 0,
            sample_rate: 1000.0,
            mount,
        }
    }

    /// Per-sample white-noise standard deviations `(gyro, accel)`.
    pub fn sample_std(&self) -> (f64, f64) {
        let root = self.sample_rate.sqrt();
        (self.gyro_noise_density * root, self.accel_noise_density * root)
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let values = [
            self.accel_noise_density,
            self.gyro_noise_density,
            self.accel_bias_range,
            self.gyro_bias_range,
            self.accel_resolution,
            self.gyro_resolution,
        ];
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(SensorError::InvalidModel("IMU densities, biases and resolutions must be >= 0".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(SensorError::InvalidModel("IMU sample rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Angular rate in the sensor frame, rad/s.
    pub omega: Vector3<f64>,
    /// Specific force in the sensor frame, m/s².
    pub accel: Vector3<f64>,
    pub timestamp: f64,
}

/// Per-run IMU state: the bias drawn once at construction and the delay line.
#[derive(Debug, Clone)]
pub struct ImuSimulator {
    model: ImuModel,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    queue: VecDeque<ImuSample>,
}

impl ImuSimulator {
    pub fn new<R: Rng + ?Sized>(model: ImuModel, rng: &mut R) -> Self {
        let mut draw = |range: f64| {
            Vector3::from_fn(|_, _| if range > 0.0 { rng.random_range(-range..=range) } else { 0.0 })
        };
        let gyro_bias = draw(model.gyro_bias_range);
        let accel_bias = draw(model.accel_bias_range);
        Self {
            model,
            gyro_bias,
            accel_bias,
            queue: VecDeque::with_capacity(model.delay + 1),
        }
    }

    pub fn model(&self) -> &ImuModel {
        &self.model
    }

    /// Corrupts the true outputs and returns the sample emitted `delay` ticks ago.
    ///
    /// The delay line is primed with copies of the first sample.
    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        omega: &Vector3<f64>,
        accel: &Vector3<f64>,
        timestamp: f64,
        rng: &mut R,
    ) -> ImuSample {
        let (gyro_std, accel_std) = self.model.sample_std();
        let omega = Vector3::from_fn(|i, _| {
            quantize(omega[i] + self.gyro_bias[i] + gaussian(rng, gyro_std), self.model.gyro_resolution)
        });
        let accel = Vector3::from_fn(|i, _| {
            quantize(accel[i] + self.accel_bias[i] + gaussian(rng, accel_std), self.model.accel_resolution)
        });
        let fresh = ImuSample { omega, accel, timestamp };
        if self.queue.is_empty() {
            for _ in 0..self.model.delay {
                self.queue.push_back(fresh);
            }
        }
        self.queue.push_back(fresh);
        self.queue.pop_front().expect("delay line holds at least the fresh sample")
    }
}

/// Search box for the mounting calibration, centered on a nominal mount.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBounds {
    pub center: ImuMount,
    /// m.
    pub position_half_width: f64,
    /// rad.
    pub angle_half_width: f64,
}

impl Default for CalibrationBounds {
    fn default() -> Self {
        Self {
            center: ImuMount::identity(),
            position_half_width: 0.2,
            angle_half_width: 10f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            particles: 200,
            iterations: 300,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult {
    pub mount: ImuMount,
    pub objective: f64,
    /// Objective of the search-box center, for the residual report.
    pub objective_at_center: f64,
}

pub const MIN_CALIBRATION_SAMPLES: usize = 1000;
/// Minimum peak platform rate and translational acceleration of the truth motion.
pub const MIN_ANGULAR_EXCITATION: f64 = 0.05;
pub const MIN_LINEAR_EXCITATION: f64 = 0.5;

/// Precomputed, mount-independent data of the calibration objective.
pub struct CalibrationProblem {
    motions: Vec<PlatformMotion>,
    measured: Vec<ImuSample>,
    omega_max_sq: f64,
    accel_max_sq: f64,
}

impl CalibrationProblem {
    pub fn new(samples: &[ImuSample], states: &[KinematicState]) -> Result<Self, SensorError> {
        if samples.len() != states.len() {
            return Err(SensorError::LengthMismatch(samples.len(), states.len()));
        }
        let rate_peak = states.iter().map(|s| s.twist.z.abs()).fold(0.0, f64::max);
        let accel_peak = states.iter().map(|s| s.accel.xy().norm()).fold(0.0, f64::max);
        if rate_peak < MIN_ANGULAR_EXCITATION {
            return Err(SensorError::DegenerateExcitation(format!(
                "peak platform rate {rate_peak:.3e} rad/s"
            )));
        }
        if accel_peak < MIN_LINEAR_EXCITATION {
            return Err(SensorError::DegenerateExcitation(format!(
                "peak platform acceleration {accel_peak:.3e} m/s²"
            )));
        }
        let omega_max = samples.iter().map(|s| s.omega.amax()).fold(0.0, f64::max);
        let accel_max = samples.iter().map(|s| s.accel.amax()).fold(0.0, f64::max);
        if !(omega_max > 0.0 && accel_max > 0.0) {
            return Err(SensorError::DegenerateExcitation("measured signals are identically zero".into()));
        }
        Ok(Self {
            motions: states.iter().map(PlatformMotion::new).collect(),
            measured: samples.to_vec(),
            omega_max_sq: omega_max * omega_max,
            accel_max_sq: accel_max * accel_max,
        })
    }

    /// `Σ ‖ω − ω̂‖²/ω_max² + ‖a − â‖²/a_max²`.
    pub fn objective(&self, mount: &ImuMount) -> f64 {
        let rot = mount.sensor_from_ee();
        self.motions
            .iter()
            .zip(&self.measured)
            .map(|(motion, sample)| {
                let (omega, accel) = motion.outputs(mount, &rot);
                (sample.omega - omega).norm_squared() / self.omega_max_sq
                    + (sample.accel - accel).norm_squared() / self.accel_max_sq
            })
            .sum()
    }
}

/// Mounting objective for one candidate mount.
pub fn calibration_objective(
    samples: &[ImuSample],
    states: &[KinematicState],
    mount: &ImuMount,
) -> Result<f64, SensorError> {
    Ok(CalibrationProblem::new(samples, states)?.objective(mount))
}

/// Identifies `p_S` and the Euler angles of the IMU by particle-swarm
/// minimization of the normalized output mismatch.
pub fn calibrate_mounting(
    samples: &[ImuSample],
    states: &[KinematicState],
    bounds: &CalibrationBounds,
    pso: &PsoConfig,
) -> Result<CalibrationResult, SensorError> {
    if samples.len() < MIN_CALIBRATION_SAMPLES {
        return Err(SensorError::TooFewSamples(MIN_CALIBRATION_SAMPLES, samples.len()));
    }
    let problem = CalibrationProblem::new(samples, states)?;
    let center = bounds.center.to_vector();
    let half = SVector::<f64, 6>::from_fn(|i, _| {
        if i < 3 {
            bounds.position_half_width
        } else {
            bounds.angle_half_width
        }
    });
    let lower = center - half;
    let upper = center + half;
    let best = particle_swarm(
        |v| problem.objective(&ImuMount::from_vector(v)),
        &lower,
        &upper,
        pso,
    );
    Ok(CalibrationResult {
        mount: ImuMount::from_vector(&best.0),
        objective: best.1,
        objective_at_center: problem.objective(&bounds.center),
    })
}

/// Global-best particle swarm over a box. Returns the best position and value.
pub fn particle_swarm<const D: usize, F>(
    objective: F,
    lower: &SVector<f64, D>,
    upper: &SVector<f64, D>,
    cfg: &PsoConfig,
) -> (SVector<f64, D>, f64)
where
    F: Fn(&SVector<f64, D>) -> f64 + Sync,
{
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let span = upper - lower;
    let n = cfg.particles.max(1);
    let mut positions: Vec<SVector<f64, D>> = (0..n)
        .map(|_| SVector::from_fn(|i, _| lower[i] + rng.random::<f64>() * span[i]))
        .collect();
    let mut velocities: Vec<SVector<f64, D>> = (0..n)
        .map(|_| SVector::from_fn(|i, _| (2.0 * rng.random::<f64>() - 1.0) * span[i]))
        .collect();
    let mut values: Vec<f64> = positions.par_iter().map(&objective).collect();
    let mut personal = positions.clone();
    let mut personal_values = values.clone();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    let mut global = positions[best];
    let mut global_value = values[best];

    for _ in 0..cfg.iterations {
        for k in 0..n {
            for i in 0..D {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = cfg.inertia * velocities[k][i]
                    + cfg.cognitive * r1 * (personal[k][i] - positions[k][i])
                    + cfg.social * r2 * (global[i] - positions[k][i]);
                velocities[k][i] = v.clamp(-span[i], span[i]);
                let x = positions[k][i] + velocities[k][i];
                if x < lower[i] || x > upper[i] {
                    velocities[k][i] = 0.0;
                }
                positions[k][i] = x.clamp(lower[i], upper[i]);
            }
        }
        values = positions.par_iter().map(&objective).collect();
        for k in 0..n {
            if values[k] < personal_values[k] {
                personal_values[k] = values[k];
                personal[k] = positions[k];
                if values[k] < global_value {
                    global_value = values[k];
                    global = positions[k];
                }
            }
        }
    }
    (global, global_value)
}
