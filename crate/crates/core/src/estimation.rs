//! Acceleration estimation by EKF fusion of encoders and IMU, and the two
//! contact-force estimators built on top of it: the momentum observer and the
//! direct method.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsTerms, Wrench};
use crate::kinematics::{wrap_angle, EePose};
use crate::sensors::{imu_true_outputs, ImuMount, ImuSample};

pub type StateVector = SVector<f64, 9>;
pub type Matrix9 = SMatrix<f64, 9, 9>;

/// Central-difference step of the accelerometer block of the output Jacobian.
pub const OUTPUT_JACOBIAN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("innovation covariance is not positive definite")]
    InnovationCovarianceSingular,
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
}

/// Pose, twist and acceleration of the end-effector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub pose: EePose,
    pub twist: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl Default for KinematicState {
    fn default() -> Self {
        Self {
            pose: EePose::new(0.0, 0.0, 0.0),
            twist: Vector3::zeros(),
            accel: Vector3::zeros(),
        }
    }
}

impl KinematicState {
    pub fn at_rest(pose: EePose) -> Self {
        Self {
            pose,
            ..Self::default()
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let p = self.pose.to_vector();
        StateVector::from_iterator(p.iter().chain(self.twist.iter()).chain(self.accel.iter()).copied())
    }

    /// Inverse of [`Self::to_vector`]; the angle is wrapped.
    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            pose: EePose::new(v[0], v[1], v[2]),
            twist: Vector3::new(v[3], v[4], v[5]),
            accel: Vector3::new(v[6], v[7], v[8]),
        }
    }
}

/// Constant-acceleration transition matrix.
pub fn transition_matrix(sample_time: f64) -> Matrix9 {
    let t = sample_time;
    let mut a = Matrix9::identity();
    for i in 0..3 {
        a[(i, i + 3)] = t;
        a[(i, i + 6)] = 0.5 * t * t;
        a[(i + 3, i + 6)] = t;
    }
    a
}

/// One step of the constant-acceleration chain and its (exact) Jacobian.
pub fn process_model(state: &KinematicState, sample_time: f64) -> (KinematicState, Matrix9) {
    let a = transition_matrix(sample_time);
    (KinematicState::from_vector(&(a * state.to_vector())), a)
}

/// Predicted measurement `[pose, ω_S, a_S]` and output Jacobian, all blocks
/// differentiated analytically.
pub fn output_model(state: &KinematicState, mount: &ImuMount) -> (StateVector, Matrix9) {
    let (omega, accel) = imu_true_outputs(state, mount);
    let mut y = StateVector::zeros();
    y.fixed_rows_mut::<3>(0).copy_from(&state.pose.to_vector());
    y.fixed_rows_mut::<3>(3).copy_from(&omega);
    y.fixed_rows_mut::<3>(6).copy_from(&accel);

    let rot = mount.sensor_from_ee();
    let mut c = Matrix9::zeros();
    c.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    // ω_S = ˢR_E (0, 0, φ̇)
    c.fixed_view_mut::<3, 1>(3, 5).copy_from(&(rot * Vector3::z()));

    // a_S = ˢR_E (ᴱR₀ ẍ_t + φ̈ e_z × p − φ̇² p_xy − g)
    let (s, co) = state.pose.phi.sin_cos();
    let (ax, ay) = (state.accel.x, state.accel.y);
    let p = mount.position;
    let w = state.twist.z;
    let columns = [
        (2, Vector3::new(-s * ax + co * ay, -co * ax - s * ay, 0.0)),
        (5, Vector3::new(-2.0 * w * p.x, -2.0 * w * p.y, 0.0)),
        (6, Vector3::new(co, -s, 0.0)),
        (7, Vector3::new(s, co, 0.0)),
        (8, Vector3::new(-p.y, p.x, 0.0)),
    ];
    for (col, v) in columns {
        c.fixed_view_mut::<3, 1>(6, col).copy_from(&(rot * v));
    }
    (y, c)
}

/// Accelerometer rows of the output Jacobian by central differences, the
/// cross-check for the analytic block.
pub fn accel_jacobian_numeric(state: &KinematicState, mount: &ImuMount) -> SMatrix<f64, 3, 9> {
    let x = state.to_vector();
    let h = OUTPUT_JACOBIAN_STEP;
    SMatrix::<f64, 3, 9>::from_columns(&std::array::from_fn::<_, 9, _>(|col| {
        let mut plus = x;
        plus[col] += h;
        let mut minus = x;
        minus[col] -= h;
        // Raw vectors: perturbing the angle must not pass through the wrap.
        let a_plus = imu_true_outputs(&raw_state(&plus), mount).1;
        let a_minus = imu_true_outputs(&raw_state(&minus), mount).1;
        (a_plus - a_minus) / (2.0 * h)
    }))
}

fn raw_state(v: &StateVector) -> KinematicState {
    let mut s = KinematicState::from_vector(v);
    s.pose.phi = v[2];
    s
}

/// Measurement vector from an FK pose and an IMU sample.
pub fn measurement(pose: &EePose, imu: &ImuSample) -> StateVector {
    let mut y = StateVector::zeros();
    y.fixed_rows_mut::<3>(0).copy_from(&pose.to_vector());
    y.fixed_rows_mut::<3>(3).copy_from(&imu.omega);
    y.fixed_rows_mut::<3>(6).copy_from(&imu.accel);
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EkfConfig {
    /// Diagonal of the process covariance.
    pub process_noise: StateVector,
    /// Diagonal of the measurement covariance.
    pub measurement_noise: StateVector,
    /// Diagonal of the initial covariance.
    pub initial_covariance: StateVector,
    pub sample_time: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self::tuned(0.01, 1e-3)
    }
}

impl EkfConfig {
    /// Tuned covariances with a configurable pose-block process variance.
    pub fn tuned(pose_process_variance: f64, sample_time: f64) -> Self {
        let block = |a: f64, b: f64, c: f64| StateVector::from_fn(|i, _| [a, b, c][i / 3]);
        Self {
            process_noise: block(pose_process_variance, 10.0, 1e5),
            measurement_noise: block(0.12, 1.6e-3, 7e-2),
            initial_covariance: StateVector::repeat(0.1),
            sample_time,
        }
    }

    pub fn validate(&self) -> Result<(), EstimationError> {
        let positive = |v: &StateVector| v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !positive(&self.process_noise) {
            return Err(EstimationError::InvalidConfig("process noise diagonal must be positive".into()));
        }
        if !positive(&self.measurement_noise) {
            return Err(EstimationError::InvalidConfig("measurement noise diagonal must be positive".into()));
        }
        if !positive(&self.initial_covariance) {
            return Err(EstimationError::InvalidConfig("initial covariance diagonal must be positive".into()));
        }
        if !(self.sample_time > 0.0) {
            return Err(EstimationError::InvalidConfig("sample time must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub mean: KinematicState,
    pub covariance: Matrix9,
}

impl EkfState {
    pub fn new(mean: KinematicState, cfg: &EkfConfig) -> Self {
        Self {
            mean,
            covariance: Matrix9::from_diagonal(&cfg.initial_covariance),
        }
    }
}

/// One predict/update cycle; returns the posterior and the Kalman gain.
pub fn ekf_step_with_gain(
    ekf: &EkfState,
    y: &StateVector,
    cfg: &EkfConfig,
    mount: &ImuMount,
) -> Result<(EkfState, Matrix9), EstimationError> {
    let (prior, a) = process_model(&ekf.mean, cfg.sample_time);
    let p_prior = a * ekf.covariance * a.transpose() + Matrix9::from_diagonal(&cfg.process_noise);
    let (y_pred, c) = output_model(&prior, mount);
    let s = c * p_prior * c.transpose() + Matrix9::from_diagonal(&cfg.measurement_noise);
    let pct = p_prior * c.transpose();
    // K = P⁻Cᵀ S⁻¹, solved as S Kᵀ = C P⁻ with S symmetric.
    let gain = s
        .cholesky()
        .ok_or(EstimationError::InnovationCovarianceSingular)?
        .solve(&pct.transpose())
        .transpose();
    let mut innovation = y - y_pred;
    innovation[2] = wrap_angle(innovation[2]);
    let mean = KinematicState::from_vector(&(prior.to_vector() + gain * innovation));
    // Joseph form: same value as P⁻ − KCP⁻, without its cancellation.
    let i_kc = Matrix9::identity() - gain * c;
    let p = i_kc * p_prior * i_kc.transpose()
        + gain * Matrix9::from_diagonal(&cfg.measurement_noise) * gain.transpose();
    let covariance = 0.5 * (p + p.transpose());
    Ok((EkfState { mean, covariance }, gain))
}

pub fn ekf_step(
    ekf: &EkfState,
    y: &StateVector,
    cfg: &EkfConfig,
    mount: &ImuMount,
) -> Result<EkfState, EstimationError> {
    ekf_step_with_gain(ekf, y, cfg, mount).map(|(state, _)| state)
}

/// Observer gains, 1/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoConfig {
    pub gains: Vector3<f64>,
}

impl MoConfig {
    pub fn uniform(gain: f64) -> Self {
        Self {
            gains: Vector3::repeat(gain),
        }
    }

    pub fn validate(&self) -> Result<(), EstimationError> {
        if self.gains.iter().all(|k| *k > 0.0 && k.is_finite()) {
            Ok(())
        } else {
            Err(EstimationError::InvalidConfig("observer gains must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MoState {
    /// Integral of the modelled momentum rate.
    pub integral: Vector3<f64>,
    pub estimate: Wrench,
    momentum: Vector3<f64>,
    initialized: bool,
}

/// Generalized-momentum observer update.
///
/// The observer ODE is linear in the estimate, so it is integrated exactly
/// over one sample under a zero-order hold of the inputs. The integral is
/// initialized to the measured momentum, which starts the estimate at zero.
pub fn momentum_observer_step(
    mo: &MoState,
    terms: &DynamicsTerms,
    twist: &Vector3<f64>,
    f_m: &Wrench,
    cfg: &MoConfig,
    sample_time: f64,
) -> MoState {
    let momentum = terms.mass * twist;
    if !mo.initialized {
        return MoState {
            integral: momentum,
            estimate: Wrench::ZERO,
            momentum,
            initialized: true,
        };
    }
    // β = g + F_fr − Cᵀ ẋ
    let beta = (terms.gravity + terms.friction).to_vector() - terms.coriolis_matrix.transpose() * twist;
    let drive = f_m.to_vector() - beta;
    let rate = (momentum - mo.momentum) / sample_time;
    let previous = mo.estimate.to_vector();
    let estimate = Vector3::from_fn(|i, _| {
        let decay = (-cfg.gains[i] * sample_time).exp();
        decay * previous[i] + (1.0 - decay) * (rate[i] - drive[i])
    });
    let integral = Vector3::from_fn(|i, _| momentum[i] - estimate[i] / cfg.gains[i]);
    MoState {
        integral,
        estimate: Wrench::from_vector(&estimate),
        momentum,
        initialized: true,
    }
}

/// `M ẍ̂ + c + g + F_fr − F_m`.
pub fn direct_force(terms: &DynamicsTerms, accel_est: &Vector3<f64>, f_m: &Wrench) -> Wrench {
    Wrench::from_vector(&(terms.mass * accel_est + terms.bias() - f_m.to_vector()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservabilityReport {
    pub rank: usize,
    pub observable: bool,
    pub smallest_singular_value: f64,
}

/// Rank of `[C; CA; …; CA^{n−1}]`.
pub fn observability_rank<const N: usize, const M: usize>(
    a: &SMatrix<f64, N, N>,
    c: &SMatrix<f64, M, N>,
) -> ObservabilityReport {
    let mut stacked = DMatrix::<f64>::zeros(M * N, N);
    let mut block = *c;
    for k in 0..N {
        stacked.view_mut((k * M, 0), (M, N)).copy_from(&block);
        block *= a;
    }
    let sv = stacked.singular_values();
    let largest = sv.max();
    let tol = (largest * (M * N) as f64 * f64::EPSILON).max(1e-300);
    let rank = sv.iter().filter(|s| **s > tol).count();
    ObservabilityReport {
        rank,
        observable: rank == N,
        smallest_singular_value: sv.min(),
    }
}

/// Local observability of the linearized filter model at an operating point.
pub fn observability_check(state: &KinematicState, mount: &ImuMount, sample_time: f64) -> ObservabilityReport {
    let a = transition_matrix(sample_time);
    let (_, c) = output_model(state, mount);
    observability_rank(&a, &c)
}

/// Second-order Butterworth low-pass, bilinear transform with prewarping.
#[derive(Debug, Clone, Copy)]
pub struct Butterworth2 {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
    primed: bool,
}

impl Butterworth2 {
    pub fn new(cutoff_hz: f64, sample_rate: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff_hz / sample_rate).tan();
        let q = std::f64::consts::FRAC_1_SQRT_2;
        let norm = 1.0 / (1.0 + k / q + k * k);
        let b0 = k * k * norm;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
            x: [0.0; 2],
            y: [0.0; 2],
            primed: false,
        }
    }

    /// Filters one sample. The filter starts in steady state at the first input.
    pub fn update(&mut self, input: f64) -> f64 {
        if !self.primed {
            self.x = [input; 2];
            self.y = [input; 2];
            self.primed = true;
        }
        let out = self.b[0] * input + self.b[1] * self.x[0] + self.b[2] * self.x[1]
            - self.a[0] * self.y[0]
            - self.a[1] * self.y[1];
        self.x = [input, self.x[0]];
        self.y = [out, self.y[0]];
        out
    }
}

/// Causal acceleration estimate by low-pass filtering the FK pose and
/// differentiating twice.
#[derive(Debug, Clone)]
pub struct NumericAccelEstimator {
    filters: [Butterworth2; 3],
    history: Vec<Vector3<f64>>,
    sample_time: f64,
}

impl NumericAccelEstimator {
    pub const CUTOFF_HZ: f64 = 20.0;

    pub fn new(sample_time: f64) -> Self {
        let filter = Butterworth2::new(Self::CUTOFF_HZ, 1.0 / sample_time);
        Self {
            filters: [filter; 3],
            history: Vec::with_capacity(3),
            sample_time,
        }
    }

    pub fn update(&mut self, pose: &EePose) -> Vector3<f64> {
        let raw = pose.to_vector();
        let filtered = Vector3::from_fn(|i, _| self.filters[i].update(raw[i]));
        if self.history.len() == 3 {
            self.history.remove(0);
        }
        self.history.push(filtered);
        match self.history.as_slice() {
            [a, b, c] => (c - 2.0 * b + a) / (self.sample_time * self.sample_time),
            _ => Vector3::zeros(),
        }
    }
}
