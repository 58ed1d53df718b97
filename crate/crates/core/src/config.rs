//! Scenario configuration files.
//!
//! A scenario file is TOML, deep-merged over the bundled defaults so that it
//! only needs to state what differs. Sections carrying a `kind` key are
//! replaced as a whole when the kind changes. Unknown keys are rejected.

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Value;

use crate::dynamics::{DynamicsParams, LinkInertia};
use crate::estimation::{EkfConfig, StateVector};
use crate::detection::{Debounce, DetectorConfig, ThresholdFloor};
use crate::kinematics::{ContactLocation, ElbowBranch, RobotGeometry};
use crate::sensors::{
    CalibrationBounds, EncoderModel, ImuModel, ImuMount, PsoConfig, STANDARD_GRAVITY,
};
use crate::simulation::{
    generate_lissajous_trajectory, generate_rectangle_trajectory, generate_waypoint_trajectory, ContactKind,
    ContactPoint, ContactScenario, ControllerConfig, Lissajous, MotionLimits, Scenario, SimulationError, Trajectory,
};

pub const DEFAULTS: &str = include_str!("../configs/defaults.toml");

/// Scenario files shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("rectangle_contact_free", include_str!("../configs/rectangle_contact_free.toml")),
    ("platform_collision", include_str!("../configs/platform_collision.toml")),
    ("link1_collision", include_str!("../configs/link1_collision.toml")),
    ("link2_collision", include_str!("../configs/link2_collision.toml")),
    ("clamping", include_str!("../configs/clamping.toml")),
    ("calibration", include_str!("../configs/calibration.toml")),
];

/// The four contact scenarios of the latency comparison, in table order.
pub const CONTACT_SCENARIOS: [&str; 4] = ["platform_collision", "link1_collision", "link2_collision", "clamping"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no bundled config named `{0}`")]
    UnknownBundled(String),
    #[error("scenario construction failed: {0}")]
    Scenario(#[from] SimulationError),
}

fn invalid<T>(field: &str, reason: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    })
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        invalid(field, format!("must be positive, got {v}"))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        invalid(field, format!("must be non-negative, got {v}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    /// Control period, s.
    pub sample_time: f64,
    /// RK4 substeps per control period.
    pub substeps: usize,
    /// Simulated time after the reference ends, s.
    pub settle_time: f64,
    pub stop_on_detection: bool,
    pub geometry: GeometryConfig,
    pub dynamics: DynamicsConfig,
    pub controller: ControllerSection,
    pub encoder: EncoderConfig,
    pub imu: ImuConfig,
    pub trajectory: TrajectoryConfig,
    /// Contact-free motion used to calibrate detection thresholds.
    pub calibration_trajectory: TrajectoryConfig,
    pub contact: ContactConfig,
    pub ekf: EkfSection,
    pub observer: ObserverConfig,
    pub detection: DetectionConfig,
    pub mounting: MountingConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub base_radius: f64,
    pub platform_radius: f64,
    pub link1_length: f64,
    pub link2_length: f64,
    pub angle_offset_deg: f64,
    pub elbow: [ElbowBranch; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub link1_mass: f64,
    pub link2_mass: f64,
    pub platform_mass: f64,
    pub platform_inertia: f64,
    pub viscous: f64,
    pub coulomb: f64,
    pub coulomb_epsilon: f64,
    pub gravity: [f64; 2],
    /// Relative error of the estimator model against the plant.
    pub mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub kp: f64,
    pub kd: f64,
    pub force_limit: f64,
    pub moment_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub noise_std_deg: f64,
    pub resolution_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuConfig {
    pub accel_noise_density_g: f64,
    pub gyro_noise_density_deg_s: f64,
    pub accel_bias_g: f64,
    pub gyro_bias_deg_s: f64,
    pub accel_resolution_m_s2: f64,
    pub gyro_resolution_deg_s: f64,
    pub delay_samples: usize,
    pub sample_rate_hz: f64,
    pub mount_position_mm: [f64; 3],
    pub mount_euler_deg: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryConfig {
    Rectangle {
        corners: [[f64; 2]; 4],
        phi_deg: f64,
        v_max: f64,
        a_max: f64,
        dwell: f64,
    },
    Line {
        start: [f64; 2],
        end: [f64; 2],
        phi_deg: f64,
        v_max: f64,
        a_max: f64,
        dwell: f64,
    },
    Lissajous {
        center: [f64; 3],
        amplitude: [f64; 3],
        frequency_hz: [f64; 3],
        phase_rad: [f64; 3],
        duration: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactConfig {
    pub kind: ContactKind,
    pub locations: Vec<ContactLocation>,
    /// s.
    pub onset: f64,
    pub stiffness: f64,
    pub damping: f64,
    /// Explicit obstacle normals, one per location; derived from the
    /// reference motion when empty.
    #[serde(default)]
    pub normals: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EkfSection {
    /// Process variances of the pose, twist and acceleration blocks.
    pub process_noise: [f64; 3],
    /// Measurement variances of the pose, gyro and accelerometer blocks.
    pub measurement_noise: [f64; 3],
    pub initial_covariance: f64,
    /// Mounting assumed by the filter; the true mounting when absent.
    #[serde(default)]
    pub mount_position_mm: Option<[f64; 3]>,
    #[serde(default)]
    pub mount_euler_deg: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    pub gains: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// From a contact-free run of the calibration trajectory.
    Calibrate,
    /// `force_threshold` / `moment_threshold` for every method.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    pub mode: ThresholdMode,
    pub safety_factor: f64,
    pub force_floor: f64,
    pub moment_floor: f64,
    pub force_threshold: f64,
    pub moment_threshold: f64,
    /// Observer gain compared against the direct method at equal thresholds.
    pub paired_gain: f64,
    pub paired_force_threshold: f64,
    pub paired_moment_threshold: f64,
    pub debounce_required: usize,
    pub debounce_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountingConfig {
    pub trajectory: TrajectoryConfig,
    /// Multiplies the IMU noise densities of the calibration data.
    pub noise_scale: f64,
    pub include_bias: bool,
    pub center_position_mm: [f64; 3],
    pub center_euler_deg: [f64; 3],
    pub position_half_width_mm: f64,
    pub angle_half_width_deg: f64,
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

/// Recursively overlays `over` onto `base`.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            let kind_changes = o.get("kind").is_some_and(|k| b.get("kind") != Some(k));
            if kind_changes {
                *b = o;
                return;
            }
            for (key, value) in o {
                match b.get_mut(&key) {
                    Some(existing) => merge(existing, value),
                    None => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl ScenarioConfig {
    pub fn defaults() -> Self {
        Self::from_toml_str("").expect("bundled defaults are valid")
    }

    /// Parses a scenario file over the defaults and validates it.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut value: Value = DEFAULTS.parse::<toml::Table>().map(Value::Table).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let over = text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge(&mut value, Value::Table(over));
        let cfg: ScenarioConfig = value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn bundled(name: &str) -> Result<Self, ConfigError> {
        let (_, text) = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| ConfigError::UnknownBundled(name.to_string()))?;
        Self::from_toml_str(text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("sample_time", self.sample_time)?;
        if self.substeps == 0 {
            return invalid("substeps", "must be at least 1");
        }
        non_negative("settle_time", self.settle_time)?;

        let g = &self.geometry;
        positive("geometry.base_radius", g.base_radius)?;
        positive("geometry.platform_radius", g.platform_radius)?;
        positive("geometry.link1_length", g.link1_length)?;
        positive("geometry.link2_length", g.link2_length)?;
        if let Err(e) = self.robot_geometry().validate() {
            return invalid("geometry", e.to_string());
        }

        let d = &self.dynamics;
        positive("dynamics.link1_mass", d.link1_mass)?;
        positive("dynamics.link2_mass", d.link2_mass)?;
        positive("dynamics.platform_mass", d.platform_mass)?;
        positive("dynamics.platform_inertia", d.platform_inertia)?;
        non_negative("dynamics.viscous", d.viscous)?;
        non_negative("dynamics.coulomb", d.coulomb)?;
        positive("dynamics.coulomb_epsilon", d.coulomb_epsilon)?;
        if !(d.mismatch > -1.0 && d.mismatch.is_finite()) {
            return invalid("dynamics.mismatch", "must be greater than -1");
        }

        let c = &self.controller;
        positive("controller.kp", c.kp)?;
        positive("controller.kd", c.kd)?;
        positive("controller.force_limit", c.force_limit)?;
        positive("controller.moment_limit", c.moment_limit)?;

        non_negative("encoder.noise_std_deg", self.encoder.noise_std_deg)?;
        non_negative("encoder.resolution_deg", self.encoder.resolution_deg)?;

        let i = &self.imu;
        non_negative("imu.accel_noise_density_g", i.accel_noise_density_g)?;
        non_negative("imu.gyro_noise_density_deg_s", i.gyro_noise_density_deg_s)?;
        non_negative("imu.accel_bias_g", i.accel_bias_g)?;
        non_negative("imu.gyro_bias_deg_s", i.gyro_bias_deg_s)?;
        non_negative("imu.accel_resolution_m_s2", i.accel_resolution_m_s2)?;
        non_negative("imu.gyro_resolution_deg_s", i.gyro_resolution_deg_s)?;
        positive("imu.sample_rate_hz", i.sample_rate_hz)?;
        if (1.0 / i.sample_rate_hz - self.sample_time).abs() > 1e-12 {
            return invalid("imu.sample_rate_hz", "must equal 1 / sample_time");
        }

        validate_trajectory("trajectory", &self.trajectory)?;
        validate_trajectory("calibration_trajectory", &self.calibration_trajectory)?;
        validate_trajectory("mounting.trajectory", &self.mounting.trajectory)?;

        let k = &self.contact;
        if k.kind != ContactKind::None {
            non_negative("contact.onset", k.onset)?;
            positive("contact.stiffness", k.stiffness)?;
            non_negative("contact.damping", k.damping)?;
            for loc in &k.locations {
                if let Err(e) = loc.validate() {
                    return invalid("contact.locations", e.to_string());
                }
            }
            if !k.normals.is_empty() && k.normals.len() != k.locations.len() {
                return invalid("contact.normals", "needs one normal per location");
            }
        }

        let e = &self.ekf;
        for (name, v) in [("ekf.process_noise", e.process_noise), ("ekf.measurement_noise", e.measurement_noise)] {
            for x in v {
                positive(name, x)?;
            }
        }
        positive("ekf.initial_covariance", e.initial_covariance)?;

        if self.observer.gains.is_empty() {
            return invalid("observer.gains", "needs at least one gain");
        }
        for &gain in &self.observer.gains {
            positive("observer.gains", gain)?;
        }

        let t = &self.detection;
        positive("detection.safety_factor", t.safety_factor)?;
        positive("detection.force_floor", t.force_floor)?;
        positive("detection.moment_floor", t.moment_floor)?;
        positive("detection.force_threshold", t.force_threshold)?;
        positive("detection.moment_threshold", t.moment_threshold)?;
        positive("detection.paired_gain", t.paired_gain)?;
        positive("detection.paired_force_threshold", t.paired_force_threshold)?;
        positive("detection.paired_moment_threshold", t.paired_moment_threshold)?;
        if t.debounce_required == 0 || t.debounce_required > t.debounce_window {
            return invalid("detection.debounce_required", "needs 1 <= required <= window");
        }

        let m = &self.mounting;
        positive("mounting.noise_scale", m.noise_scale)?;
        positive("mounting.position_half_width_mm", m.position_half_width_mm)?;
        positive("mounting.angle_half_width_deg", m.angle_half_width_deg)?;
        if m.particles == 0 {
            return invalid("mounting.particles", "must be at least 1");
        }
        Ok(())
    }

    pub fn robot_geometry(&self) -> RobotGeometry {
        let g = &self.geometry;
        RobotGeometry::symmetric(
            g.base_radius,
            g.platform_radius,
            g.link1_length,
            g.link2_length,
            g.angle_offset_deg.to_radians(),
            g.elbow,
        )
    }

    /// Parameters of the simulated plant.
    pub fn plant_params(&self) -> DynamicsParams {
        let d = &self.dynamics;
        let g = &self.geometry;
        DynamicsParams {
            links: [[
                LinkInertia::rod(d.link1_mass, g.link1_length),
                LinkInertia::rod(d.link2_mass, g.link2_length),
            ]; 3],
            platform_mass: d.platform_mass,
            platform_inertia: d.platform_inertia,
            viscous: [d.viscous; 3],
            coulomb: [d.coulomb; 3],
            coulomb_epsilon: d.coulomb_epsilon,
            torque_constant: 1.0,
            gravity: d.gravity,
        }
    }

    /// Parameters of the controller and estimators.
    pub fn model_params(&self) -> DynamicsParams {
        self.plant_params().perturbed(self.dynamics.mismatch)
    }

    pub fn controller(&self) -> ControllerConfig {
        let c = &self.controller;
        ControllerConfig {
            kp: c.kp,
            kd: c.kd,
            force_limit: c.force_limit,
            moment_limit: c.moment_limit,
            feedforward: true,
        }
    }

    pub fn encoder_model(&self) -> EncoderModel {
        EncoderModel::from_deg(self.encoder.noise_std_deg, self.encoder.resolution_deg)
    }

    pub fn imu_mount(&self) -> ImuMount {
        ImuMount::from_mm_deg(self.imu.mount_position_mm, self.imu.mount_euler_deg)
    }

    pub fn imu_model(&self) -> ImuModel {
        let i = &self.imu;
        ImuModel {
            accel_noise_density: i.accel_noise_density_g * STANDARD_GRAVITY,
            gyro_noise_density: i.gyro_noise_density_deg_s.to_radians(),
            accel_bias_range: i.accel_bias_g * STANDARD_GRAVITY,
            gyro_bias_range: i.gyro_bias_deg_s.to_radians(),
            accel_resolution: i.accel_resolution_m_s2,
            gyro_resolution: i.gyro_resolution_deg_s.to_radians(),
            delay: i.delay_samples,
            sample_rate: i.sample_rate_hz,
            mount: self.imu_mount(),
        }
    }

    pub fn estimator_mount(&self) -> ImuMount {
        let e = &self.ekf;
        let truth = self.imu_mount();
        ImuMount {
            position: e.mount_position_mm.map_or(truth.position, |p| ImuMount::from_mm_deg(p, [0.0; 3]).position),
            euler_xyz: e.mount_euler_deg.map_or(truth.euler_xyz, |a| ImuMount::from_mm_deg([0.0; 3], a).euler_xyz),
        }
    }

    pub fn ekf_config(&self) -> EkfConfig {
        let e = &self.ekf;
        let block = |v: [f64; 3]| StateVector::from_fn(|i, _| v[i / 3]);
        EkfConfig {
            process_noise: block(e.process_noise),
            measurement_noise: block(e.measurement_noise),
            initial_covariance: StateVector::repeat(e.initial_covariance),
            sample_time: self.sample_time,
        }
    }

    pub fn build_trajectory(&self, spec: &TrajectoryConfig) -> Result<Trajectory, ConfigError> {
        Ok(build_trajectory(spec, self.sample_time, &self.robot_geometry())?)
    }

    /// Contact geometry; obstacles sit where the reference puts each point at onset.
    pub fn contact_scenario(&self, trajectory: &Trajectory) -> Result<ContactScenario, ConfigError> {
        let k = &self.contact;
        if k.kind == ContactKind::None {
            return Ok(ContactScenario::none());
        }
        let geo = self.robot_geometry();
        let points = k
            .locations
            .iter()
            .enumerate()
            .map(|(i, loc)| {
                let mut p = ContactPoint::on_reference(*loc, trajectory, k.onset, &geo);
                if let Some(n) = k.normals.get(i) {
                    let normal = Vector2::new(n[0], n[1]);
                    if normal.norm() == 0.0 {
                        return invalid("contact.normals", "must be non-zero");
                    }
                    let state = trajectory.state(trajectory.index_at(k.onset));
                    let posture = crate::kinematics::Posture::new(&state.pose, &geo).map_err(SimulationError::from)?;
                    p = Ok(ContactPoint {
                        location: *loc,
                        obstacle: posture.contact_point_pose(loc).xy(),
                        normal: normal.normalize(),
                    });
                }
                Ok(p?)
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let scenario = ContactScenario {
            kind: k.kind,
            points,
            onset: k.onset,
            stiffness: k.stiffness,
            damping: k.damping,
        };
        if let Err(e) = scenario.validate(trajectory.duration()) {
            return invalid("contact", e.to_string());
        }
        Ok(scenario)
    }

    fn assemble(&self, name: String, trajectory: Trajectory, contact: ContactScenario, seed: u64) -> Scenario {
        let stop_on = self.stop_on_detection.then_some(match self.detection.mode {
            ThresholdMode::Fixed => (self.detection.force_threshold, self.detection.moment_threshold),
            ThresholdMode::Calibrate => (self.detection.paired_force_threshold, self.detection.paired_moment_threshold),
        });
        Scenario {
            name,
            geometry: self.robot_geometry(),
            plant: self.plant_params(),
            model: self.model_params(),
            controller: self.controller(),
            encoder: self.encoder_model(),
            imu: self.imu_model(),
            estimator_mount: self.estimator_mount(),
            trajectory,
            contact,
            ekf: self.ekf_config(),
            observer_gains: self.observer.gains.clone(),
            substeps: self.substeps,
            seed,
            settle_time: self.settle_time,
            stop_on,
        }
    }

    /// The configured run.
    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let trajectory = self.build_trajectory(&self.trajectory)?;
        let contact = self.contact_scenario(&trajectory)?;
        Ok(self.assemble(self.name.clone(), trajectory, contact, self.seed))
    }

    /// Contact-free run of the calibration trajectory with the next seed.
    pub fn threshold_calibration_scenario(&self) -> Result<Scenario, ConfigError> {
        let trajectory = self.build_trajectory(&self.calibration_trajectory)?;
        let mut s = self.assemble(format!("{}_calibration", self.name), trajectory, ContactScenario::none(), self.seed.wrapping_add(1));
        s.stop_on = None;
        Ok(s)
    }

    pub fn detector(&self, force: f64, moment: f64) -> DetectorConfig {
        DetectorConfig {
            force_threshold: force,
            moment_threshold: moment,
            safety_factor: self.detection.safety_factor,
            debounce: Debounce {
                required: self.detection.debounce_required,
                window: self.detection.debounce_window,
            },
        }
    }

    pub fn threshold_floor(&self) -> ThresholdFloor {
        ThresholdFloor {
            force: self.detection.force_floor,
            moment: self.detection.moment_floor,
        }
    }

    pub fn calibration_bounds(&self) -> CalibrationBounds {
        let m = &self.mounting;
        CalibrationBounds {
            center: ImuMount::from_mm_deg(m.center_position_mm, m.center_euler_deg),
            position_half_width: m.position_half_width_mm * 1e-3,
            angle_half_width: m.angle_half_width_deg.to_radians(),
        }
    }

    pub fn pso_config(&self) -> PsoConfig {
        let m = &self.mounting;
        PsoConfig {
            particles: m.particles,
            iterations: m.iterations,
            inertia: m.inertia,
            cognitive: m.cognitive,
            social: m.social,
            seed: self.seed,
        }
    }
}

fn validate_trajectory(field: &str, t: &TrajectoryConfig) -> Result<(), ConfigError> {
    match t {
        TrajectoryConfig::Rectangle { v_max, a_max, dwell, .. } | TrajectoryConfig::Line { v_max, a_max, dwell, .. } => {
            positive(&format!("{field}.v_max"), *v_max)?;
            positive(&format!("{field}.a_max"), *a_max)?;
            non_negative(&format!("{field}.dwell"), *dwell)
        }
        TrajectoryConfig::Lissajous { duration, frequency_hz, .. } => {
            positive(&format!("{field}.duration"), *duration)?;
            for f in frequency_hz {
                non_negative(&format!("{field}.frequency_hz"), *f)?;
            }
            Ok(())
        }
    }
}

pub fn build_trajectory(
    spec: &TrajectoryConfig,
    sample_time: f64,
    geo: &RobotGeometry,
) -> Result<Trajectory, SimulationError> {
    let v2 = |p: &[f64; 2]| Vector2::new(p[0], p[1]);
    match spec {
        TrajectoryConfig::Rectangle { corners, phi_deg, v_max, a_max, dwell } => generate_rectangle_trajectory(
            &corners.map(|c| v2(&c)),
            phi_deg.to_radians(),
            MotionLimits { v_max: *v_max, a_max: *a_max },
            *dwell,
            sample_time,
            geo,
        ),
        TrajectoryConfig::Line { start, end, phi_deg, v_max, a_max, dwell } => generate_waypoint_trajectory(
            &[v2(start), v2(end)],
            phi_deg.to_radians(),
            MotionLimits { v_max: *v_max, a_max: *a_max },
            *dwell,
            sample_time,
            geo,
        ),
        TrajectoryConfig::Lissajous { center, amplitude, frequency_hz, phase_rad, duration } => {
            generate_lissajous_trajectory(
                &Lissajous {
                    center: *center,
                    amplitude: *amplitude,
                    frequency: *frequency_hz,
                    phase: *phase_rad,
                    duration: *duration,
                },
                sample_time,
                geo,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let cfg = ScenarioConfig::defaults();
        assert_eq!(cfg.observer.gains, vec![20.0, 100.0, 135.0, 200.0, 500.0]);
        assert_eq!(cfg.ekf.process_noise, [0.01, 10.0, 1e5]);
    }

    #[test]
    fn every_bundled_config_validates() {
        for (name, _) in BUNDLED {
            ScenarioConfig::bundled(name).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ScenarioConfig::from_toml_str("[dynamics]\nlink_mas = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("link_mas"), "{err}");
    }

    #[test]
    fn negative_mass_names_the_field() {
        let err = ScenarioConfig::from_toml_str("[dynamics]\nplatform_mass = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("dynamics.platform_mass"), "{err}");
    }

    #[test]
    fn kind_change_replaces_the_section() {
        let text = "[trajectory]\nkind = \"line\"\nstart = [0.0, 0.0]\nend = [0.05, 0.0]\nphi_deg = 0.0\nv_max = 0.45\na_max = 5.0\ndwell = 0.05\n";
        let cfg = ScenarioConfig::from_toml_str(text).unwrap();
        assert!(matches!(cfg.trajectory, TrajectoryConfig::Line { .. }));
    }

    #[test]
    fn serialized_config_round_trips() {
        let cfg = ScenarioConfig::bundled("platform_collision").unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }
}
