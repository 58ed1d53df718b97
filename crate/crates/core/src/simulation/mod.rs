//! Closed-loop plant simulation with sensors, estimators and contact injection.
//!
//! One control tick, in order: encoders are read and the pose is recovered by
//! forward kinematics, the controller computes the motor wrench, the true
//! acceleration under that wrench is sampled by the IMU, the estimators are
//! updated, and finally the plant is integrated over the tick with the motor
//! wrench held.

mod contact;
mod plant;
mod trajectory;

use std::io::Write;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use contact::{contact_force, ContactKind, ContactPoint, ContactScenario, ContactState, ONSET_FORCE};
pub use plant::{
    mechanical_energy, plant_acceleration, step_plant, tracking_controller, ControllerConfig, PlantState,
};
pub use trajectory::{
    generate_lissajous_trajectory, generate_rectangle_trajectory, generate_waypoint_trajectory, Lissajous,
    MotionLimits, Trajectory,
};

use crate::dynamics::{DynamicsError, DynamicsParams, DynamicsTerms, Wrench};
use crate::estimation::{
    direct_force, ekf_step, measurement, momentum_observer_step, EkfConfig, EkfState, EstimationError,
    KinematicState, MoConfig, MoState, NumericAccelEstimator,
};
use crate::kinematics::{wrap_angle, 
    constraint_residual, forward_kinematics, inverse_kinematics, EePose, KinematicsError, Posture, RobotGeometry,
};
use crate::sensors::{imu_true_outputs, sample_encoders, EncoderModel, ImuModel, ImuMount, ImuSample, ImuSimulator, SensorError};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("waypoint {0} is not reachable: {1}")]
    UnreachableWaypoint(usize, KinematicsError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("at t = {t:.3} s: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<SimulationError>,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Fully resolved inputs of one closed-loop run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub geometry: RobotGeometry,
    /// Parameters of the simulated plant.
    pub plant: DynamicsParams,
    /// Parameters used by the controller and the force estimators.
    pub model: DynamicsParams,
    pub controller: ControllerConfig,
    pub encoder: EncoderModel,
    pub imu: ImuModel,
    /// Mounting assumed by the EKF output model.
    pub estimator_mount: ImuMount,
    pub trajectory: Trajectory,
    pub contact: ContactScenario,
    pub ekf: EkfConfig,
    pub observer_gains: Vec<f64>,
    pub substeps: usize,
    pub seed: u64,
    /// Extra simulated time after the reference ends, s.
    pub settle_time: f64,
    /// Ends the run at the first direct-method detection.
    pub stop_on: Option<(f64, f64)>,
}

impl Scenario {
    pub fn sample_time(&self) -> f64 {
        self.trajectory.sample_time
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        self.geometry.validate()?;
        self.plant.validate()?;
        self.model.validate()?;
        self.encoder.validate()?;
        self.imu.validate()?;
        self.ekf.validate()?;
        for &k in &self.observer_gains {
            MoConfig::uniform(k).validate()?;
        }
        if self.trajectory.is_empty() {
            return Err(SimulationError::InvalidScenario("empty trajectory".into()));
        }
        if (self.ekf.sample_time - self.sample_time()).abs() > 1e-15 {
            return Err(SimulationError::InvalidScenario("EKF and trajectory sample times differ".into()));
        }
        if self.substeps == 0 {
            return Err(SimulationError::InvalidScenario("substeps must be positive".into()));
        }
        self.contact.validate(self.trajectory.duration())
    }
}

/// Everything recorded at one control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub reference: KinematicState,
    pub truth: KinematicState,
    pub q_a: Vector3<f64>,
    pub q_a_measured: Vector3<f64>,
    pub pose_measured: EePose,
    pub twist_measured: Vector3<f64>,
    pub imu: ImuSample,
    pub motor: Wrench,
    pub external: Wrench,
    /// Largest contact-point force, N.
    pub contact_force: f64,
    pub ekf_accel: Vector3<f64>,
    pub numeric_accel: Vector3<f64>,
    pub direct: Wrench,
    /// One estimate per observer gain.
    pub observers: Vec<Wrench>,
    /// Largest loop-closure residual of the plant joints, m.
    pub loop_closure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub name: String,
    pub sample_time: f64,
    pub observer_gains: Vec<f64>,
    pub records: Vec<TickRecord>,
}

impl SimLog {
    /// First tick with contact force above [`ONSET_FORCE`].
    pub fn onset_index(&self) -> Option<usize> {
        self.records.iter().position(|r| r.contact_force > ONSET_FORCE)
    }

    pub fn onset(&self) -> Option<f64> {
        self.onset_index().map(|k| self.records[k].t)
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn direct_series(&self) -> Vec<Wrench> {
        self.records.iter().map(|r| r.direct).collect()
    }

    pub fn observer_series(&self, index: usize) -> Vec<Wrench> {
        self.records.iter().map(|r| r.observers[index]).collect()
    }

    pub fn external_series(&self) -> Vec<Wrench> {
        self.records.iter().map(|r| r.external).collect()
    }

    fn gain_label(gain: f64) -> String {
        format!("{gain}").replace('.', "p")
    }

    /// Header of [`Self::write_csv`] with unit suffixes.
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "t_s", "ref_x_m", "ref_y_m", "ref_phi_rad", "x_m", "y_m", "phi_rad", "vx_m_s", "vy_m_s", "wz_rad_s",
            "ax_m_s2", "ay_m_s2", "alpha_rad_s2", "qa1_rad", "qa2_rad", "qa3_rad", "qa1_meas_rad", "qa2_meas_rad",
            "qa3_meas_rad", "x_meas_m", "y_meas_m", "phi_meas_rad", "vx_meas_m_s", "vy_meas_m_s", "wz_meas_rad_s",
            "gyro_x_rad_s", "gyro_y_rad_s", "gyro_z_rad_s", "acc_x_m_s2", "acc_y_m_s2", "acc_z_m_s2", "fm_x_N",
            "fm_y_N", "mm_z_Nm", "fext_x_N", "fext_y_N", "mext_z_Nm", "contact_force_N", "ekf_ax_m_s2",
            "ekf_ay_m_s2", "ekf_alpha_rad_s2", "num_ax_m_s2", "num_ay_m_s2", "num_alpha_rad_s2", "direct_fx_N",
            "direct_fy_N", "direct_mz_Nm",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for &k in &self.observer_gains {
            let g = Self::gain_label(k);
            h.extend([format!("mo{g}_fx_N"), format!("mo{g}_fy_N"), format!("mo{g}_mz_Nm")]);
        }
        h.push("loop_closure_m".into());
        h
    }

    /// One row per tick; `extra` appends named boolean columns (e.g. detection flags).
    pub fn write_csv<W: Write>(&self, writer: W, extra: &[(String, Vec<bool>)]) -> Result<(), SimulationError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.csv_header();
        header.extend(extra.iter().map(|(name, _)| name.clone()));
        w.write_record(&header)?;
        for (k, r) in self.records.iter().enumerate() {
            let mut row: Vec<f64> = vec![r.t];
            row.extend(r.reference.pose.to_vector().iter());
            row.extend(r.truth.pose.to_vector().iter());
            row.extend(r.truth.twist.iter());
            row.extend(r.truth.accel.iter());
            row.extend(r.q_a.iter());
            row.extend(r.q_a_measured.iter());
            row.extend(r.pose_measured.to_vector().iter());
            row.extend(r.twist_measured.iter());
            row.extend(r.imu.omega.iter());
            row.extend(r.imu.accel.iter());
            row.extend(r.motor.to_vector().iter());
            row.extend(r.external.to_vector().iter());
            row.push(r.contact_force);
            row.extend(r.ekf_accel.iter());
            row.extend(r.numeric_accel.iter());
            row.extend(r.direct.to_vector().iter());
            for o in &r.observers {
                row.extend(o.to_vector().iter());
            }
            row.push(r.loop_closure);
            let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            fields.extend(extra.iter().map(|(_, flags)| u8::from(flags.get(k).copied().unwrap_or(false)).to_string()));
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the closed loop tick by tick. Deterministic for a given scenario.
pub fn run_scenario(scenario: &Scenario) -> Result<SimLog, SimulationError> {
    scenario.validate()?;
    let geo = &scenario.geometry;
    let dt = scenario.sample_time();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut imu = ImuSimulator::new(scenario.imu, &mut rng);

    let start = scenario.trajectory.state(0);
    let mut plant = PlantState {
        pose: start.pose,
        twist: start.twist,
    };
    let mut pose_guess = start.pose;
    let mut q_a_previous: Option<Vector3<f64>> = None;
    let mut reference_q_a_previous: Option<Vector3<f64>> = None;
    let mut ekf: Option<EkfState> = None;
    let mut numeric = NumericAccelEstimator::new(dt);
    let observer_cfgs: Vec<MoConfig> = scenario.observer_gains.iter().map(|&k| MoConfig::uniform(k)).collect();
    let mut observers = vec![MoState::default(); observer_cfgs.len()];

    let ticks = scenario.trajectory.len() + (scenario.settle_time / dt).round() as usize;
    let mut records = Vec::with_capacity(ticks);
    for k in 0..ticks {
        let t = k as f64 * dt;
        let at = |e: SimulationError| SimulationError::AtTime { t, source: Box::new(e) };
        let reference = scenario.trajectory.state(k);

        // Sensing: encoders, forward kinematics, differential kinematics.
        let joints = inverse_kinematics(&plant.pose, geo).map_err(|e| at(e.into()))?;
        let true_posture = Posture::from_joints(&joints, &plant.pose, geo).map_err(|e| at(e.into()))?;
        let q_a = joints.active();
        let q_a_measured = sample_encoders(&q_a, &scenario.encoder, &mut rng);
        let fk = forward_kinematics(&q_a_measured, &pose_guess, geo).map_err(|e| at(e.into()))?;
        let pose_measured = fk.pose;
        pose_guess = pose_measured;
        let posture = Posture::new(&pose_measured, geo).map_err(|e| at(e.into()))?;
        let q_a_rate = q_a_previous.map_or(Vector3::zeros(), |prev| (q_a_measured - prev).map(wrap_angle) / dt);
        q_a_previous = Some(q_a_measured);
        let twist_measured = posture.jacobian_x_qa() * q_a_rate;
        let terms = DynamicsTerms::evaluate(&posture, &twist_measured, &scenario.model);

        // Control. The reference twist is differentiated like the measured
        // one, so the half-tick lag of the backward difference cancels.
        let reference_posture = Posture::new(&reference.pose, geo).map_err(|e| at(e.into()))?;
        let reference_q_a = reference_posture.joints.active();
        let reference_q_a_rate =
            reference_q_a_previous.map_or(Vector3::zeros(), |prev| (reference_q_a - prev).map(wrap_angle) / dt);
        reference_q_a_previous = Some(reference_q_a);
        // The feedforward is held for a whole tick, so it uses the mean
        // reference acceleration over that tick.
        let next_reference = scenario.trajectory.state(k + 1);
        let lagged_reference = KinematicState {
            twist: reference_posture.jacobian_x_qa() * reference_q_a_rate,
            accel: (next_reference.twist - reference.twist) / dt,
            ..reference
        };
        let motor =
            tracking_controller(&lagged_reference, &pose_measured, &twist_measured, &terms, &scenario.controller);

        // True motion at this tick.
        let contact = contact_force(&scenario.contact, &true_posture, &plant.twist, t).map_err(at)?;
        let accel = crate::dynamics::forward_dynamics(&true_posture, &plant.twist, &motor, &contact.wrench, &scenario.plant)
            .map_err(|e| at(e.into()))?;
        let truth = KinematicState {
            pose: plant.pose,
            twist: plant.twist,
            accel,
        };
        let (omega, specific_force) = imu_true_outputs(&truth, &scenario.imu.mount);
        let imu_sample = imu.sample(&omega, &specific_force, t, &mut rng);

        // Estimation.
        let y = measurement(&pose_measured, &imu_sample);
        let filter = match ekf {
            None => EkfState::new(KinematicState::at_rest(pose_measured), &scenario.ekf),
            Some(state) => state,
        };
        let filter = ekf_step(&filter, &y, &scenario.ekf, &scenario.estimator_mount).map_err(|e| at(e.into()))?;
        ekf = Some(filter);
        let numeric_accel = numeric.update(&pose_measured);
        for (state, cfg) in observers.iter_mut().zip(&observer_cfgs) {
            *state = momentum_observer_step(state, &terms, &twist_measured, &motor, cfg, dt);
        }
        let direct = direct_force(&terms, &filter.mean.accel, &motor);

        let loop_closure = constraint_residual(&joints, &plant.pose, geo).amax();
        records.push(TickRecord {
            t,
            reference,
            truth,
            q_a,
            q_a_measured,
            pose_measured,
            twist_measured,
            imu: imu_sample,
            motor,
            external: contact.wrench,
            contact_force: contact.peak_force(),
            ekf_accel: filter.mean.accel,
            numeric_accel,
            direct,
            observers: observers.iter().map(|o| o.estimate).collect(),
            loop_closure,
        });

        if let Some((force, moment)) = scenario.stop_on {
            if direct.fx.abs() > force || direct.fy.abs() > force || direct.mz.abs() > moment {
                break;
            }
        }

        let contact_spec = &scenario.contact;
        plant = step_plant(
            &plant,
            &motor,
            |posture, twist| Ok(contact_force(contact_spec, posture, twist, t)?.wrench),
            dt,
            scenario.substeps,
            geo,
            &scenario.plant,
        )
        .map_err(at)?;
    }

    Ok(SimLog {
        name: scenario.name.clone(),
        sample_time: dt,
        observer_gains: scenario.observer_gains.clone(),
        records,
    })
}
