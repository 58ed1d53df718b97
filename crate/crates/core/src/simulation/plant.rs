use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::SimulationError;
use crate::dynamics::{forward_dynamics, kinetic_energy, potential_energy, DynamicsParams, DynamicsTerms, Wrench};
use crate::estimation::KinematicState;
use crate::kinematics::{EePose, Posture, RobotGeometry};

/// Minimal-coordinate state of the rigid-body plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub pose: EePose,
    pub twist: Vector3<f64>,
}

impl PlantState {
    pub fn at_rest(pose: EePose) -> Self {
        Self {
            pose,
            twist: Vector3::zeros(),
        }
    }

    pub fn posture(&self, geo: &RobotGeometry) -> Result<Posture, SimulationError> {
        Ok(Posture::new(&self.pose, geo)?)
    }

    fn to_vector(self) -> SVector<f64, 6> {
        let p = self.pose.to_vector();
        SVector::<f64, 6>::new(p.x, p.y, p.z, self.twist.x, self.twist.y, self.twist.z)
    }

    fn from_vector(v: &SVector<f64, 6>) -> Self {
        Self {
            pose: EePose::new(v[0], v[1], v[2]),
            twist: Vector3::new(v[3], v[4], v[5]),
        }
    }
}

/// Kinetic plus potential energy.
pub fn mechanical_energy(state: &PlantState, geo: &RobotGeometry, params: &DynamicsParams) -> Result<f64, SimulationError> {
    let posture = state.posture(geo)?;
    Ok(kinetic_energy(&posture, &state.twist, params) + potential_energy(&posture, params))
}

/// Plant acceleration under a motor wrench and a state-dependent external wrench.
pub fn plant_acceleration<F>(
    state: &PlantState,
    f_m: &Wrench,
    external: &mut F,
    geo: &RobotGeometry,
    params: &DynamicsParams,
) -> Result<(Vector3<f64>, Wrench), SimulationError>
where
    F: FnMut(&Posture, &Vector3<f64>) -> Result<Wrench, SimulationError>,
{
    let posture = state.posture(geo)?;
    let f_ext = external(&posture, &state.twist)?;
    let accel = forward_dynamics(&posture, &state.twist, f_m, &f_ext, params)?;
    Ok((accel, f_ext))
}

/// Advances the plant by `dt` with `substeps` classical RK4 steps. The motor
/// wrench is held; the external wrench is re-evaluated at every stage.
/// Joint angles follow from the pose by inverse kinematics, so the loop
/// closure holds exactly at every returned state.
pub fn step_plant<F>(
    state: &PlantState,
    f_m: &Wrench,
    mut external: F,
    dt: f64,
    substeps: usize,
    geo: &RobotGeometry,
    params: &DynamicsParams,
) -> Result<PlantState, SimulationError>
where
    F: FnMut(&Posture, &Vector3<f64>) -> Result<Wrench, SimulationError>,
{
    if !(dt > 0.0) || substeps == 0 {
        return Err(SimulationError::InvalidScenario("step size and substep count must be positive".into()));
    }
    let h = dt / substeps as f64;
    let mut x = state.to_vector();
    let mut deriv = |v: &SVector<f64, 6>| -> Result<SVector<f64, 6>, SimulationError> {
        // Raw angle: the stage states must not be wrapped mid-step.
        let mut s = PlantState::from_vector(v);
        s.pose.phi = v[2];
        let (accel, _) = plant_acceleration(&s, f_m, &mut external, geo, params)?;
        Ok(SVector::<f64, 6>::new(v[3], v[4], v[5], accel.x, accel.y, accel.z))
    };
    for _ in 0..substeps {
        let k1 = deriv(&x)?;
        let k2 = deriv(&(x + 0.5 * h * k1))?;
        let k3 = deriv(&(x + 0.5 * h * k2))?;
        let k4 = deriv(&(x + h * k3))?;
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let next = PlantState::from_vector(&x);
    next.posture(geo)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// 1/s².
    pub kp: f64,
    /// 1/s.
    pub kd: f64,
    /// Per-component bound on the commanded force, N.
    pub force_limit: f64,
    /// Bound on the commanded moment, N·m.
    pub moment_limit: f64,
    /// Disables the model feedforward, leaving only PD feedback.
    pub feedforward: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kp: 400.0,
            kd: 40.0,
            force_limit: 500.0,
            moment_limit: 50.0,
            feedforward: true,
        }
    }
}

/// Computed-torque tracking in operational space with the estimator model,
/// saturated per component.
pub fn tracking_controller(
    reference: &KinematicState,
    pose: &EePose,
    twist: &Vector3<f64>,
    terms: &DynamicsTerms,
    cfg: &ControllerConfig,
) -> Wrench {
    let mut e = reference.pose.to_vector() - pose.to_vector();
    e.z = crate::kinematics::wrap_angle(e.z);
    let e_dot = reference.twist - twist;
    let feedback = cfg.kp * e + cfg.kd * e_dot;
    let command = if cfg.feedforward {
        terms.mass * (reference.accel + feedback) + terms.bias()
    } else {
        terms.mass * feedback
    };
    Wrench::new(
        command.x.clamp(-cfg.force_limit, cfg.force_limit),
        command.y.clamp(-cfg.force_limit, cfg.force_limit),
        command.z.clamp(-cfg.moment_limit, cfg.moment_limit),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_contact(_: &Posture, _: &Vector3<f64>) -> Result<Wrench, SimulationError> {
        Ok(Wrench::ZERO)
    }

    #[test]
    fn rest_without_forces_is_a_fixed_point() {
        let geo = RobotGeometry::default();
        let params = DynamicsParams::default();
        let s = PlantState::at_rest(EePose::new(0.01, -0.02, 0.1));
        let next = step_plant(&s, &Wrench::ZERO, no_contact, 1e-3, 10, &geo, &params).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn saturation_clamps_each_component() {
        let geo = RobotGeometry::default();
        let posture = Posture::new(&EePose::default(), &geo).unwrap();
        let terms = DynamicsTerms::evaluate(&posture, &Vector3::zeros(), &DynamicsParams::default());
        let cfg = ControllerConfig {
            force_limit: 3.0,
            moment_limit: 0.2,
            ..ControllerConfig::default()
        };
        let reference = KinematicState::at_rest(EePose::new(0.1, -0.1, 0.3));
        let w = tracking_controller(&reference, &EePose::default(), &Vector3::zeros(), &terms, &cfg);
        assert_eq!(w, Wrench::new(3.0, -3.0, 0.2));
    }

    #[test]
    fn zero_error_is_pure_feedforward() {
        let geo = RobotGeometry::default();
        let params = DynamicsParams::default();
        let pose = EePose::new(0.02, 0.0, 0.0);
        let twist = Vector3::new(0.3, 0.1, 0.5);
        let posture = Posture::new(&pose, &geo).unwrap();
        let terms = DynamicsTerms::evaluate(&posture, &twist, &params);
        let reference = KinematicState {
            pose,
            twist,
            accel: Vector3::new(1.0, 2.0, 3.0),
        };
        let w = tracking_controller(&reference, &pose, &twist, &terms, &ControllerConfig::default());
        let expected = terms.mass * reference.accel + terms.bias();
        assert!((w.to_vector() - expected).norm() < 1e-12);
    }
}
