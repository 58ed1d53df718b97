use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{SimulationError, Trajectory};
use crate::dynamics::Wrench;
use crate::kinematics::{ContactLocation, Posture, RobotGeometry};

/// Contact forces below this level do not count as contact.
pub const ONSET_FORCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    None,
    PlatformCollision,
    LinkCollision,
    Clamping,
}

/// A structure point pressed against a fixed obstacle surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub location: ContactLocation,
    /// Point on the obstacle surface, m.
    pub obstacle: Vector2<f64>,
    /// Unit surface normal pointing out of the obstacle, towards the robot.
    pub normal: Vector2<f64>,
}

impl ContactPoint {
    /// Places the obstacle where the reference motion puts the structure
    /// point at `onset`, facing against the point's velocity there.
    pub fn on_reference(
        location: ContactLocation,
        trajectory: &Trajectory,
        onset: f64,
        geo: &RobotGeometry,
    ) -> Result<Self, SimulationError> {
        let state = trajectory.state(trajectory.index_at(onset));
        let posture = Posture::new(&state.pose, geo)?;
        let point = posture.contact_point_pose(&location);
        let velocity = (posture.contact_jacobian(&location)? * state.twist).xy();
        let speed = velocity.norm();
        if speed < 1e-3 {
            return Err(SimulationError::InvalidScenario(format!(
                "contact point {location:?} is not moving at onset {onset} s; give the normal explicitly"
            )));
        }
        Ok(Self {
            location,
            obstacle: point.xy(),
            normal: -velocity / speed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactScenario {
    pub kind: ContactKind,
    pub points: Vec<ContactPoint>,
    /// Obstacle activation time, s.
    pub onset: f64,
    /// N/m.
    pub stiffness: f64,
    /// N·s/m.
    pub damping: f64,
}

impl ContactScenario {
    pub fn none() -> Self {
        Self {
            kind: ContactKind::None,
            points: Vec::new(),
            onset: 0.0,
            stiffness: 0.0,
            damping: 0.0,
        }
    }

    pub fn validate(&self, duration: f64) -> Result<(), SimulationError> {
        let invalid = |m: String| Err(SimulationError::InvalidScenario(m));
        let expected = match self.kind {
            ContactKind::None => 0,
            ContactKind::PlatformCollision | ContactKind::LinkCollision => 1,
            ContactKind::Clamping => 2,
        };
        if self.points.len() != expected {
            return invalid(format!("{:?} needs {expected} contact points, got {}", self.kind, self.points.len()));
        }
        if self.kind == ContactKind::None {
            return Ok(());
        }
        if !(0.0..=duration).contains(&self.onset) {
            return invalid(format!("onset {} s outside the trajectory duration {duration} s", self.onset));
        }
        if !(self.stiffness > 0.0 && self.damping >= 0.0) {
            return invalid("contact stiffness must be positive and damping non-negative".into());
        }
        for p in &self.points {
            p.location.validate()?;
            if self.kind == ContactKind::PlatformCollision && !matches!(p.location, ContactLocation::Platform { .. }) {
                return invalid("platform collision needs a platform location".into());
            }
            if self.kind == ContactKind::LinkCollision && !matches!(p.location, ContactLocation::Link { .. }) {
                return invalid("link collision needs a link location".into());
            }
            if ((p.normal.norm()) - 1.0).abs() > 1e-9 {
                return invalid("obstacle normal must be a unit vector".into());
            }
        }
        Ok(())
    }
}

/// True contact wrench on the platform and the force at each contact point.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactState {
    pub wrench: Wrench,
    pub forces: Vec<Vector2<f64>>,
}

impl ContactState {
    /// Largest contact-point force magnitude.
    pub fn peak_force(&self) -> f64 {
        self.forces.iter().map(|f| f.norm()).fold(0.0, f64::max)
    }
}

/// Penalty spring-damper contact: `max(0, k δ + d δ̇)` along the obstacle
/// normal while the point penetrates, zero before onset.
pub fn contact_force(
    scenario: &ContactScenario,
    posture: &Posture,
    twist: &Vector3<f64>,
    t: f64,
) -> Result<ContactState, SimulationError> {
    let mut state = ContactState {
        wrench: Wrench::ZERO,
        forces: vec![Vector2::zeros(); scenario.points.len()],
    };
    if scenario.kind == ContactKind::None || t < scenario.onset {
        return Ok(state);
    }
    for (point, force) in scenario.points.iter().zip(state.forces.iter_mut()) {
        let position = posture.contact_point_pose(&point.location).xy();
        let depth = (point.obstacle - position).dot(&point.normal);
        if depth <= 0.0 {
            continue;
        }
        let jacobian = posture.contact_jacobian(&point.location)?;
        let rate = -(jacobian * twist).xy().dot(&point.normal);
        let magnitude = (scenario.stiffness * depth + scenario.damping * rate).max(0.0);
        *force = magnitude * point.normal;
        state.wrench += Wrench::from_vector(&(jacobian.transpose() * Vector3::new(force.x, force.y, 0.0)));
    }
    Ok(state)
}
