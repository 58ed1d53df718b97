use std::f64::consts::TAU;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::SimulationError;
use crate::estimation::KinematicState;
use crate::kinematics::{EePose, Posture, RobotGeometry};

/// Path-norm speed and acceleration limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionLimits {
    /// m/s.
    pub v_max: f64,
    /// m/s².
    pub a_max: f64,
}

/// Reference motion sampled at the control rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sample_time: f64,
    pub samples: Vec<KinematicState>,
    pub limits: Option<MotionLimits>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len().saturating_sub(1) as f64 * self.sample_time
    }

    /// Sample `k`; past the end the last pose is held at rest.
    pub fn state(&self, k: usize) -> KinematicState {
        match self.samples.get(k) {
            Some(s) => *s,
            None => KinematicState::at_rest(self.samples.last().map(|s| s.pose).unwrap_or_default()),
        }
    }

    /// Index of the sample nearest to `t`.
    pub fn index_at(&self, t: f64) -> usize {
        ((t / self.sample_time).round().max(0.0) as usize).min(self.samples.len().saturating_sub(1))
    }

    fn check_workspace(&self, geo: &RobotGeometry) -> Result<(), SimulationError> {
        for s in &self.samples {
            Posture::new(&s.pose, geo)?;
        }
        Ok(())
    }
}

/// Rest-to-rest trapezoidal profile along a segment of length `length`.
#[derive(Debug, Clone, Copy)]
struct Trapezoid {
    length: f64,
    accel: f64,
    peak: f64,
    ramp: f64,
    cruise: f64,
}

impl Trapezoid {
    fn new(length: f64, limits: &MotionLimits) -> Self {
        if length <= 0.0 {
            return Self { length: 0.0, accel: 0.0, peak: 0.0, ramp: 0.0, cruise: 0.0 };
        }
        let a = limits.a_max;
        let peak = limits.v_max.min((length * a).sqrt());
        let ramp = peak / a;
        let cruise = (length / peak - ramp).max(0.0);
        Self { length, accel: a, peak, ramp, cruise }
    }

    fn duration(&self) -> f64 {
        2.0 * self.ramp + self.cruise
    }

    /// Path coordinate and its first two derivatives at time `t`.
    fn at(&self, t: f64) -> (f64, f64, f64) {
        let a = self.accel;
        let total = self.duration();
        if self.length == 0.0 || t <= 0.0 {
            (0.0, 0.0, 0.0)
        } else if t < self.ramp {
            (0.5 * a * t * t, a * t, a)
        } else if t < self.ramp + self.cruise {
            (0.5 * a * self.ramp * self.ramp + self.peak * (t - self.ramp), self.peak, 0.0)
        } else if t < total {
            let rest = total - t;
            (self.length - 0.5 * a * rest * rest, a * rest, -a)
        } else {
            (self.length, 0.0, 0.0)
        }
    }
}

/// Straight segments through `waypoints` with trapezoidal speed, a dwell at
/// rest before the first segment and after every segment.
pub fn generate_waypoint_trajectory(
    waypoints: &[Vector2<f64>],
    phi: f64,
    limits: MotionLimits,
    dwell: f64,
    sample_time: f64,
    geo: &RobotGeometry,
) -> Result<Trajectory, SimulationError> {
    if waypoints.is_empty() {
        return Err(SimulationError::InvalidScenario("trajectory needs at least one waypoint".into()));
    }
    if !(limits.v_max > 0.0 && limits.a_max > 0.0 && sample_time > 0.0 && dwell >= 0.0) {
        return Err(SimulationError::InvalidScenario("motion limits, dwell and sample time must be positive".into()));
    }
    for (i, w) in waypoints.iter().enumerate() {
        Posture::new(&EePose::new(w.x, w.y, phi), geo).map_err(|e| SimulationError::UnreachableWaypoint(i, e))?;
    }
    struct Segment {
        start: f64,
        from: Vector2<f64>,
        dir: Vector2<f64>,
        profile: Trapezoid,
    }
    let mut segments = Vec::new();
    let mut t = dwell;
    for pair in waypoints.windows(2) {
        let delta = pair[1] - pair[0];
        let length = delta.norm();
        let dir = if length > 0.0 { delta / length } else { Vector2::zeros() };
        let profile = Trapezoid::new(length, &limits);
        segments.push(Segment { start: t, from: pair[0], dir, profile });
        t += profile.duration() + dwell;
    }
    let ticks = (t / sample_time).ceil() as usize + 1;
    let samples = (0..ticks)
        .map(|k| {
            let time = k as f64 * sample_time;
            let active = segments.iter().rev().find(|s| time >= s.start);
            let (pos, vel, acc) = match active {
                Some(seg) => {
                    let (s, sd, sdd) = seg.profile.at(time - seg.start);
                    (seg.from + s * seg.dir, sd * seg.dir, sdd * seg.dir)
                }
                None => (waypoints[0], Vector2::zeros(), Vector2::zeros()),
            };
            KinematicState {
                pose: EePose::new(pos.x, pos.y, phi),
                twist: Vector3::new(vel.x, vel.y, 0.0),
                accel: Vector3::new(acc.x, acc.y, 0.0),
            }
        })
        .collect();
    let traj = Trajectory { sample_time, samples, limits: Some(limits) };
    traj.check_workspace(geo)?;
    Ok(traj)
}

/// Closed rectangle through four corners, returning to the first.
pub fn generate_rectangle_trajectory(
    corners: &[Vector2<f64>; 4],
    phi: f64,
    limits: MotionLimits,
    dwell: f64,
    sample_time: f64,
    geo: &RobotGeometry,
) -> Result<Trajectory, SimulationError> {
    let mut path = corners.to_vec();
    path.push(corners[0]);
    generate_waypoint_trajectory(&path, phi, limits, dwell, sample_time, geo)
}

/// Sinusoidal excitation of all three platform coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lissajous {
    pub center: [f64; 3],
    pub amplitude: [f64; 3],
    /// Hz.
    pub frequency: [f64; 3],
    /// rad.
    pub phase: [f64; 3],
    pub duration: f64,
}

pub fn generate_lissajous_trajectory(
    spec: &Lissajous,
    sample_time: f64,
    geo: &RobotGeometry,
) -> Result<Trajectory, SimulationError> {
    if !(spec.duration > 0.0 && sample_time > 0.0) {
        return Err(SimulationError::InvalidScenario("duration and sample time must be positive".into()));
    }
    let ticks = (spec.duration / sample_time).round() as usize + 1;
    let samples = (0..ticks)
        .map(|k| {
            let t = k as f64 * sample_time;
            let axis = |i: usize| {
                let w = TAU * spec.frequency[i];
                let (s, c) = (w * t + spec.phase[i]).sin_cos();
                let a = spec.amplitude[i];
                (spec.center[i] + a * s, a * w * c, -a * w * w * s)
            };
            let (x, y, p) = (axis(0), axis(1), axis(2));
            KinematicState {
                pose: EePose::new(x.0, y.0, p.0),
                twist: Vector3::new(x.1, y.1, p.1),
                accel: Vector3::new(x.2, y.2, p.2),
            }
        })
        .collect();
    let traj = Trajectory { sample_time, samples, limits: None };
    traj.check_workspace(geo)?;
    Ok(traj)
}
