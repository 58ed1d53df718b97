//! Planar 3-RRR kinematics.
//!
//! Each leg `i` is a base anchor `a_i`, an actuated link of length `l1`, a
//! passive link of length `l2` and a platform anchor `b_i` given in the
//! end-effector frame. Joint angles are absolute (measured from the x axis of
//! the inertial frame); the third angle of each leg is the angle of the body
//! following the third joint, which is the platform itself.
//!
//! Loop closure for leg `i`:
//!
//! ```text
//! a_i + l1 e(θ_i1) + l2 e(θ_i2) - (p + R(φ) b_i) = 0
//! ```

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NEWTON_MAX_ITERATIONS: usize = 20;
/// Convergence bound on the loop-closure residual, m.
pub const NEWTON_TOLERANCE: f64 = 1e-12;
/// Determinants below this magnitude are treated as singular.
pub const SINGULARITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("pose unreachable for leg {0}")]
    Unreachable(usize),
    #[error("forward kinematics did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("singular configuration (|det| = {0:e})")]
    Singular(f64),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid contact location: {0}")]
    InvalidContact(String),
}

/// Wraps an angle to (-π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

fn unit(angle: f64) -> Vector2<f64> {
    Vector2::new(angle.cos(), angle.sin())
}

fn perp(v: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-v.y, v.x)
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn rotate(angle: f64, v: &Vector2<f64>) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// End-effector platform pose in the inertial frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EePose {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl EePose {
    pub fn new(x: f64, y: f64, phi: f64) -> Self {
        Self {
            x,
            y,
            phi: wrap_angle(phi),
        }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.phi)
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Stacked joint angles `[q1; q2; q3]`, three per leg.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointConfig {
    pub q: [f64; 9],
}

impl JointConfig {
    pub fn leg(&self, leg: usize) -> [f64; 3] {
        [self.q[3 * leg], self.q[3 * leg + 1], self.q[3 * leg + 2]]
    }

    /// Active (first) joint angle of every leg.
    pub fn active(&self) -> Vector3<f64> {
        Vector3::new(self.q[0], self.q[3], self.q[6])
    }

    /// Relative joint angles of one leg, each wrapped.
    pub fn relative(&self, leg: usize) -> [f64; 3] {
        let [t1, t2, t3] = self.leg(leg);
        [wrap_angle(t1), wrap_angle(t2 - t1), wrap_angle(t3 - t2)]
    }
}

/// Which of the two two-link assembly modes a leg uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElbowBranch {
    #[default]
    Positive,
    Negative,
}

impl ElbowBranch {
    fn sign(self) -> f64 {
        match self {
            ElbowBranch::Positive => 1.0,
            ElbowBranch::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotGeometry {
    pub base_anchors: [Vector2<f64>; 3],
    /// `(l1, l2)` per leg, m.
    pub link_lengths: [[f64; 2]; 3],
    /// Platform anchors in the end-effector frame.
    pub platform_anchors: [Vector2<f64>; 3],
    pub elbow: [ElbowBranch; 3],
}

impl Default for RobotGeometry {
    fn default() -> Self {
        Self::symmetric(0.4, 0.1, 0.25, 0.25, 90f64.to_radians(), [ElbowBranch::Positive; 3])
    }
}

impl RobotGeometry {
    /// Equilateral machine: anchors on circles, legs spaced by 120°.
    pub fn symmetric(
        base_radius: f64,
        platform_radius: f64,
        l1: f64,
        l2: f64,
        angle_offset: f64,
        elbow: [ElbowBranch; 3],
    ) -> Self {
        let angle = |i: usize| angle_offset + i as f64 * TAU / 3.0;
        Self {
            base_anchors: std::array::from_fn(|i| base_radius * unit(angle(i))),
            link_lengths: [[l1, l2]; 3],
            platform_anchors: std::array::from_fn(|i| platform_radius * unit(angle(i))),
            elbow,
        }
    }

    pub fn home_pose() -> EePose {
        EePose::default()
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        for (i, [l1, l2]) in self.link_lengths.iter().enumerate() {
            if !(*l1 > 0.0 && *l2 > 0.0) {
                return Err(KinematicsError::InvalidGeometry(format!(
                    "link lengths of leg {i} must be positive"
                )));
            }
        }
        for anchors in [&self.base_anchors, &self.platform_anchors] {
            for i in 0..3 {
                for j in (i + 1)..3 {
                    if (anchors[i] - anchors[j]).norm() < 1e-9 {
                        return Err(KinematicsError::InvalidGeometry(format!(
                            "anchors {i} and {j} coincide"
                        )));
                    }
                }
            }
        }
        inverse_kinematics(&Self::home_pose(), self)
            .map_err(|e| KinematicsError::InvalidGeometry(format!("home pose: {e}")))?;
        Ok(())
    }

    /// Platform anchor of `leg` in the inertial frame.
    pub fn platform_anchor_world(&self, leg: usize, pose: &EePose) -> Vector2<f64> {
        pose.position() + rotate(pose.phi, &self.platform_anchors[leg])
    }
}

/// A point on the robot structure where contact can occur.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactLocation {
    /// Point at fraction `s` along link 1 or 2 of a leg.
    Link { leg: usize, link: u8, s: f64 },
    /// Point on the platform, offset given in the end-effector frame.
    Platform { offset: [f64; 2] },
}

impl ContactLocation {
    pub fn platform_origin() -> Self {
        ContactLocation::Platform { offset: [0.0, 0.0] }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        match *self {
            ContactLocation::Link { leg, link, s } => {
                if leg > 2 {
                    return Err(KinematicsError::InvalidContact(format!("leg {leg} out of range")));
                }
                if link != 1 && link != 2 {
                    return Err(KinematicsError::InvalidContact(format!("link {link} not in {{1, 2}}")));
                }
                if !(0.0..=1.0).contains(&s) {
                    return Err(KinematicsError::InvalidContact(format!("s = {s} not in [0, 1]")));
                }
                Ok(())
            }
            ContactLocation::Platform { offset } => {
                if offset.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(KinematicsError::InvalidContact("non-finite platform offset".into()))
                }
            }
        }
    }
}

fn solve_leg(geo: &RobotGeometry, leg: usize, pose: &EePose) -> Result<(f64, f64), KinematicsError> {
    let [l1, l2] = geo.link_lengths[leg];
    let anchor = geo.base_anchors[leg];
    let target = geo.platform_anchor_world(leg, pose);
    let d = target - anchor;
    let r = d.norm();
    if r > l1 + l2 || r < (l1 - l2).abs() || r == 0.0 {
        return Err(KinematicsError::Unreachable(leg));
    }
    let cos_beta = ((l1 * l1 + r * r - l2 * l2) / (2.0 * l1 * r)).clamp(-1.0, 1.0);
    let theta1 = d.y.atan2(d.x) + geo.elbow[leg].sign() * cos_beta.acos();
    let knee = anchor + l1 * unit(theta1);
    let to_target = target - knee;
    let theta2 = to_target.y.atan2(to_target.x);
    Ok((theta1, theta2))
}

/// Closed-form per-leg two-link solution.
pub fn inverse_kinematics(pose: &EePose, geo: &RobotGeometry) -> Result<JointConfig, KinematicsError> {
    let mut q = [0.0; 9];
    for leg in 0..3 {
        let (t1, t2) = solve_leg(geo, leg, pose)?;
        q[3 * leg] = t1;
        q[3 * leg + 1] = t2;
        q[3 * leg + 2] = pose.phi;
    }
    Ok(JointConfig { q })
}

/// Per-leg planar closure error `a + l1 e(θ1) + l2 e(θ2) - platform anchor`, m.
pub fn constraint_residual(q: &JointConfig, pose: &EePose, geo: &RobotGeometry) -> SVector<f64, 6> {
    let mut r = SVector::<f64, 6>::zeros();
    for leg in 0..3 {
        let [l1, l2] = geo.link_lengths[leg];
        let [t1, t2, _] = q.leg(leg);
        let err = geo.base_anchors[leg] + l1 * unit(t1) + l2 * unit(t2)
            - geo.platform_anchor_world(leg, pose);
        r[2 * leg] = err.x;
        r[2 * leg + 1] = err.y;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkSolution {
    pub pose: EePose,
    /// Number of residual evaluations (1 when the guess is already exact).
    pub iterations: usize,
}

/// Newton-Raphson forward kinematics, warm-started from `guess`.
///
/// The unknowns are the platform coordinates; with the active angles fixed,
/// each leg contributes the scalar constraint `|c_i(x) - k_i| - l2 = 0` where
/// `k_i` is the knee position. Its gradient is exactly the type-II constraint
/// matrix, so a singular iteration matrix is reported as [`KinematicsError::Singular`].
pub fn forward_kinematics(
    q_a: &Vector3<f64>,
    guess: &EePose,
    geo: &RobotGeometry,
) -> Result<FkSolution, KinematicsError> {
    let mut x = guess.to_vector();
    for iteration in 1..=NEWTON_MAX_ITERATIONS {
        let pose = EePose { x: x.x, y: x.y, phi: x.z };
        let mut residual = Vector3::zeros();
        let mut gradient = Matrix3::zeros();
        for leg in 0..3 {
            let [l1, l2] = geo.link_lengths[leg];
            let knee = geo.base_anchors[leg] + l1 * unit(q_a[leg]);
            let rb = rotate(pose.phi, &geo.platform_anchors[leg]);
            let d = pose.position() + rb - knee;
            let dist = d.norm();
            if dist < f64::EPSILON {
                return Err(KinematicsError::Singular(0.0));
            }
            let dir = d / dist;
            residual[leg] = dist - l2;
            gradient[(leg, 0)] = dir.x;
            gradient[(leg, 1)] = dir.y;
            gradient[(leg, 2)] = cross2(&rb, &dir);
        }
        let det = gradient.determinant();
        if det.abs() < SINGULARITY_TOLERANCE {
            return Err(KinematicsError::Singular(det.abs()));
        }
        if residual.amax() < NEWTON_TOLERANCE {
            return Ok(FkSolution {
                pose: EePose::new(x.x, x.y, x.z),
                iterations: iteration,
            });
        }
        let step = gradient
            .lu()
            .solve(&(-residual))
            .ok_or(KinematicsError::Singular(det.abs()))?;
        x += step;
    }
    Err(KinematicsError::NoConvergence(NEWTON_MAX_ITERATIONS))
}

/// Cached per-leg quantities at one configuration.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LegFrame {
    pub l1: f64,
    pub l2: f64,
    /// Unit vectors along link 1 and link 2, and their left normals.
    pub e1: Vector2<f64>,
    pub n1: Vector2<f64>,
    pub e2: Vector2<f64>,
    pub n2: Vector2<f64>,
    /// Platform anchor relative to the platform origin, inertial frame.
    pub rb: Vector2<f64>,
    /// `[θ̇1; θ̇2] = leg_jacobian · ẋ`.
    pub leg_jacobian: SMatrix<f64, 2, 3>,
    /// Inverse of `[l1 n1, l2 n2]`.
    pub leg_inverse: Matrix2<f64>,
}

impl LegFrame {
    fn new(geo: &RobotGeometry, leg: usize, q: &JointConfig, pose: &EePose) -> Result<Self, KinematicsError> {
        let [l1, l2] = geo.link_lengths[leg];
        let [t1, t2, _] = q.leg(leg);
        let e1 = unit(t1);
        let e2 = unit(t2);
        let n1 = perp(&e1);
        let n2 = perp(&e2);
        let rb = rotate(pose.phi, &geo.platform_anchors[leg]);
        let b = Matrix2::from_columns(&[l1 * n1, l2 * n2]);
        let det = b.determinant();
        if det.abs() < SINGULARITY_TOLERANCE {
            return Err(KinematicsError::Singular(det.abs()));
        }
        let leg_inverse = Matrix2::new(b[(1, 1)], -b[(0, 1)], -b[(1, 0)], b[(0, 0)]) / det;
        let g = SMatrix::<f64, 2, 3>::new(1.0, 0.0, -rb.y, 0.0, 1.0, rb.x);
        Ok(Self {
            l1,
            l2,
            e1,
            n1,
            e2,
            n2,
            rb,
            leg_jacobian: leg_inverse * g,
            leg_inverse,
        })
    }

    /// Time derivative of `leg_jacobian` along the twist.
    pub fn leg_jacobian_rate(&self, twist: &Vector3<f64>) -> SMatrix<f64, 2, 3> {
        let rates = self.leg_jacobian * twist;
        let b_dot = Matrix2::from_columns(&[-self.l1 * rates[0] * self.e1, -self.l2 * rates[1] * self.e2]);
        let mut g_dot = SMatrix::<f64, 2, 3>::zeros();
        g_dot[(0, 2)] = -self.rb.x * twist.z;
        g_dot[(1, 2)] = -self.rb.y * twist.z;
        self.leg_inverse * (g_dot - b_dot * self.leg_jacobian)
    }
}

/// A consistent `(q, pose)` pair with its velocity Jacobians.
#[derive(Debug, Clone, Copy)]
pub struct Posture {
    pub geometry: RobotGeometry,
    pub pose: EePose,
    pub joints: JointConfig,
    pub(crate) legs: [LegFrame; 3],
    j_q_x: SMatrix<f64, 9, 3>,
    j_x_qa: Matrix3<f64>,
    j_qa_x: Matrix3<f64>,
}

impl Posture {
    pub fn new(pose: &EePose, geo: &RobotGeometry) -> Result<Self, KinematicsError> {
        let q = inverse_kinematics(pose, geo)?;
        Self::from_joints(&q, pose, geo)
    }

    pub fn from_joints(q: &JointConfig, pose: &EePose, geo: &RobotGeometry) -> Result<Self, KinematicsError> {
        let legs = [
            LegFrame::new(geo, 0, q, pose)?,
            LegFrame::new(geo, 1, q, pose)?,
            LegFrame::new(geo, 2, q, pose)?,
        ];
        let mut j_q_x = SMatrix::<f64, 9, 3>::zeros();
        let mut j_qa_x = Matrix3::zeros();
        let mut constraint = Matrix3::zeros();
        let mut actuation = Matrix3::zeros();
        for (i, leg) in legs.iter().enumerate() {
            j_q_x.fixed_view_mut::<2, 3>(3 * i, 0).copy_from(&leg.leg_jacobian);
            j_q_x[(3 * i + 2, 2)] = 1.0;
            j_qa_x.row_mut(i).copy_from(&leg.leg_jacobian.row(0));
            // Projecting the leg velocity closure on link 2 eliminates θ̇2.
            constraint[(i, 0)] = leg.e2.x;
            constraint[(i, 1)] = leg.e2.y;
            constraint[(i, 2)] = cross2(&leg.rb, &leg.e2);
            actuation[(i, i)] = leg.l1 * leg.n1.dot(&leg.e2);
        }
        let det = constraint.determinant();
        if det.abs() < SINGULARITY_TOLERANCE {
            return Err(KinematicsError::Singular(det.abs()));
        }
        let j_x_qa = constraint
            .try_inverse()
            .ok_or(KinematicsError::Singular(det.abs()))?
            * actuation;
        Ok(Self {
            geometry: *geo,
            pose: *pose,
            joints: *q,
            legs,
            j_q_x,
            j_x_qa,
            j_qa_x,
        })
    }

    /// `q̇ = J_{q,x} ẋ`.
    pub fn jacobian_q_x(&self) -> &SMatrix<f64, 9, 3> {
        &self.j_q_x
    }

    /// `ẋ = J_{x,qa} q̇_a`.
    pub fn jacobian_x_qa(&self) -> &Matrix3<f64> {
        &self.j_x_qa
    }

    /// `q̇_a = J_{qa,x} ẋ`, the inverse of [`Self::jacobian_x_qa`].
    pub fn jacobian_qa_x(&self) -> &Matrix3<f64> {
        &self.j_qa_x
    }

    /// Determinant of the type-II constraint matrix.
    pub fn type2_determinant(&self) -> f64 {
        let mut constraint = Matrix3::zeros();
        for (i, leg) in self.legs.iter().enumerate() {
            constraint[(i, 0)] = leg.e2.x;
            constraint[(i, 1)] = leg.e2.y;
            constraint[(i, 2)] = cross2(&leg.rb, &leg.e2);
        }
        constraint.determinant()
    }

    /// Planar position and absolute angle of the body carrying `loc`.
    pub fn contact_point_pose(&self, loc: &ContactLocation) -> Vector3<f64> {
        contact_point_pose(&self.joints, &self.pose, &self.geometry, loc)
    }

    /// `ẋ_C = J_{x_C,x} ẋ_E` for a point on the structure.
    pub fn contact_jacobian(&self, loc: &ContactLocation) -> Result<Matrix3<f64>, KinematicsError> {
        loc.validate()?;
        match *loc {
            ContactLocation::Platform { offset } => {
                let rc = rotate(self.pose.phi, &Vector2::new(offset[0], offset[1]));
                Ok(Matrix3::new(1.0, 0.0, -rc.y, 0.0, 1.0, rc.x, 0.0, 0.0, 1.0))
            }
            ContactLocation::Link { leg, link, s } => {
                let f = &self.legs[leg];
                let joint_map = if link == 1 {
                    SMatrix::<f64, 3, 2>::new(s * f.l1 * f.n1.x, 0.0, s * f.l1 * f.n1.y, 0.0, 1.0, 0.0)
                } else {
                    SMatrix::<f64, 3, 2>::new(
                        f.l1 * f.n1.x,
                        s * f.l2 * f.n2.x,
                        f.l1 * f.n1.y,
                        s * f.l2 * f.n2.y,
                        0.0,
                        1.0,
                    )
                };
                Ok(joint_map * f.leg_jacobian)
            }
        }
    }
}

/// Position and absolute orientation of the body point described by `loc`.
pub fn contact_point_pose(
    q: &JointConfig,
    pose: &EePose,
    geo: &RobotGeometry,
    loc: &ContactLocation,
) -> Vector3<f64> {
    match *loc {
        ContactLocation::Platform { offset } => {
            let p = pose.position() + rotate(pose.phi, &Vector2::new(offset[0], offset[1]));
            Vector3::new(p.x, p.y, pose.phi)
        }
        ContactLocation::Link { leg, link, s } => {
            let [l1, l2] = geo.link_lengths[leg];
            let [t1, t2, _] = q.leg(leg);
            let a = geo.base_anchors[leg];
            if link == 1 {
                let p = a + s * l1 * unit(t1);
                Vector3::new(p.x, p.y, t1)
            } else {
                let p = a + l1 * unit(t1) + s * l2 * unit(t2);
                Vector3::new(p.x, p.y, t2)
            }
        }
    }
}

pub fn jacobian_q_x(q: &JointConfig, pose: &EePose, geo: &RobotGeometry) -> Result<SMatrix<f64, 9, 3>, KinematicsError> {
    let legs = [
        LegFrame::new(geo, 0, q, pose)?,
        LegFrame::new(geo, 1, q, pose)?,
        LegFrame::new(geo, 2, q, pose)?,
    ];
    let mut j = SMatrix::<f64, 9, 3>::zeros();
    for (i, leg) in legs.iter().enumerate() {
        j.fixed_view_mut::<2, 3>(3 * i, 0).copy_from(&leg.leg_jacobian);
        j[(3 * i + 2, 2)] = 1.0;
    }
    Ok(j)
}

pub fn jacobian_x_qa(q: &JointConfig, pose: &EePose, geo: &RobotGeometry) -> Result<Matrix3<f64>, KinematicsError> {
    Posture::from_joints(q, pose, geo).map(|p| p.j_x_qa)
}

pub fn contact_jacobian(
    q: &JointConfig,
    pose: &EePose,
    geo: &RobotGeometry,
    loc: &ContactLocation,
) -> Result<Matrix3<f64>, KinematicsError> {
    Posture::from_joints(q, pose, geo)?.contact_jacobian(loc)
}
