//! Operational-space rigid-body dynamics
//!
//! ```text
//! M_x ẍ + c_x + g_x + F_fr,x = F_m,x + F_ext,x
//! ```
//!
//! assembled body by body: every link is a planar rigid body whose COM
//! velocity and angular rate follow from `q̇ = J_{q,x} ẋ`. With body
//! Jacobians `J_b` (twist of body `b` as a function of `ẋ`) and constant planar
//! inertia `M_b = diag(m, m, I)`:
//!
//! ```text
//! M_x = Σ J_bᵀ M_b J_b      C_x = Σ J_bᵀ M_b J̇_b      Ṁ_x = C_x + C_xᵀ
//! ```

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{ContactLocation, KinematicsError, Posture};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("mass matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid dynamics parameter: {0}")]
    InvalidParameter(String),
}

/// Generalized force in operational space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub fx: f64,
    pub fy: f64,
    pub mz: f64,
}

impl Wrench {
    pub const ZERO: Wrench = Wrench { fx: 0.0, fy: 0.0, mz: 0.0 };

    pub fn new(fx: f64, fy: f64, mz: f64) -> Self {
        Self { fx, fy, mz }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.fx, self.fy, self.mz)
    }

    pub fn is_finite(&self) -> bool {
        self.fx.is_finite() && self.fy.is_finite() && self.mz.is_finite()
    }
}

impl Add for Wrench {
    type Output = Wrench;
    fn add(self, o: Wrench) -> Wrench {
        Wrench::new(self.fx + o.fx, self.fy + o.fy, self.mz + o.mz)
    }
}

impl AddAssign for Wrench {
    fn add_assign(&mut self, o: Wrench) {
        *self = *self + o;
    }
}

impl Sub for Wrench {
    type Output = Wrench;
    fn sub(self, o: Wrench) -> Wrench {
        Wrench::new(self.fx - o.fx, self.fy - o.fy, self.mz - o.mz)
    }
}

impl Neg for Wrench {
    type Output = Wrench;
    fn neg(self) -> Wrench {
        Wrench::new(-self.fx, -self.fy, -self.mz)
    }
}

impl Mul<f64> for Wrench {
    type Output = Wrench;
    fn mul(self, k: f64) -> Wrench {
        Wrench::new(self.fx * k, self.fy * k, self.mz * k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkInertia {
    pub mass: f64,
    /// COM position as a fraction of the link length from its proximal joint.
    pub com_fraction: f64,
    /// Inertia about the COM, kg·m².
    pub inertia: f64,
}

impl LinkInertia {
    /// Uniform rod of the given length.
    pub fn rod(mass: f64, length: f64) -> Self {
        Self {
            mass,
            com_fraction: 0.5,
            inertia: mass * length * length / 12.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    /// `[link1, link2]` per leg.
    pub links: [[LinkInertia; 2]; 3],
    pub platform_mass: f64,
    pub platform_inertia: f64,
    /// Viscous coefficient per active joint, N·m·s/rad.
    pub viscous: [f64; 3],
    /// Coulomb level per active joint, N·m.
    pub coulomb: [f64; 3],
    /// Velocity scale of the smooth sign `tanh(v/ε)`, rad/s.
    pub coulomb_epsilon: f64,
    /// Motor torque constant, N·m/A.
    pub torque_constant: f64,
    /// In-plane gravity, m/s². Zero for a horizontal machine.
    pub gravity: [f64; 2],
}

impl Default for DynamicsParams {
    fn default() -> Self {
        let link = LinkInertia::rod(0.5, 0.25);
        Self {
            links: [[link; 2]; 3],
            platform_mass: 1.2,
            platform_inertia: 0.01,
            viscous: [0.05; 3],
            coulomb: [0.1; 3],
            coulomb_epsilon: 1e-3,
            torque_constant: 1.0,
            gravity: [0.0, 0.0],
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |what: String| Err(DynamicsError::InvalidParameter(what));
        for (i, leg) in self.links.iter().enumerate() {
            for (j, link) in leg.iter().enumerate() {
                if !(link.mass > 0.0) {
                    return bad(format!("mass of leg {i} link {} must be positive", j + 1));
                }
                if !(link.inertia > 0.0) {
                    return bad(format!("inertia of leg {i} link {} must be positive", j + 1));
                }
            }
        }
        if !(self.platform_mass > 0.0) {
            return bad("platform mass must be positive".into());
        }
        if !(self.platform_inertia > 0.0) {
            return bad("platform inertia must be positive".into());
        }
        if self.viscous.iter().chain(&self.coulomb).any(|v| !(*v >= 0.0)) {
            return bad("friction coefficients must be non-negative".into());
        }
        if !(self.coulomb_epsilon > 0.0) {
            return bad("Coulomb smoothing epsilon must be positive".into());
        }
        Ok(())
    }

    /// Inertial and friction parameters scaled by `1 + fraction`.
    pub fn perturbed(&self, fraction: f64) -> Self {
        let k = 1.0 + fraction;
        let mut p = *self;
        for leg in p.links.iter_mut() {
            for link in leg.iter_mut() {
                link.mass *= k;
                link.inertia *= k;
            }
        }
        p.platform_mass *= k;
        p.platform_inertia *= k;
        p.viscous = p.viscous.map(|v| v * k);
        p.coulomb = p.coulomb.map(|v| v * k);
        p
    }

    pub fn without_friction(&self) -> Self {
        Self {
            viscous: [0.0; 3],
            coulomb: [0.0; 3],
            ..*self
        }
    }

    fn gravity_vector2(&self) -> Vector2<f64> {
        Vector2::new(self.gravity[0], self.gravity[1])
    }
}

/// Twist Jacobian of one body (COM velocity, angular rate) and its time derivative.
struct BodyJacobian {
    inertia: LinkInertia,
    jacobian: Matrix3<f64>,
    rate: Matrix3<f64>,
}

fn body_jacobians(posture: &Posture, params: &DynamicsParams, twist: &Vector3<f64>) -> [BodyJacobian; 6] {
    std::array::from_fn(|k| {
        let leg = k / 2;
        let frame = &posture.legs[leg];
        let rates = frame.leg_jacobian * twist;
        let leg_rate = frame.leg_jacobian_rate(twist);
        let inertia = params.links[leg][k % 2];
        let c = inertia.com_fraction;
        let (map, map_rate) = if k % 2 == 0 {
            let v = c * frame.l1 * frame.n1;
            let dv = -c * frame.l1 * rates[0] * frame.e1;
            (
                SMatrix::<f64, 3, 2>::new(v.x, 0.0, v.y, 0.0, 1.0, 0.0),
                SMatrix::<f64, 3, 2>::new(dv.x, 0.0, dv.y, 0.0, 0.0, 0.0),
            )
        } else {
            let v1 = frame.l1 * frame.n1;
            let v2 = c * frame.l2 * frame.n2;
            let dv1 = -frame.l1 * rates[0] * frame.e1;
            let dv2 = -c * frame.l2 * rates[1] * frame.e2;
            (
                SMatrix::<f64, 3, 2>::new(v1.x, v2.x, v1.y, v2.y, 0.0, 1.0),
                SMatrix::<f64, 3, 2>::new(dv1.x, dv2.x, dv1.y, dv2.y, 0.0, 0.0),
            )
        };
        BodyJacobian {
            inertia,
            jacobian: map * frame.leg_jacobian,
            rate: map_rate * frame.leg_jacobian + map * leg_rate,
        }
    })
}

fn body_inertia(link: &LinkInertia) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(link.mass, link.mass, link.inertia))
}

fn platform_inertia(params: &DynamicsParams) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(params.platform_mass, params.platform_mass, params.platform_inertia))
}

/// Operational-space inertia matrix `M_x`.
pub fn mass_matrix(posture: &Posture, params: &DynamicsParams) -> Matrix3<f64> {
    let mut m = platform_inertia(params);
    for body in body_jacobians(posture, params, &Vector3::zeros()) {
        m += body.jacobian.transpose() * body_inertia(&body.inertia) * body.jacobian;
    }
    m
}

/// Centrifugal/Coriolis vector `c_x` and a factorization `C_x` with
/// `c_x = C_x ẋ` and `Ṁ_x = C_x + C_xᵀ`.
pub fn coriolis(posture: &Posture, twist: &Vector3<f64>, params: &DynamicsParams) -> (Wrench, Matrix3<f64>) {
    let mut c = Matrix3::zeros();
    for body in body_jacobians(posture, params, twist) {
        c += body.jacobian.transpose() * body_inertia(&body.inertia) * body.rate;
    }
    (Wrench::from_vector(&(c * twist)), c)
}

/// Gradient of the potential energy w.r.t. the platform coordinates.
pub fn gravity_vector(posture: &Posture, params: &DynamicsParams) -> Wrench {
    let g = params.gravity_vector2();
    let mut out = Vector3::new(-params.platform_mass * g.x, -params.platform_mass * g.y, 0.0);
    for body in body_jacobians(posture, params, &Vector3::zeros()) {
        let v = body.jacobian.fixed_rows::<2>(0);
        out -= body.inertia.mass * v.transpose() * g;
    }
    Wrench::from_vector(&out)
}

/// Joint friction `μ_v q̇_a + μ_c tanh(q̇_a/ε)` mapped to operational space.
pub fn friction_wrench(qdot_a: &Vector3<f64>, posture: &Posture, params: &DynamicsParams) -> Wrench {
    let tau = joint_friction(qdot_a, params);
    Wrench::from_vector(&(posture.jacobian_qa_x().transpose() * tau))
}

pub fn joint_friction(qdot_a: &Vector3<f64>, params: &DynamicsParams) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        params.viscous[i] * qdot_a[i] + params.coulomb[i] * (qdot_a[i] / params.coulomb_epsilon).tanh()
    })
}

/// All model terms of the dynamics at one state.
#[derive(Debug, Clone, Copy)]
pub struct DynamicsTerms {
    pub mass: Matrix3<f64>,
    pub coriolis_matrix: Matrix3<f64>,
    pub coriolis: Wrench,
    pub gravity: Wrench,
    pub friction: Wrench,
}

impl DynamicsTerms {
    pub fn evaluate(posture: &Posture, twist: &Vector3<f64>, params: &DynamicsParams) -> Self {
        let (coriolis, coriolis_matrix) = coriolis(posture, twist, params);
        let qdot_a = posture.jacobian_qa_x() * twist;
        Self {
            mass: mass_matrix(posture, params),
            coriolis_matrix,
            coriolis,
            gravity: gravity_vector(posture, params),
            friction: friction_wrench(&qdot_a, posture, params),
        }
    }

    /// `c_x + g_x + F_fr,x`.
    pub fn bias(&self) -> Vector3<f64> {
        (self.coriolis + self.gravity + self.friction).to_vector()
    }
}

/// `F_m,x = M_x ẍ + c_x + g_x + F_fr,x - F_ext,x`.
pub fn inverse_dynamics(
    posture: &Posture,
    twist: &Vector3<f64>,
    accel: &Vector3<f64>,
    f_ext: &Wrench,
    params: &DynamicsParams,
) -> Wrench {
    let terms = DynamicsTerms::evaluate(posture, twist, params);
    Wrench::from_vector(&(terms.mass * accel + terms.bias() - f_ext.to_vector()))
}

/// Solves `M_x ẍ = F_m,x + F_ext,x - c_x - g_x - F_fr,x` by Cholesky factorization.
pub fn forward_dynamics(
    posture: &Posture,
    twist: &Vector3<f64>,
    f_m: &Wrench,
    f_ext: &Wrench,
    params: &DynamicsParams,
) -> Result<Vector3<f64>, DynamicsError> {
    let terms = DynamicsTerms::evaluate(posture, twist, params);
    let rhs = f_m.to_vector() + f_ext.to_vector() - terms.bias();
    let chol = terms.mass.cholesky().ok_or(DynamicsError::NotPositiveDefinite)?;
    Ok(chol.solve(&rhs))
}

/// `F_m,x = J_{x,qa}^{-T} τ_m`.
pub fn project_motor_torques(tau: &Vector3<f64>, posture: &Posture) -> Wrench {
    Wrench::from_vector(&(posture.jacobian_qa_x().transpose() * tau))
}

/// `τ_m = J_{x,qa}ᵀ F_m,x`.
pub fn motor_torques(f_m: &Wrench, posture: &Posture) -> Vector3<f64> {
    posture.jacobian_x_qa().transpose() * f_m.to_vector()
}

/// Maps a planar force acting at a structure point onto the platform.
pub fn project_contact_force(
    force: &Vector2<f64>,
    loc: &ContactLocation,
    posture: &Posture,
) -> Result<Wrench, DynamicsError> {
    let j = posture.contact_jacobian(loc)?;
    Ok(Wrench::from_vector(&(j.transpose() * Vector3::new(force.x, force.y, 0.0))))
}

/// Two simultaneous link forces of a clamping contact mapped onto the platform.
pub fn project_clamping_forces(
    f1: &Vector2<f64>,
    loc1: &ContactLocation,
    f2: &Vector2<f64>,
    loc2: &ContactLocation,
    posture: &Posture,
) -> Result<Wrench, DynamicsError> {
    Ok(project_contact_force(f1, loc1, posture)? + project_contact_force(f2, loc2, posture)?)
}

/// Sum of body kinetic energies, evaluated link by link from joint rates.
pub fn kinetic_energy(posture: &Posture, twist: &Vector3<f64>, params: &DynamicsParams) -> f64 {
    let mut energy = 0.5 * params.platform_mass * (twist.x * twist.x + twist.y * twist.y)
        + 0.5 * params.platform_inertia * twist.z * twist.z;
    let qdot = posture.jacobian_q_x() * twist;
    for (leg, frame) in posture.legs.iter().enumerate() {
        let (w1, w2) = (qdot[3 * leg], qdot[3 * leg + 1]);
        let [link1, link2] = params.links[leg];
        let v1 = link1.com_fraction * frame.l1 * w1 * frame.n1;
        let v2 = frame.l1 * w1 * frame.n1 + link2.com_fraction * frame.l2 * w2 * frame.n2;
        energy += 0.5 * link1.mass * v1.norm_squared() + 0.5 * link1.inertia * w1 * w1;
        energy += 0.5 * link2.mass * v2.norm_squared() + 0.5 * link2.inertia * w2 * w2;
    }
    energy
}

/// Potential energy in the in-plane gravity field, zero at the inertial origin.
pub fn potential_energy(posture: &Posture, params: &DynamicsParams) -> f64 {
    let g = params.gravity_vector2();
    let geo = &posture.geometry;
    let mut energy = -params.platform_mass * g.dot(&posture.pose.position());
    for (leg, frame) in posture.legs.iter().enumerate() {
        let [link1, link2] = params.links[leg];
        let a = geo.base_anchors[leg];
        let c1 = a + link1.com_fraction * frame.l1 * frame.e1;
        let c2 = a + frame.l1 * frame.e1 + link2.com_fraction * frame.l2 * frame.e2;
        energy -= link1.mass * g.dot(&c1) + link2.mass * g.dot(&c2);
    }
    energy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{EePose, RobotGeometry};

    fn posture() -> Posture {
        Posture::new(&EePose::new(0.03, -0.02, 0.15), &RobotGeometry::default()).unwrap()
    }

    #[test]
    fn zero_twist_gives_zero_coriolis() {
        let (c, _) = coriolis(&posture(), &Vector3::zeros(), &DynamicsParams::default());
        assert_eq!(c, Wrench::ZERO);
    }

    #[test]
    fn coriolis_is_quadratic_in_twist() {
        let p = posture();
        let params = DynamicsParams::default();
        let twist = Vector3::new(0.3, -0.2, 0.7);
        let (c1, _) = coriolis(&p, &twist, &params);
        let (c2, _) = coriolis(&p, &(2.0 * twist), &params);
        let rel = (c2.to_vector() - 4.0 * c1.to_vector()).norm() / c2.to_vector().norm();
        assert!(rel < 1e-9, "{rel}");
    }

    #[test]
    fn horizontal_machine_has_no_gravity_load() {
        assert_eq!(gravity_vector(&posture(), &DynamicsParams::default()), Wrench::ZERO);
    }

    #[test]
    fn friction_vanishes_at_rest() {
        let w = friction_wrench(&Vector3::zeros(), &posture(), &DynamicsParams::default());
        assert_eq!(w, Wrench::ZERO);
    }

    #[test]
    fn viscous_friction_is_linear() {
        let p = posture();
        let mut params = DynamicsParams::default();
        params.coulomb = [0.0; 3];
        let v = Vector3::new(0.4, -1.0, 0.2);
        let a = friction_wrench(&v, &p, &params).to_vector();
        let b = friction_wrench(&(3.0 * v), &p, &params).to_vector();
        assert!((b - 3.0 * a).norm() < 1e-12);
    }

    #[test]
    fn static_balance_against_external_force() {
        let p = posture();
        let f = inverse_dynamics(
            &p,
            &Vector3::zeros(),
            &Vector3::zeros(),
            &Wrench::new(10.0, 0.0, 0.0),
            &DynamicsParams::default(),
        );
        assert!((f.to_vector() - Vector3::new(-10.0, 0.0, 0.0)).norm() < 1e-12);
        let rest = inverse_dynamics(&p, &Vector3::zeros(), &Vector3::zeros(), &Wrench::ZERO, &DynamicsParams::default());
        assert_eq!(rest, Wrench::ZERO);
    }

    #[test]
    fn acceleration_is_linear_in_motor_force_at_rest() {
        let p = posture();
        let params = DynamicsParams::default().without_friction();
        let f = Wrench::new(3.0, -1.0, 0.2);
        let a1 = forward_dynamics(&p, &Vector3::zeros(), &f, &Wrench::ZERO, &params).unwrap();
        let a2 = forward_dynamics(&p, &Vector3::zeros(), &(f * 2.0), &Wrench::ZERO, &params).unwrap();
        assert!((a2 - 2.0 * a1).norm() < 1e-12 * a2.norm());
    }

    #[test]
    fn opposite_forces_at_one_point_cancel() {
        let p = posture();
        let loc = ContactLocation::Link { leg: 1, link: 2, s: 0.4 };
        let f = Vector2::new(12.0, -3.0);
        let w = project_clamping_forces(&f, &loc, &(-f), &loc, &p).unwrap();
        assert!(w.to_vector().norm() < 1e-12);
        let single = project_contact_force(&f, &loc, &p).unwrap();
        let paired = project_clamping_forces(&f, &loc, &Vector2::zeros(), &ContactLocation::platform_origin(), &p).unwrap();
        assert_eq!(single, paired);
    }

    #[test]
    fn motor_torque_round_trip() {
        let p = posture();
        let tau = Vector3::new(1.5, -0.4, 2.2);
        let back = motor_torques(&project_motor_torques(&tau, &p), &p);
        assert!((back - tau).norm() < 1e-12 * tau.norm());
    }

    #[test]
    fn parameter_validation() {
        assert!(DynamicsParams::default().validate().is_ok());
        let mut p = DynamicsParams::default();
        p.links[0][1].mass = -1.0;
        assert!(p.validate().is_err());
        let mut p = DynamicsParams::default();
        p.viscous[2] = -0.1;
        assert!(p.validate().is_err());
    }
}
