#![allow(dead_code)]

use nalgebra::{Matrix3, SMatrix, Vector3};
use prfusion::kinematics::{forward_kinematics, inverse_kinematics, wrap_angle, EePose, Posture, RobotGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded poses in the central workspace, at least `margin` away from
/// type-II singularity (|det|) and successfully assembled.
pub fn random_poses(seed: u64, count: usize) -> Vec<EePose> {
    let geo = RobotGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let pose = EePose::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.3..0.3),
        );
        if let Ok(p) = Posture::new(&pose, &geo) {
            if p.type2_determinant().abs() > 1e-2 {
                out.push(pose);
            }
        }
    }
    out
}

pub fn random_twist(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-3.0..3.0),
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err<const R: usize, const C: usize>(
    a: &nalgebra::SMatrix<f64, R, C>,
    b: &nalgebra::SMatrix<f64, R, C>,
) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Central-difference step for Jacobian oracles.
pub const H: f64 = 1e-6;

pub fn shifted(pose: &EePose, axis: usize, h: f64) -> EePose {
    let mut v = pose.to_vector();
    v[axis] += h;
    EePose::from_vector(&v)
}

pub fn fd_jacobian_q_x(pose: &EePose, geo: &RobotGeometry) -> SMatrix<f64, 9, 3> {
    let mut j = SMatrix::<f64, 9, 3>::zeros();
    for axis in 0..3 {
        let plus = inverse_kinematics(&shifted(pose, axis, H), geo).unwrap();
        let minus = inverse_kinematics(&shifted(pose, axis, -H), geo).unwrap();
        for row in 0..9 {
            j[(row, axis)] = wrap_angle(plus.q[row] - minus.q[row]) / (2.0 * H);
        }
    }
    j
}

pub fn fd_jacobian_x_qa(pose: &EePose, geo: &RobotGeometry) -> Matrix3<f64> {
    let qa = inverse_kinematics(pose, geo).unwrap().active();
    let mut j = Matrix3::zeros();
    for axis in 0..3 {
        let mut plus = qa;
        plus[axis] += H;
        let mut minus = qa;
        minus[axis] -= H;
        let a = forward_kinematics(&plus, pose, geo).unwrap().pose.to_vector();
        let b = forward_kinematics(&minus, pose, geo).unwrap().pose.to_vector();
        let mut col = (a - b) / (2.0 * H);
        col.z = wrap_angle(a.z - b.z) / (2.0 * H);
        j.set_column(axis, &col);
    }
    j
}


/// Least-squares decay rate of `|error|` over the samples above 2 % of the step.
pub fn fitted_rate(errors: &[f64], step: f64, dt: f64) -> f64 {
    let points: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, e)| e.abs() > 0.02 * step)
        .map(|(k, e)| (k as f64 * dt, e.abs().ln()))
        .collect();
    let n = points.len() as f64;
    let (st, sy) = points.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t, b + y));
    let (mt, my) = (st / n, sy / n);
    let num: f64 = points.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let den: f64 = points.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    -num / den
}
