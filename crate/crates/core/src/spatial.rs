//! Small rotation helpers shared by the clip, kinematics and simulator code.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Frobenius norm of `RᵀR − I`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).norm()
}

/// Gram–Schmidt on the columns; keeps a right-handed frame.
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let c0 = r.column(0).into_owned().normalize();
    let c1 = r.column(1).into_owned();
    let c1 = (c1 - c0 * c0.dot(&c1)).normalize();
    let c2 = c0.cross(&c1);
    Mat3::from_columns(&[c0, c1, c2])
}

pub fn to_quaternion(r: &Mat3) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r))
}

pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Mat3 {
    q.to_rotation_matrix().into_inner()
}

/// Shortest-arc slerp between two rotation matrices, returned re-orthonormalized.
pub fn slerp(r0: &Mat3, r1: &Mat3, alpha: f64) -> Mat3 {
    let q0 = to_quaternion(r0);
    let mut q1 = to_quaternion(r1);
    if q0.coords.dot(&q1.coords) < 0.0 {
        q1 = UnitQuaternion::new_unchecked(-q1.into_inner());
    }
    let q = q0.slerp(&q1, alpha);
    orthonormalize(&from_quaternion(&q))
}

/// Rotation vector `w` with `exp([w]) = r`.
pub fn log_so3(r: &Mat3) -> Vec3 {
    to_quaternion(r).scaled_axis()
}

/// `exp([w])` for a rotation vector.
pub fn exp_so3(w: &Vec3) -> Mat3 {
    Rotation3::new(*w).into_inner()
}

/// Row-major flattening used by observations and clip files.
pub fn mat_to_row_major(r: &Mat3) -> [f64; 9] {
    [
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
    ]
}

pub fn mat_from_row_major(v: &[f64]) -> Mat3 {
    Mat3::from_row_slice(&v[..9])
}

/// Yaw angle of the body x-axis projected on the ground plane.
pub fn heading(r: &Mat3) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slerp_of_z_rotations_is_half_angle() {
        let r = slerp(&Mat3::identity(), &rot_z(0.2), 0.5);
        assert!((r - rot_z(0.1)).norm() < 1e-12);
    }

    #[test]
    fn slerp_takes_short_way_across_sign_flip() {
        let r0 = rot_z(3.0);
        let r1 = rot_z(-3.0);
        // geodesic distance is 2π − 6 through ±π
        let mid = slerp(&r0, &r1, 0.5);
        assert!((mid - rot_z(std::f64::consts::PI)).norm() < 1e-9);
    }

    #[test]
    fn exp_log_round_trip() {
        let w = Vec3::new(0.3, -0.2, 1.1);
        assert!((log_so3(&exp_so3(&w)) - w).norm() < 1e-12);
    }

    #[test]
    fn orthonormalize_repairs_drift() {
        let mut r = rot_x(0.4) * rot_y(-0.3);
        r[(0, 1)] += 1e-4;
        let fixed = orthonormalize(&r);
        assert!(orthonormality_error(&fixed) < 1e-14);
        assert!((fixed.determinant() - 1.0).abs() < 1e-14);
    }
}
