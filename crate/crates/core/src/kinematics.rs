//! Quadruped leg kinematics.
//!
//! Base frame: x forward, y left, z up. Legs are ordered FR, FL, RR, RL and each
//! leg has (hip abduction, thigh pitch, calf pitch) joints. With all angles at
//! zero the leg hangs straight down from the abduction offset point.

use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::spatial::{Mat3, Vec3};

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 12;
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FR", "FL", "RR", "RL"];

/// Tolerance on the reach annulus before a target is declared unreachable.
const REACH_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotModel {
    pub name: String,
    /// Abduction axis location of each leg in the base frame (FR, FL, RR, RL).
    pub hip_mounts: [[f64; 3]; NUM_LEGS],
    /// Lateral distance from the abduction axis to the thigh plane.
    pub hip_offset: f64,
    pub thigh: f64,
    pub calf: f64,
    pub hip_limits: [f64; 2],
    pub thigh_limits: [f64; 2],
    pub calf_limits: [f64; 2],
    pub foot_radius: f64,
    pub knee_radius: f64,
    pub hip_radius: f64,
    /// Half extents of the base collision box.
    pub base_half_extents: [f64; 3],
}

impl Default for RobotModel {
    fn default() -> Self {
        Self::a1_like()
    }
}

impl RobotModel {
    /// Dimensions close to a Unitree A1.
    pub fn a1_like() -> Self {
        Self {
            name: "a1_like".into(),
            hip_mounts: [
                [0.183, -0.047, 0.0],
                [0.183, 0.047, 0.0],
                [-0.183, -0.047, 0.0],
                [-0.183, 0.047, 0.0],
            ],
            hip_offset: 0.0838,
            thigh: 0.2,
            calf: 0.2,
            hip_limits: [-0.5, 0.5],
            thigh_limits: [-0.1, 1.5],
            calf_limits: [-2.1, -0.5],
            foot_radius: 0.02,
            knee_radius: 0.025,
            hip_radius: 0.04,
            base_half_extents: [0.1335, 0.097, 0.057],
        }
    }

    /// Uniformly scaled copy (all lengths and offsets); joint limits unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        for mount in &mut m.hip_mounts {
            for c in mount.iter_mut() {
                *c *= factor;
            }
        }
        m.hip_offset *= factor;
        m.thigh *= factor;
        m.calf *= factor;
        m.foot_radius *= factor;
        m.knee_radius *= factor;
        m.hip_radius *= factor;
        for e in &mut m.base_half_extents {
            *e *= factor;
        }
        m
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("hip_offset", self.hip_offset),
            ("thigh", self.thigh),
            ("calf", self.calf),
            ("foot_radius", self.foot_radius),
            ("knee_radius", self.knee_radius),
            ("hip_radius", self.hip_radius),
        ];
        for (field, v) in positive {
            if !(v > 0.0) {
                return Err(ConfigError::Invalid {
                    field: "robot model",
                    message: format!("{field} must be > 0, got {v}"),
                });
            }
        }
        if self.base_half_extents.iter().any(|e| !(*e > 0.0)) {
            return Err(ConfigError::Invalid {
                field: "base_half_extents",
                message: "all extents must be > 0".into(),
            });
        }
        for (field, lim) in [
            ("hip_limits", self.hip_limits),
            ("thigh_limits", self.thigh_limits),
            ("calf_limits", self.calf_limits),
        ] {
            if !(lim[0] < lim[1]) {
                return Err(ConfigError::Invalid {
                    field: "joint limits",
                    message: format!("{field}: lower {} must be < upper {}", lim[0], lim[1]),
                });
            }
        }
        Ok(())
    }

    pub fn mount(&self, leg: usize) -> Vec3 {
        Vec3::from(self.hip_mounts[leg])
    }

    /// +1 for left legs, −1 for right legs.
    pub fn side(&self, leg: usize) -> f64 {
        if leg.is_multiple_of(2) {
            -1.0
        } else {
            1.0
        }
    }

    /// Limits of joint `j` in the 12-joint ordering.
    pub fn joint_limits(&self, joint: usize) -> [f64; 2] {
        match joint % 3 {
            0 => self.hip_limits,
            1 => self.thigh_limits,
            _ => self.calf_limits,
        }
    }

    pub fn clamp_joint(&self, joint: usize, angle: f64) -> f64 {
        let [lo, hi] = self.joint_limits(joint);
        angle.clamp(lo, hi)
    }

    pub fn clamp_joints(&self, q: &[f64; NUM_JOINTS]) -> [f64; NUM_JOINTS] {
        std::array::from_fn(|j| self.clamp_joint(j, q[j]))
    }

    pub fn within_limits(&self, q: &[f64; NUM_JOINTS]) -> bool {
        q.iter().enumerate().all(|(j, &a)| {
            let [lo, hi] = self.joint_limits(j);
            a >= lo && a <= hi
        })
    }

    /// Foot and knee positions in the leg's sagittal plane (before abduction),
    /// relative to the thigh pitch axis: (x, z) pairs.
    fn sagittal(&self, thigh: f64, calf: f64) -> ((f64, f64), (f64, f64)) {
        let knee = (-self.thigh * thigh.sin(), -self.thigh * thigh.cos());
        let s = thigh + calf;
        let foot = (knee.0 - self.calf * s.sin(), knee.1 - self.calf * s.cos());
        (knee, foot)
    }

    /// Apply the abduction rotation to a point `(x, side·d, z)` of the sagittal plane.
    fn abduct(&self, leg: usize, hip: f64, x: f64, z: f64) -> Vec3 {
        let y = self.side(leg) * self.hip_offset;
        let (s, c) = hip.sin_cos();
        Vec3::new(x, c * y - s * z, s * y + c * z)
    }

    /// Foot centre in the base frame.
    pub fn leg_foot(&self, leg: usize, q: [f64; 3]) -> Vec3 {
        let (_, (fx, fz)) = self.sagittal(q[1], q[2]);
        self.mount(leg) + self.abduct(leg, q[0], fx, fz)
    }

    /// Knee centre in the base frame; independent of the calf angle.
    pub fn leg_knee(&self, leg: usize, q: [f64; 3]) -> Vec3 {
        let ((kx, kz), _) = self.sagittal(q[1], q[2]);
        self.mount(leg) + self.abduct(leg, q[0], kx, kz)
    }

    /// ∂foot/∂(hip, thigh, calf) in the base frame.
    pub fn leg_jacobian(&self, leg: usize, q: [f64; 3]) -> Mat3 {
        let (_, (_, fz)) = self.sagittal(q[1], q[2]);
        let y = self.side(leg) * self.hip_offset;
        let (s1, c1) = q[0].sin_cos();
        let s23 = q[1] + q[2];
        let dfx_d2 = -self.thigh * q[1].cos() - self.calf * s23.cos();
        let dfz_d2 = self.thigh * q[1].sin() + self.calf * s23.sin();
        let dfx_d3 = -self.calf * s23.cos();
        let dfz_d3 = self.calf * s23.sin();
        let col0 = Vec3::new(0.0, -s1 * y - c1 * fz, c1 * y - s1 * fz);
        let col1 = Vec3::new(dfx_d2, -s1 * dfz_d2, c1 * dfz_d2);
        let col2 = Vec3::new(dfx_d3, -s1 * dfz_d3, c1 * dfz_d3);
        Mat3::from_columns(&[col0, col1, col2])
    }

    /// World positions of the four feet.
    pub fn fk_feet(&self, base: &BasePose, q: &[f64; NUM_JOINTS]) -> [Vec3; NUM_LEGS] {
        std::array::from_fn(|leg| base.apply(&self.leg_foot(leg, leg_angles(q, leg))))
    }

    /// Feet flattened as 12 values (FR xyz, FL xyz, RR xyz, RL xyz).
    pub fn fk_feet_flat(&self, base: &BasePose, q: &[f64; NUM_JOINTS]) -> [f64; 12] {
        let feet = self.fk_feet(base, q);
        std::array::from_fn(|i| feet[i / 3][i % 3])
    }

    /// World positions of every collision body in a fixed order: 4 feet, 4 knees,
    /// 4 hips, then the 8 base box corners.
    pub fn fk_links(&self, base: &BasePose, q: &[f64; NUM_JOINTS]) -> Vec<CollisionBody> {
        let mut bodies = Vec::with_capacity(20);
        for leg in 0..NUM_LEGS {
            bodies.push(CollisionBody {
                kind: BodyKind::Foot,
                index: leg,
                center: base.apply(&self.leg_foot(leg, leg_angles(q, leg))),
                radius: self.foot_radius,
            });
        }
        for leg in 0..NUM_LEGS {
            bodies.push(CollisionBody {
                kind: BodyKind::Knee,
                index: leg,
                center: base.apply(&self.leg_knee(leg, leg_angles(q, leg))),
                radius: self.knee_radius,
            });
        }
        for leg in 0..NUM_LEGS {
            bodies.push(CollisionBody {
                kind: BodyKind::Hip,
                index: leg,
                center: base.apply(&self.mount(leg)),
                radius: self.hip_radius,
            });
        }
        let [hx, hy, hz] = self.base_half_extents;
        for (i, (sx, sy, sz)) in BOX_SIGNS.iter().enumerate() {
            bodies.push(CollisionBody {
                kind: BodyKind::Base,
                index: i,
                center: base.apply(&Vec3::new(sx * hx, sy * hy, sz * hz)),
                radius: 0.0,
            });
        }
        bodies
    }

    /// Analytic leg IK for a foot target given in the base frame.
    ///
    /// The result is clamped to the joint limits; `clamped` reports whether that
    /// changed the exact solution. Targets outside the reach annulus are errors.
    pub fn ik_leg(&self, leg: usize, target: &Vec3) -> Result<IkSolution, KinematicsError> {
        let p = target - self.mount(leg);
        let r2 = p.y * p.y + p.z * p.z;
        let d = self.hip_offset;
        if r2 < d * d - REACH_EPS {
            return Err(KinematicsError::Unreachable {
                leg,
                distance: r2.sqrt(),
                min: d,
                max: f64::INFINITY,
            });
        }
        let zs = -(r2 - d * d).max(0.0).sqrt();
        let length = (p.x * p.x + zs * zs).sqrt();
        let (lo, hi) = self.reach();
        if length > hi + REACH_EPS || length < lo - REACH_EPS {
            return Err(KinematicsError::Unreachable {
                leg,
                distance: length,
                min: lo,
                max: hi,
            });
        }
        let hip = wrap_angle(p.z.atan2(p.y) - zs.atan2(self.side(leg) * d));
        Ok(self.solve(hip, p.x, zs))
    }

    /// Like [`ik_leg`](Self::ik_leg) but projects unreachable targets onto the
    /// nearest reachable point instead of failing. The abduction angle is kept
    /// from the original target and the planar distance is clamped onto the
    /// reach annulus.
    pub fn ik_leg_projected(&self, leg: usize, target: &Vec3) -> IkSolution {
        let mut p = target - self.mount(leg);
        let mut reachable = true;
        let d = self.hip_offset;
        let r2 = p.y * p.y + p.z * p.z;
        if r2 < d * d {
            reachable = false;
            let r = r2.sqrt();
            if r > 1e-12 {
                p.y *= d / r;
                p.z *= d / r;
            } else {
                p.y = self.side(leg) * d;
                p.z = 0.0;
            }
        }
        let r2 = p.y * p.y + p.z * p.z;
        let mut zs = -(r2 - d * d).max(0.0).sqrt();
        let hip = wrap_angle(p.z.atan2(p.y) - zs.atan2(self.side(leg) * d));
        let mut xs = p.x;
        let length = (xs * xs + zs * zs).sqrt();
        let (lo, hi) = self.reach();
        if length > hi || length < lo {
            reachable = false;
            let want = length.clamp(lo, hi);
            if length > 1e-12 {
                xs *= want / length;
                zs *= want / length;
            } else {
                zs = -want;
            }
        }
        let mut sol = self.solve(hip, xs, zs);
        sol.reachable = reachable;
        sol
    }

    /// Knee-guided IK: the abduction comes from the foot target, the thigh angle
    /// from the hip→knee direction, and the calf angle points the shank at the
    /// foot. Inputs are in the base frame.
    pub fn ik_leg_with_knee(&self, leg: usize, foot: &Vec3, knee: &Vec3) -> IkSolution {
        let base = self.ik_leg_projected(leg, foot);
        let hip = base.angles[0];
        let to_plane = |v: Vec3| {
            // Undo the abduction rotation.
            let (s, c) = hip.sin_cos();
            Vec3::new(v.x, c * v.y + s * v.z, -s * v.y + c * v.z)
        };
        let k = to_plane(knee - self.mount(leg));
        let f = to_plane(foot - self.mount(leg));
        let thigh = (-k.x).atan2(-k.z);
        let knee_pt = (-self.thigh * thigh.sin(), -self.thigh * thigh.cos());
        let shank = (f.x - knee_pt.0, f.z - knee_pt.1);
        let calf = (-shank.0).atan2(-shank.1) - thigh;
        self.clamped_solution([hip, thigh, wrap_angle(calf)], base.reachable)
    }

    /// Inner and outer radius of the planar two-link reach annulus.
    pub fn reach(&self) -> (f64, f64) {
        ((self.thigh - self.calf).abs(), self.thigh + self.calf)
    }

    fn solve(&self, hip: f64, xs: f64, zs: f64) -> IkSolution {
        let (l1, l2) = (self.thigh, self.calf);
        let cos_calf = ((xs * xs + zs * zs - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
        let calf = -cos_calf.acos();
        let thigh = (-xs).atan2(-zs) - (l2 * calf.sin()).atan2(l1 + l2 * calf.cos());
        self.clamped_solution([hip, thigh, calf], true)
    }

    fn clamped_solution(&self, raw: [f64; 3], reachable: bool) -> IkSolution {
        let angles = [
            raw[0].clamp(self.hip_limits[0], self.hip_limits[1]),
            raw[1].clamp(self.thigh_limits[0], self.thigh_limits[1]),
            raw[2].clamp(self.calf_limits[0], self.calf_limits[1]),
        ];
        IkSolution {
            clamped: [angles[0] != raw[0], angles[1] != raw[1], angles[2] != raw[2]],
            angles,
            reachable,
        }
    }

    /// Standing configuration used as the action origin.
    pub fn nominal_pose() -> [f64; NUM_JOINTS] {
        [
            -0.01, 0.75, -1.5, 0.01, 0.75, -1.5, -0.01, 0.75, -1.5, 0.01, 0.75, -1.5,
        ]
    }

    /// Base height at which the feet of `q` just touch flat ground with a level base.
    pub fn standing_height(&self, q: &[f64; NUM_JOINTS]) -> f64 {
        (0..NUM_LEGS)
            .map(|leg| -self.leg_foot(leg, leg_angles(q, leg)).z + self.foot_radius)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

const BOX_SIGNS: [(f64, f64, f64); 8] = [
    (1.0, 1.0, 1.0),
    (1.0, 1.0, -1.0),
    (1.0, -1.0, 1.0),
    (1.0, -1.0, -1.0),
    (-1.0, 1.0, 1.0),
    (-1.0, 1.0, -1.0),
    (-1.0, -1.0, 1.0),
    (-1.0, -1.0, -1.0),
];

pub fn leg_angles(q: &[f64; NUM_JOINTS], leg: usize) -> [f64; 3] {
    [q[3 * leg], q[3 * leg + 1], q[3 * leg + 2]]
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w > std::f64::consts::PI {
        w -= two_pi;
    } else if w <= -std::f64::consts::PI {
        w += two_pi;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasePose {
    pub position: Vec3,
    pub rotation: Mat3,
}

impl BasePose {
    pub fn new(position: Vec3, rotation: Mat3) -> Self {
        Self { position, rotation }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zeros(), Mat3::identity())
    }

    /// Base-frame point to world frame.
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.position + self.rotation * p
    }

    /// World point to base frame.
    pub fn inverse_apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.position)
    }

    /// `T ∘ self` for a rigid transform T.
    pub fn transformed(&self, t: &BasePose) -> BasePose {
        BasePose::new(t.apply(&self.position), t.rotation * self.rotation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BodyKind {
    Foot,
    Knee,
    Hip,
    Base,
}

impl BodyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BodyKind::Foot => "foot",
            BodyKind::Knee => "knee",
            BodyKind::Hip => "hip",
            BodyKind::Base => "base",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionBody {
    pub kind: BodyKind,
    pub index: usize,
    pub center: Vec3,
    pub radius: f64,
}

impl CollisionBody {
    /// Lowest point of the body above z = 0.
    pub fn clearance(&self) -> f64 {
        self.center.z - self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub angles: [f64; 3],
    /// Per joint: whether the limit clamp changed the analytic answer.
    pub clamped: [bool; 3],
    /// False when the target had to be projected onto the reach annulus.
    pub reachable: bool,
}

impl IkSolution {
    pub fn any_clamped(&self) -> bool {
        self.clamped.iter().any(|c| *c)
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum KinematicsError {
    #[error("leg {leg}: target at distance {distance:.6} m outside reach [{min:.6}, {max:.6}]")]
    Unreachable {
        leg: usize,
        distance: f64,
        min: f64,
        max: f64,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{rot_x, rot_y, rot_z};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_in_limits(model: &RobotModel, rng: &mut ChaCha8Rng) -> [f64; NUM_JOINTS] {
        std::array::from_fn(|j| {
            let [lo, hi] = model.joint_limits(j);
            rng.random_range(lo..hi)
        })
    }

    #[test]
    fn zero_angles_hang_straight_down() {
        let m = RobotModel::a1_like();
        let feet = m.fk_feet(&BasePose::identity(), &[0.0; 12]);
        for (leg, f) in feet.iter().enumerate() {
            let mount = m.mount(leg);
            assert!((f.x - mount.x).abs() < 1e-15);
            assert!((f.y - (mount.y + m.side(leg) * m.hip_offset)).abs() < 1e-15);
            assert!((f.z + m.thigh + m.calf).abs() < 1e-15);
        }
    }

    #[test]
    fn nominal_depth_matches_planar_two_link() {
        let m = RobotModel::a1_like();
        let q = RobotModel::nominal_pose();
        // Independent planar evaluation with the abduction folded back in.
        let planar_depth = 0.2 * 0.75f64.cos() + 0.2 * (0.75f64 - 1.5).cos();
        for leg in 0..NUM_LEGS {
            let a = leg_angles(&q, leg);
            let f = m.leg_foot(leg, a) - m.mount(leg);
            // Undo abduction: depth in the leg plane.
            let (s, c) = a[0].sin_cos();
            let z_plane = -s * f.y + c * f.z;
            assert!((-z_plane - planar_depth).abs() < 1e-14, "leg {leg}");
        }
        assert!((planar_depth - 0.292675_f64).abs() < 1e-6);
    }

    #[test]
    fn base_rotation_rotates_feet() {
        let m = RobotModel::a1_like();
        let q = RobotModel::nominal_pose();
        let r = rot_z(std::f64::consts::FRAC_PI_2);
        let a = m.fk_feet(&BasePose::identity(), &q);
        let b = m.fk_feet(&BasePose::new(Vec3::zeros(), r), &q);
        for i in 0..4 {
            assert!((r * a[i] - b[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn knee_ignores_calf() {
        let m = RobotModel::a1_like();
        let k1 = m.leg_knee(2, [0.1, 0.5, -0.7]);
        let k2 = m.leg_knee(2, [0.1, 0.5, -1.9]);
        assert_eq!(k1, k2);
        let f = m.leg_foot(2, [0.1, 0.5, -0.7]);
        assert!(((f - k1).norm() - m.calf).abs() < 1e-14);
    }

    #[test]
    fn links_above_ground_when_lifted() {
        let m = RobotModel::a1_like();
        let base = BasePose::new(Vec3::new(0.0, 0.0, 1.0), Mat3::identity());
        for b in m.fk_links(&base, &[0.0; 12]) {
            assert!(b.center.z > 0.0);
        }
    }

    #[test]
    fn pitched_back_sit_lowers_rear_knees() {
        let m = RobotModel::a1_like();
        // Nose up by 0.5 rad, rear legs folded.
        let base = BasePose::new(Vec3::new(0.0, 0.0, 0.25), rot_y(-0.5));
        let q = [
            0.0, 0.3, -1.0, 0.0, 0.3, -1.0, 0.0, 1.4, -2.0, 0.0, 1.4, -2.0,
        ];
        let links = m.fk_links(&base, &q);
        let knee_z = |leg| {
            links
                .iter()
                .find(|b| b.kind == BodyKind::Knee && b.index == leg)
                .unwrap()
                .center
                .z
        };
        // Hand evaluation for the rear-right knee: base z + R·(mount + knee offset).
        let mount = Vec3::new(-0.183, -0.047, 0.0);
        let knee_local = mount + Vec3::new(-0.2 * 1.4f64.sin(), -0.0838, -0.2 * 1.4f64.cos());
        let expected = 0.25 + (rot_y(-0.5) * knee_local).z;
        assert!((knee_z(2) - expected).abs() < 1e-12);
        assert!(knee_z(2) < knee_z(0));
        assert!(knee_z(3) < knee_z(1));
    }

    #[test]
    fn law_of_cosines_case() {
        let m = RobotModel::a1_like();
        // 0.2 m straight below the thigh pitch axis, in the leg plane.
        let leg = 0;
        let target = m.mount(leg) + Vec3::new(0.0, m.side(leg) * m.hip_offset, -0.2);
        let sol = m.ik_leg(leg, &target).unwrap();
        assert!((sol.angles[2] - (-2.0 * std::f64::consts::PI / 3.0)).abs() < 1e-9);
        assert!((sol.angles[2] + 2.0944).abs() < 1e-4);
        assert!(!sol.any_clamped());
        assert!((m.leg_foot(leg, sol.angles) - target).norm() < 1e-9);
    }

    #[test]
    fn full_extension_clamps_calf() {
        let m = RobotModel::a1_like();
        let leg = 1;
        let target = m.mount(leg) + Vec3::new(0.0, m.side(leg) * m.hip_offset, -0.4);
        let sol = m.ik_leg(leg, &target).unwrap();
        assert_eq!(sol.angles[2], -0.5);
        assert!(sol.clamped[2]);
    }

    #[test]
    fn unreachable_is_error_directly_and_flagged_projected() {
        let m = RobotModel::a1_like();
        let target = m.mount(0) + Vec3::new(0.0, -m.hip_offset, -0.6);
        assert!(matches!(m.ik_leg(0, &target), Err(KinematicsError::Unreachable { .. })));
        let sol = m.ik_leg_projected(0, &target);
        assert!(!sol.reachable);
        let f = m.leg_foot(0, sol.angles);
        assert!(f.iter().all(|v| v.is_finite()));
        // Straight-down projection of an overlong target: full extension, calf clamped.
        assert!(sol.clamped[2]);
    }

    #[test]
    fn projected_equals_direct_when_reachable() {
        let m = RobotModel::a1_like();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let q = random_in_limits(&m, &mut rng);
            for leg in 0..4 {
                let t = m.leg_foot(leg, leg_angles(&q, leg));
                let a = m.ik_leg(leg, &t).unwrap();
                let b = m.ik_leg_projected(leg, &t);
                assert!(b.reachable);
                for j in 0..3 {
                    assert!((a.angles[j] - b.angles[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fk_ik_round_trip() {
        let m = RobotModel::a1_like();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let q = random_in_limits(&m, &mut rng);
            let feet = m.fk_feet(&BasePose::identity(), &q);
            for leg in 0..NUM_LEGS {
                let sol = m.ik_leg(leg, &feet[leg]).unwrap();
                for j in 0..3 {
                    assert!((sol.angles[j] - q[3 * leg + j]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = RobotModel::a1_like();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let q = random_in_limits(&m, &mut rng);
            for leg in 0..4 {
                let a = leg_angles(&q, leg);
                let jac = m.leg_jacobian(leg, a);
                for j in 0..3 {
                    let h = 1e-6;
                    let mut ap = a;
                    let mut am = a;
                    ap[j] += h;
                    am[j] -= h;
                    let fd = (m.leg_foot(leg, ap) - m.leg_foot(leg, am)) / (2.0 * h);
                    assert!((fd - jac.column(j)).norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn knee_guided_ik_matches_plain_ik_on_consistent_knees() {
        let m = RobotModel::a1_like();
        let q = [0.1, 0.9, -1.6];
        let foot = m.leg_foot(3, q);
        let knee = m.leg_knee(3, q);
        let sol = m.ik_leg_with_knee(3, &foot, &knee);
        for j in 0..3 {
            assert!((sol.angles[j] - q[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn equivariance_under_rigid_transforms() {
        let m = RobotModel::a1_like();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let q = random_in_limits(&m, &mut rng);
            let base = BasePose::new(
                Vec3::new(rng.random(), rng.random(), rng.random()),
                rot_z(rng.random_range(-3.0..3.0)) * rot_x(rng.random_range(-1.0..1.0)),
            );
            let t = BasePose::new(
                Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.3),
                rot_y(rng.random_range(-3.0..3.0)) * rot_z(rng.random_range(-3.0..3.0)),
            );
            let a = m.fk_feet(&base.transformed(&t), &q);
            let b = m.fk_feet(&base, &q);
            for i in 0..4 {
                assert!((a[i] - t.apply(&b[i])).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn default_model_is_valid_and_bad_limits_rejected() {
        assert!(RobotModel::a1_like().validate().is_ok());
        let mut m = RobotModel::a1_like();
        m.calf_limits = [0.1, -0.1];
        assert!(m.validate().is_err());
        let mut m = RobotModel::a1_like();
        m.thigh = 0.0;
        assert!(m.validate().is_err());
    }
}
