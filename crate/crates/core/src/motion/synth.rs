//! Procedural reference clips.
//!
//! Locomotion clips integrate a constant speed / yaw-rate command for the base
//! and place each foot Raibert-style: during stance the foot is fixed at the
//! neutral position of its mid-stance instant, during swing it blends to the
//! next stance location along a half-sine arc. Joint angles come from leg IK.

use serde::{Deserialize, Serialize};

use super::{MotionClip, MotionError, MotionType, ReferenceFrame};
use crate::kinematics::{leg_angles, RobotModel, NUM_LEGS};
use crate::spatial::{rot_y, rot_z, Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitSpec {
    pub name: String,
    pub motion_type: MotionType,
    /// Forward speed along the body heading (m/s).
    pub speed: f64,
    /// Constant heading rate (rad/s); positive turns left.
    pub yaw_rate: f64,
    pub duration: f64,
    pub fps: f64,
    /// Gait cycle period (s).
    pub period: f64,
    /// Fraction of the cycle a foot spends in stance.
    pub duty: f64,
    /// Peak foot lift during swing (m).
    pub swing_height: f64,
    /// Peak base rise during flight for jumps (m).
    pub jump_height: f64,
    /// Per-leg phase offsets (FR, FL, RR, RL) in cycles.
    pub phase_offsets: [f64; 4],
}

impl Default for GaitSpec {
    fn default() -> Self {
        Self::new(MotionType::Stand)
    }
}

impl GaitSpec {
    /// Default gait parameters for a motion type, 10 s at 60 Hz.
    pub fn new(motion_type: MotionType) -> Self {
        let trot = [0.0, 0.5, 0.5, 0.0];
        let mut spec = Self {
            name: motion_type.as_str().to_string(),
            motion_type,
            speed: 0.0,
            yaw_rate: 0.0,
            duration: 10.0,
            fps: 60.0,
            period: 0.5,
            duty: 0.6,
            swing_height: 0.06,
            jump_height: 0.0,
            phase_offsets: trot,
        };
        match motion_type {
            MotionType::Step => {
                spec.speed = 0.2;
                spec.period = 0.8;
                spec.duty = 0.75;
                spec.swing_height = 0.05;
                spec.phase_offsets = [0.0, 0.5, 0.75, 0.25];
            }
            MotionType::Pace => {
                spec.speed = 0.5;
                spec.phase_offsets = [0.0, 0.5, 0.0, 0.5];
            }
            MotionType::Trot => spec.speed = 0.5,
            MotionType::Gallop => {
                spec.speed = 1.0;
                spec.period = 0.4;
                spec.duty = 0.4;
                spec.phase_offsets = [0.0, 0.1, 0.55, 0.65];
            }
            MotionType::Jump => {
                spec.speed = 0.6;
                spec.period = 0.8;
                spec.duty = 0.5;
                spec.swing_height = 0.06;
                spec.jump_height = 0.12;
                spec.phase_offsets = [0.0; 4];
            }
            MotionType::TurnLeft => {
                spec.speed = 0.3;
                spec.yaw_rate = 0.5;
            }
            MotionType::TurnRight => {
                spec.speed = 0.3;
                spec.yaw_rate = -0.5;
            }
            MotionType::TurnLeftInPlace => spec.yaw_rate = std::f64::consts::FRAC_PI_4,
            MotionType::TurnRightInPlace => spec.yaw_rate = -std::f64::consts::FRAC_PI_4,
            MotionType::Sit | MotionType::Lie => spec.period = 1.0,
            _ => {}
        }
        spec
    }

    /// Copy with all lengths and speeds multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            speed: self.speed * factor,
            swing_height: self.swing_height * factor,
            jump_height: self.jump_height * factor,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<(), MotionError> {
        let bad = |m: &str| Err(MotionError::InvalidSpec(m.to_string()));
        if !(self.duration > 0.0) {
            return bad("duration must be > 0");
        }
        if !(self.fps > 0.0) {
            return bad("fps must be > 0");
        }
        if !(self.period > 0.0) {
            return bad("period must be > 0");
        }
        if !(self.duty > 0.0 && self.duty <= 1.0) {
            return bad("duty must be in (0, 1]");
        }
        Ok(())
    }
}

/// Time-parameterized base and feet targets for one clip.
struct Planner<'a> {
    spec: &'a GaitSpec,
    model: &'a RobotModel,
    height: f64,
    /// Nominal feet in the base frame.
    nominal: [Vec3; NUM_LEGS],
}

impl Planner<'_> {
    fn heading(&self, t: f64) -> f64 {
        self.spec.yaw_rate * t
    }

    /// Horizontal base position: closed-form integral of speed along the heading.
    fn base_xy(&self, t: f64) -> (f64, f64) {
        let (v, w) = (self.spec.speed, self.spec.yaw_rate);
        if w.abs() < 1e-12 {
            (v * t, 0.0)
        } else {
            (v / w * (w * t).sin(), v / w * (1.0 - (w * t).cos()))
        }
    }

    fn jump_phase(&self, t: f64) -> (bool, f64) {
        let u = t / self.spec.period;
        let phi = u - u.floor();
        if phi < self.spec.duty {
            (true, phi / self.spec.duty)
        } else {
            (false, (phi - self.spec.duty) / (1.0 - self.spec.duty))
        }
    }

    fn base_height(&self, t: f64) -> f64 {
        if self.spec.motion_type != MotionType::Jump {
            return self.height;
        }
        let (stance, s) = self.jump_phase(t);
        let pi = std::f64::consts::PI;
        if stance {
            self.height - 0.3 * self.spec.jump_height * (pi * s).sin()
        } else {
            self.height + self.spec.jump_height * (pi * s).sin()
        }
    }

    fn neutral_foot(&self, leg: usize, t: f64) -> Vec3 {
        let (x, y) = self.base_xy(t);
        let p = rot_z(self.heading(t)) * self.nominal[leg];
        Vec3::new(x + p.x, y + p.y, self.model.foot_radius)
    }

    fn locomotion_foot(&self, leg: usize, t: f64) -> Vec3 {
        let (period, duty) = (self.spec.period, self.spec.duty);
        let offset = self.spec.phase_offsets[leg];
        let u = t / period + offset;
        let n = u.floor();
        let phi = u - n;
        let stance_mid = |k: f64| ((k - offset) + 0.5 * duty) * period;
        let here = self.neutral_foot(leg, stance_mid(n));
        if phi < duty {
            return here;
        }
        let next = self.neutral_foot(leg, stance_mid(n + 1.0));
        let s = (phi - duty) / (1.0 - duty);
        let pi = std::f64::consts::PI;
        let blend = 0.5 * (1.0 - (pi * s).cos());
        let mut p = here + (next - here) * blend;
        p.z = self.model.foot_radius + self.spec.swing_height * (pi * s).sin();
        p
    }

    /// Base pose and world feet for the stand/sit/lie family.
    fn posture(&self, t: f64) -> (Vec3, Mat3, [Vec3; NUM_LEGS]) {
        let start = 0.5;
        let s = ((t - start) / self.spec.period).clamp(0.0, 1.0);
        let blend = s * s * (3.0 - 2.0 * s);
        let (dx, dz, pitch, foot_shift) = match self.spec.motion_type {
            MotionType::Sit => (0.0, 0.0, -0.4, [0.0, 0.0, 0.1, 0.1]),
            MotionType::Lie => (0.0, 0.2 - self.height, 0.0, [0.09; 4]),
            _ => (0.0, 0.0, 0.0, [0.0; 4]),
        };
        let base = Vec3::new(dx * blend, 0.0, self.height + dz * blend);
        let rotation = rot_y(pitch * blend);
        let feet = std::array::from_fn(|leg| {
            let mut p = self.neutral_foot(leg, 0.0);
            p.x += foot_shift[leg] * blend;
            p
        });
        (base, rotation, feet)
    }
}

/// Builds a kinematically consistent clip from a gait description.
pub fn synthesize_clip(spec: &GaitSpec, model: &RobotModel) -> Result<MotionClip, MotionError> {
    spec.validate()?;
    let supported = !matches!(
        spec.motion_type,
        MotionType::TriangleTrace | MotionType::StarTrace | MotionType::RandomMixed
    );
    if !supported {
        return Err(MotionError::Unsupported(spec.motion_type));
    }
    let nominal_q = RobotModel::nominal_pose();
    let planner = Planner {
        spec,
        model,
        height: model.standing_height(&nominal_q),
        nominal: std::array::from_fn(|leg| model.leg_foot(leg, leg_angles(&nominal_q, leg))),
    };
    let count = (spec.duration * spec.fps).round() as usize + 1;
    let mut frames = Vec::with_capacity(count);
    for k in 0..count {
        let t = k as f64 / spec.fps;
        if spec.motion_type == MotionType::Stand {
            let base = Vec3::new(0.0, 0.0, planner.height);
            frames.push(ReferenceFrame::new(nominal_q, Mat3::identity(), base));
            continue;
        }
        let (base, rotation, feet) = match spec.motion_type {
            MotionType::Sit | MotionType::Lie => planner.posture(t),
            _ => {
                let (x, y) = planner.base_xy(t);
                let base = Vec3::new(x, y, planner.base_height(t));
                let feet = std::array::from_fn(|leg| planner.locomotion_foot(leg, t));
                (base, rot_z(planner.heading(t)), feet)
            }
        };
        let mut joints = [0.0; 12];
        for leg in 0..NUM_LEGS {
            let target = rotation.transpose() * (feet[leg] - base);
            let sol = model
                .ik_leg(leg, &target)
                .map_err(|source| MotionError::Unreachable { time: t, source })?;
            joints[3 * leg..3 * leg + 3].copy_from_slice(&sol.angles);
        }
        frames.push(ReferenceFrame::new(joints, rotation, base));
    }
    let clip = MotionClip {
        name: spec.name.clone(),
        motion_type: spec.motion_type,
        fps: spec.fps,
        frames,
    };
    clip.validate()?;
    Ok(clip)
}
