//! Desk-scale quadruped dynamics.
//!
//! The base is a single rigid body carrying the whole mass. Legs are massless
//! linkages whose joints behave as second-order systems with a reflected rotor
//! inertia. Ground contact is a penalty spring-damper with viscous friction
//! clamped to the Coulomb cone. Foot forces reach the joints through the leg
//! Jacobian transpose and the base as a force plus moment; other bodies push on
//! the base only.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::kinematics::{leg_angles, BasePose, BodyKind, RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::motion::{MotionClip, ReferenceFrame};
use crate::spatial::{exp_so3, orthonormalize, to_quaternion, Mat3, Vec3};

/// Any state magnitude above this counts as numerical blow-up.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub gravity: f64,
    /// Physics step (s).
    pub dt: f64,
    /// Policy period (s); each control step runs `control_period / dt` substeps.
    pub control_period: f64,
    pub friction: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    /// Viscous stick coefficient for tangential contact (N·s/m).
    pub tangential_damping: f64,
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
    pub base_mass: f64,
    /// Principal moments of the base about its own axes.
    pub base_inertia: [f64; 3],
    /// Reflected inertia of (hip, thigh, calf) joints.
    pub joint_inertia: [f64; 3],
    /// Soft joint-stop stiffness beyond the limits (N·m/rad).
    pub limit_stiffness: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            dt: 0.001,
            control_period: 0.02,
            friction: 0.8,
            contact_stiffness: 8000.0,
            contact_damping: 200.0,
            tangential_damping: 300.0,
            kp: 50.0,
            kd: 2.0,
            torque_limit: 33.5,
            base_mass: 12.0,
            base_inertia: [0.06, 0.16, 0.18],
            joint_inertia: [0.05, 0.05, 0.05],
            limit_stiffness: 200.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, field: &'static str, message: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    field,
                    message: message.to_string(),
                })
            }
        };
        check(self.dt > 0.0, "dt", "must be > 0")?;
        check(self.control_period >= self.dt, "control_period", "must be >= dt")?;
        let n = self.control_period / self.dt;
        check((n - n.round()).abs() < 1e-6, "control_period", "must be a whole number of dt")?;
        check(self.kp >= 0.0, "kp", "must be >= 0")?;
        check(self.kd >= 0.0, "kd", "must be >= 0")?;
        check(self.friction >= 0.0, "friction", "must be >= 0")?;
        check(self.base_mass > 0.0, "base_mass", "must be > 0")?;
        check(self.base_inertia.iter().all(|i| *i > 0.0), "base_inertia", "must be > 0")?;
        check(self.joint_inertia.iter().all(|i| *i > 0.0), "joint_inertia", "must be > 0")?;
        check(self.contact_stiffness >= 0.0, "contact_stiffness", "must be >= 0")?;
        check(self.contact_damping >= 0.0, "contact_damping", "must be >= 0")?;
        check(self.tangential_damping >= 0.0, "tangential_damping", "must be >= 0")?;
        check(self.torque_limit >= 0.0, "torque_limit", "must be >= 0")?;
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.control_period / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub kind: BodyKind,
    pub index: usize,
    pub active: bool,
    pub penetration: f64,
    /// Ground reaction on the body, world frame (N).
    pub force: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub time: f64,
    pub position: Vec3,
    pub rotation: Mat3,
    /// World frame.
    pub velocity: Vec3,
    /// Base frame.
    pub angular_velocity: Vec3,
    pub q: [f64; NUM_JOINTS],
    pub qd: [f64; NUM_JOINTS],
    /// One entry per collision body in [`RobotModel::fk_links`] order.
    pub contacts: Vec<Contact>,
}

impl RobotState {
    pub fn pose(&self) -> BasePose {
        BasePose::new(self.position, self.rotation)
    }

    pub fn foot_contacts(&self) -> [bool; NUM_LEGS] {
        std::array::from_fn(|leg| self.contacts[leg].active)
    }

    fn max_magnitude(&self) -> f64 {
        let mut m: f64 = 0.0;
        let mut visit = |v: f64| m = if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY };
        self.position.iter().chain(self.velocity.iter()).chain(self.angular_velocity.iter()).for_each(|v| visit(*v));
        self.q.iter().chain(&self.qd).for_each(|v| visit(*v));
        m
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid start: {kind} {index} is {depth:.4} m below the ground")]
    InvalidStart { kind: &'static str, index: usize, depth: f64 },
    #[error("simulation diverged at t = {time:.3} s")]
    Diverged { time: f64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Places the robot at a reference frame with the given initial velocities.
pub fn reset(
    model: &RobotModel,
    cfg: &SimConfig,
    frame: &ReferenceFrame,
    velocity: Vec3,
    angular_velocity: Vec3,
    qd: [f64; NUM_JOINTS],
) -> Result<RobotState, SimError> {
    cfg.validate()?;
    let mut state = RobotState {
        time: 0.0,
        position: frame.com,
        rotation: orthonormalize(&frame.rotation),
        velocity,
        angular_velocity,
        q: frame.joints,
        qd,
        contacts: Vec::new(),
    };
    for body in model.fk_links(&state.pose(), &state.q) {
        let depth = -body.clearance();
        // Feet may rest exactly on the ground; rounding is tolerated.
        if depth > 1e-6 {
            return Err(SimError::InvalidStart {
                kind: body.kind.as_str(),
                index: body.index,
                depth,
            });
        }
    }
    state.contacts = contact_forces(model, cfg, &state).0;
    Ok(state)
}

/// Episode start from a clip's first frame with finite-difference velocities.
pub fn reset_from_clip(model: &RobotModel, cfg: &SimConfig, clip: &MotionClip) -> Result<RobotState, SimError> {
    let (v, w, qd) = clip.initial_velocities();
    reset(model, cfg, &clip.frames[0], v, w, qd)
}

fn point_velocity(state: &RobotState, local: &Vec3, local_rate: &Vec3) -> Vec3 {
    state.velocity + state.rotation * (state.angular_velocity.cross(local) + local_rate)
}

/// Contact report plus base force (world), base moment (base frame) and joint torques.
fn contact_forces(model: &RobotModel, cfg: &SimConfig, state: &RobotState) -> (Vec<Contact>, Vec3, Vec3, [f64; NUM_JOINTS]) {
    let mut contacts = Vec::with_capacity(20);
    let mut force = Vec3::zeros();
    let mut moment = Vec3::zeros();
    let mut joint_torque = [0.0; NUM_JOINTS];
    let rt = state.rotation.transpose();
    for body in model.fk_links(&state.pose(), &state.q) {
        let local = rt * (body.center - state.position);
        let local_rate = if body.kind == BodyKind::Foot {
            let leg = body.index;
            let qd = Vec3::new(state.qd[3 * leg], state.qd[3 * leg + 1], state.qd[3 * leg + 2]);
            model.leg_jacobian(leg, leg_angles(&state.q, leg)) * qd
        } else {
            Vec3::zeros()
        };
        let penetration = -body.clearance();
        let mut f = Vec3::zeros();
        if penetration > 0.0 {
            let v = point_velocity(state, &local, &local_rate);
            let normal = (cfg.contact_stiffness * penetration - cfg.contact_damping * v.z).max(0.0);
            let mut tangential = -cfg.tangential_damping * v.xy();
            let cap = cfg.friction * normal;
            let mag = tangential.norm();
            if mag > cap {
                tangential *= if mag > 0.0 { cap / mag } else { 0.0 };
            }
            f = Vec3::new(tangential.x, tangential.y, normal);
            let f_base = rt * f;
            force += f;
            moment += local.cross(&f_base);
            if body.kind == BodyKind::Foot {
                let leg = body.index;
                let tau = model.leg_jacobian(leg, leg_angles(&state.q, leg)).transpose() * f_base;
                for j in 0..3 {
                    joint_torque[3 * leg + j] += tau[j];
                }
            }
        }
        contacts.push(Contact {
            kind: body.kind,
            index: body.index,
            active: penetration > 0.0,
            penetration: penetration.max(0.0),
            force: f,
        });
    }
    (contacts, force, moment, joint_torque)
}

/// PD torque with saturation.
pub fn pd_torque(cfg: &SimConfig, target: f64, q: f64, qd: f64) -> f64 {
    (cfg.kp * (target - q) - cfg.kd * qd).clamp(-cfg.torque_limit, cfg.torque_limit)
}

/// One physics substep of length `cfg.dt`.
pub fn substep(state: &mut RobotState, target: &[f64; NUM_JOINTS], cfg: &SimConfig, model: &RobotModel) {
    let dt = cfg.dt;
    let (contacts, force, moment, contact_torque) = contact_forces(model, cfg, state);
    state.contacts = contacts;

    for j in 0..NUM_JOINTS {
        let [lo, hi] = model.joint_limits(j);
        let q = state.q[j];
        let stop = if q < lo {
            cfg.limit_stiffness * (lo - q)
        } else if q > hi {
            cfg.limit_stiffness * (hi - q)
        } else {
            0.0
        };
        let tau = pd_torque(cfg, target[j], q, state.qd[j]) + contact_torque[j] + stop;
        state.qd[j] += tau / cfg.joint_inertia[j % 3] * dt;
        state.q[j] += state.qd[j] * dt;
    }

    let accel = force / cfg.base_mass - Vec3::new(0.0, 0.0, cfg.gravity);
    state.velocity += accel * dt;
    state.position += state.velocity * dt;

    let inertia = Vec3::from(cfg.base_inertia);
    let w = state.angular_velocity;
    let gyro = w.cross(&inertia.component_mul(&w));
    state.angular_velocity += (moment - gyro).component_div(&inertia) * dt;
    state.rotation = orthonormalize(&(state.rotation * exp_so3(&(state.angular_velocity * dt))));
    state.time += dt;
}

/// Advances one control period toward the PD targets and refreshes the contact report.
pub fn step(state: &RobotState, target: &[f64; NUM_JOINTS], cfg: &SimConfig, model: &RobotModel) -> Result<RobotState, SimError> {
    let mut next = state.clone();
    let start = state.time;
    let n = cfg.substeps();
    for _ in 0..n {
        substep(&mut next, target, cfg, model);
        if next.max_magnitude() > DIVERGENCE_LIMIT {
            return Err(SimError::Diverged { time: next.time });
        }
    }
    // Keep the clock on the control grid rather than accumulating substep rounding.
    next.time = start + n as f64 * cfg.dt;
    next.contacts = contact_forces(model, cfg, &next).0;
    Ok(next)
}

/// True iff a body whose kind is not in `allowed` touches the ground.
pub fn contact_violation(state: &RobotState, allowed: &[BodyKind]) -> bool {
    state.contacts.iter().any(|c| c.active && !allowed.contains(&c.kind))
}

/// Mechanical energy of the base (kinetic plus potential), J.
pub fn base_energy(state: &RobotState, cfg: &SimConfig) -> f64 {
    let inertia = Vec3::from(cfg.base_inertia);
    let w = state.angular_velocity;
    0.5 * cfg.base_mass * state.velocity.norm_squared()
        + 0.5 * w.dot(&inertia.component_mul(&w))
        + cfg.base_mass * cfg.gravity * state.position.z
}

pub fn state_csv_header(model: &RobotModel) -> String {
    let mut cols = vec!["t", "x", "y", "z", "qw", "qx", "qy", "qz"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    cols.extend((0..NUM_JOINTS).map(|j| format!("q{j}")));
    for body in model.fk_links(&BasePose::identity(), &[0.0; NUM_JOINTS]) {
        cols.push(format!("contact_{}{}", body.kind.as_str(), body.index));
    }
    cols.join(",")
}

pub fn state_csv_row(state: &RobotState) -> String {
    let quat = to_quaternion(&state.rotation);
    let mut row = format!(
        "{},{},{},{},{},{},{},{}",
        state.time, state.position.x, state.position.y, state.position.z, quat.w, quat.i, quat.j, quat.k
    );
    for q in state.q {
        let _ = write!(row, ",{q}");
    }
    for c in &state.contacts {
        let _ = write!(row, ",{}", u8::from(c.active));
    }
    row
}
