//! The imitation MDP: observations, actions, reward, termination and the
//! fixed-rate episode loop.

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::kinematics::{BasePose, BodyKind, RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::motion::{MotionClip, ReferenceFrame, ReferenceSource, FRAME_DIM, WINDOW_OFFSETS};
use crate::sim::{self, RobotState, SimConfig, SimError};
use crate::spatial::{mat_to_row_major, Mat3, Vec3};

/// Robot block: x(3), R(9), q(12), v(3), ω(3), q̇(12).
pub const ROBOT_OBS_DIM: usize = 42;
pub const ACTION_DIM: usize = NUM_JOINTS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w1: 0.7,
            w2: 0.5,
            w3: 0.15,
            k1: 12.5,
            k2: 20.0,
            k3: 40.0,
        }
    }
}

impl RewardWeights {
    /// Terms are summed in reverse so perfect tracking reproduces this exactly.
    pub fn max_reward(&self) -> f64 {
        self.w3 + self.w2 + self.w1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Must equal the simulator's control period.
    pub control_period: f64,
    /// Episodes stop after this many seconds even on longer clips.
    pub episode_length: f64,
    pub nominal_pose: [f64; NUM_JOINTS],
    /// Number of most recent raw actions averaged into the PD residual.
    pub smoothing_window: usize,
    /// Residuals are taken about the current reference pose instead of the nominal one.
    pub action_prior: bool,
    /// Reference window times relative to now (s).
    pub reference_offsets: Vec<f64>,
    /// Adds the reference at offset 0 to the window.
    pub include_current_frame: bool,
    /// Reports v in the base frame instead of the world frame.
    pub velocity_in_base_frame: bool,
    /// Body kinds that may touch the ground without ending the episode.
    pub allowed_contacts: Vec<BodyKind>,
    pub reward: RewardWeights,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            control_period: 0.02,
            episode_length: 10.0,
            nominal_pose: RobotModel::nominal_pose(),
            smoothing_window: 2,
            action_prior: false,
            reference_offsets: WINDOW_OFFSETS.to_vec(),
            include_current_frame: false,
            velocity_in_base_frame: false,
            allowed_contacts: vec![BodyKind::Foot],
            reward: RewardWeights::default(),
        }
    }
}

impl EnvConfig {
    /// Window of the `k` offsets nearest to now (past before future on ties).
    pub fn window_offsets(k: usize) -> Vec<f64> {
        let mut by_distance = WINDOW_OFFSETS.to_vec();
        by_distance.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
        let mut chosen: Vec<f64> = by_distance.into_iter().take(k).collect();
        chosen.sort_by(f64::total_cmp);
        chosen
    }

    /// Offsets actually sampled, in observation order.
    pub fn sampled_offsets(&self) -> Vec<f64> {
        let mut offsets = self.reference_offsets.clone();
        if self.include_current_frame && !offsets.contains(&0.0) {
            offsets.push(0.0);
            offsets.sort_by(f64::total_cmp);
        }
        offsets
    }

    pub fn obs_dim(&self) -> usize {
        ROBOT_OBS_DIM + FRAME_DIM * self.sampled_offsets().len()
    }

    pub fn max_steps(&self) -> usize {
        steps_for(self.episode_length, self.control_period)
    }

    pub fn validate(&self, model: &RobotModel) -> Result<(), ConfigError> {
        let invalid = |field, message: &str| {
            Err(ConfigError::Invalid {
                field,
                message: message.to_string(),
            })
        };
        if !(self.control_period > 0.0) {
            return invalid("control_period", "must be > 0");
        }
        if !(self.episode_length > 0.0) {
            return invalid("episode_length", "must be > 0");
        }
        if self.smoothing_window < 1 {
            return invalid("smoothing_window", "must be >= 1");
        }
        if !model.within_limits(&self.nominal_pose) {
            return invalid("nominal_pose", "must lie within the joint limits");
        }
        if self.reference_offsets.iter().any(|o| !o.is_finite()) {
            return invalid("reference_offsets", "must be finite");
        }
        let w = &self.reward;
        if [w.w1, w.w2, w.w3, w.k1, w.k2, w.k3].iter().any(|v| !(*v > 0.0)) {
            return invalid("reward", "weights and scales must be > 0");
        }
        Ok(())
    }
}

/// Control steps needed to cover `duration` seconds.
pub fn steps_for(duration: f64, period: f64) -> usize {
    (duration / period - 1e-9).ceil().max(0.0) as usize
}

/// Observation vector for the robot state and the reference around time `t`.
pub fn observe<R: ReferenceSource + ?Sized>(state: &RobotState, reference: &R, t: f64, cfg: &EnvConfig) -> Vec<f64> {
    let mut obs = Vec::with_capacity(cfg.obs_dim());
    obs.extend(state.position.iter());
    obs.extend(mat_to_row_major(&state.rotation));
    obs.extend(state.q);
    let v = if cfg.velocity_in_base_frame {
        state.rotation.transpose() * state.velocity
    } else {
        state.velocity
    };
    obs.extend(v.iter());
    obs.extend(state.angular_velocity.iter());
    obs.extend(state.qd);
    let end = reference.duration();
    for offset in cfg.sampled_offsets() {
        let frame = reference.frame_at((t + offset).clamp(0.0, end));
        obs.extend(frame.to_array());
    }
    obs
}

/// Tracks the most recent raw actions for the moving-average filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionFilter {
    history: Vec<[f64; ACTION_DIM]>,
    next: usize,
}

impl ActionFilter {
    /// Starts with an all-zero history.
    pub fn new(window: usize) -> Self {
        Self {
            history: vec![[0.0; ACTION_DIM]; window.max(1) - 1],
            next: 0,
        }
    }

    /// Average of `raw` and the stored history; then remembers `raw`.
    pub fn push(&mut self, raw: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
        let n = self.history.len() + 1;
        let smoothed = std::array::from_fn(|j| (raw[j] + self.history.iter().map(|h| h[j]).sum::<f64>()) / n as f64);
        if !self.history.is_empty() {
            self.history[self.next] = *raw;
            self.next = (self.next + 1) % self.history.len();
        }
        smoothed
    }
}

/// PD target from a raw policy output: smoothed residual about the nominal
/// pose (or the reference pose in action-prior mode), clamped to the limits.
pub fn process_action(
    raw: &[f64; ACTION_DIM],
    filter: &mut ActionFilter,
    cfg: &EnvConfig,
    model: &RobotModel,
    reference: Option<&ReferenceFrame>,
) -> [f64; NUM_JOINTS] {
    let smoothed = filter.push(raw);
    let origin = match (cfg.action_prior, reference) {
        (true, Some(r)) => r.joints,
        _ => cfg.nominal_pose,
    };
    let target = std::array::from_fn(|j| origin[j] + smoothed[j]);
    model.clamp_joints(&target)
}

/// Tracking reward from the three error terms.
#[allow(clippy::too_many_arguments)]
pub fn reward_terms(
    x: &Vec3,
    rotation: &Mat3,
    feet: &[Vec3; NUM_LEGS],
    ref_x: &Vec3,
    ref_rotation: &Mat3,
    ref_feet: &[Vec3; NUM_LEGS],
    w: &RewardWeights,
) -> f64 {
    let dx = (ref_x - x).norm_squared();
    let dr = (ref_rotation - rotation).norm_squared();
    let de: f64 = feet.iter().zip(ref_feet).map(|(a, b)| (b - a).norm_squared()).sum();
    w.w3 * (-w.k3 * de).exp() + w.w2 * (-w.k2 * dr).exp() + w.w1 * (-w.k1 * dx).exp()
}

pub fn reward(state: &RobotState, reference: &ReferenceFrame, w: &RewardWeights, model: &RobotModel) -> f64 {
    let feet = model.fk_feet(&state.pose(), &state.q);
    let ref_feet = model.fk_feet(&BasePose::new(reference.com, reference.rotation), &reference.joints);
    reward_terms(
        &state.position,
        &state.rotation,
        &feet,
        &reference.com,
        &reference.rotation,
        &ref_feet,
        w,
    )
}

/// Early termination: a body outside the allowed set touches the ground.
pub fn terminated(state: &RobotState, cfg: &EnvConfig) -> bool {
    sim::contact_violation(state, &cfg.allowed_contacts)
}

/// Maps observations to raw actions.
pub trait ActionSource {
    fn act(&mut self, obs: &[f64], rng: &mut ChaCha8Rng) -> [f64; ACTION_DIM];
}

impl<F: FnMut(&[f64], &mut ChaCha8Rng) -> [f64; ACTION_DIM]> ActionSource for F {
    fn act(&mut self, obs: &[f64], rng: &mut ChaCha8Rng) -> [f64; ACTION_DIM] {
        self(obs, rng)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("control periods differ: env {env} s, sim {sim} s")]
    PeriodMismatch { env: f64, sim: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub reward: f64,
    pub position: Vec3,
    pub ref_position: Vec3,
    pub feet_contact: [bool; NUM_LEGS],
    pub terminated: bool,
}

/// Transitions kept for learning.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transitions {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub rewards: Vec<f64>,
    /// Observation after the last step, for bootstrapping truncated episodes.
    pub final_observation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub total_reward: f64,
    pub steps: usize,
    pub planned_steps: usize,
    pub success: bool,
    pub terminated: bool,
    pub diverged: bool,
    pub trajectory: Vec<TrajectoryRow>,
    pub transitions: Transitions,
}

impl EpisodeResult {
    pub fn mean_reward(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.total_reward / self.steps as f64
        }
    }

    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from(
            "t,reward,x,y,z,ref_x,ref_y,ref_z,base_height,ref_height,contact_FR,contact_FL,contact_RR,contact_RL,terminated\n",
        );
        for r in &self.trajectory {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.reward,
                r.position.x,
                r.position.y,
                r.position.z,
                r.ref_position.x,
                r.ref_position.y,
                r.ref_position.z,
                r.position.z,
                r.ref_position.z
            );
            for c in r.feet_contact {
                let _ = write!(out, ",{}", u8::from(c));
            }
            let _ = writeln!(out, ",{}", u8::from(r.terminated));
        }
        out
    }
}

/// Runs one episode from the first clip frame at the control rate until the
/// clip (or the episode length) ends or the robot falls.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<R: ReferenceSource + ?Sized, P: ActionSource + ?Sized>(
    reference: &R,
    start: &RobotState,
    policy: &mut P,
    cfg: &EnvConfig,
    sim_cfg: &SimConfig,
    model: &RobotModel,
    rng: &mut ChaCha8Rng,
    record: bool,
) -> Result<EpisodeResult, EnvError> {
    if (cfg.control_period - sim_cfg.control_period).abs() > 1e-12 {
        return Err(EnvError::PeriodMismatch {
            env: cfg.control_period,
            sim: sim_cfg.control_period,
        });
    }
    let planned = steps_for(reference.duration(), cfg.control_period).min(cfg.max_steps());
    let mut state = start.clone();
    let mut filter = ActionFilter::new(cfg.smoothing_window);
    let mut result = EpisodeResult {
        total_reward: 0.0,
        steps: 0,
        planned_steps: planned,
        success: false,
        terminated: false,
        diverged: false,
        trajectory: Vec::with_capacity(planned),
        transitions: Transitions::default(),
    };
    let mut obs = observe(&state, reference, 0.0, cfg);
    for k in 0..planned {
        let t = k as f64 * cfg.control_period;
        let raw = policy.act(&obs, rng);
        let current = cfg.action_prior.then(|| reference.frame_at(t));
        let target = process_action(&raw, &mut filter, cfg, model, current.as_ref());
        state = match sim::step(&state, &target, sim_cfg, model) {
            Ok(s) => s,
            Err(SimError::Diverged { .. }) => {
                result.diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let t_next = (k + 1) as f64 * cfg.control_period;
        let goal = reference.frame_at(t_next);
        let r = reward(&state, &goal, &cfg.reward, model);
        let done = terminated(&state, cfg);
        result.total_reward += r;
        result.steps += 1;
        if record {
            result.transitions.observations.push(std::mem::take(&mut obs));
            result.transitions.actions.push(raw);
            result.transitions.rewards.push(r);
        }
        result.trajectory.push(TrajectoryRow {
            t: t_next,
            reward: r,
            position: state.position,
            ref_position: goal.com,
            feet_contact: state.foot_contacts(),
            terminated: done,
        });
        obs = observe(&state, reference, t_next, cfg);
        if done {
            result.terminated = true;
            break;
        }
    }
    if record {
        result.transitions.final_observation = obs;
    }
    result.success = !result.terminated && !result.diverged && result.steps == planned;
    Ok(result)
}

/// [`run_episode`] starting from the clip's first frame and its initial velocities.
#[allow(clippy::too_many_arguments)]
pub fn run_clip_episode<P: ActionSource + ?Sized>(
    clip: &MotionClip,
    policy: &mut P,
    cfg: &EnvConfig,
    sim_cfg: &SimConfig,
    model: &RobotModel,
    rng: &mut ChaCha8Rng,
    record: bool,
) -> Result<EpisodeResult, EnvError> {
    let start = sim::reset_from_clip(model, sim_cfg, clip)?;
    run_episode(clip, &start, policy, cfg, sim_cfg, model, rng, record)
}
