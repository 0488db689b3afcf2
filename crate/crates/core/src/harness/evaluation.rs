//! Deterministic per-clip evaluation with tracking metrics.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{run_clip_episode, EnvError, EpisodeResult};
use crate::learner::{MeanActor, Policy, RunConfig};
use crate::motion::{Dataset, MotionClip};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip: String,
    pub success: bool,
    pub total_return: f64,
    pub mean_reward: f64,
    pub steps: usize,
    pub planned_steps: usize,
    /// Time of early termination, if any (s).
    pub termination_time: Option<f64>,
    /// Mean CoM position error over the survived steps (m); none without a start.
    pub tracking_error: Option<f64>,
    /// Mean CoM height error over the survived steps (m).
    pub height_error: Option<f64>,
    pub error: Option<String>,
}

impl ClipMetrics {
    pub fn from_episode(clip: &str, r: &EpisodeResult) -> Self {
        let n = r.trajectory.len().max(1) as f64;
        let tracking = r.trajectory.iter().map(|t| (t.position - t.ref_position).norm()).sum::<f64>() / n;
        let height = r.trajectory.iter().map(|t| (t.position.z - t.ref_position.z).abs()).sum::<f64>() / n;
        Self {
            clip: clip.to_string(),
            success: r.success,
            total_return: r.total_reward,
            mean_reward: r.mean_reward(),
            steps: r.steps,
            planned_steps: r.planned_steps,
            termination_time: (!r.success).then(|| r.trajectory.last().map_or(0.0, |t| t.t)),
            tracking_error: Some(tracking),
            height_error: Some(height),
            error: None,
        }
    }

    fn failed(clip: &str, e: &EnvError) -> Self {
        Self {
            clip: clip.to_string(),
            success: false,
            total_return: 0.0,
            mean_reward: 0.0,
            steps: 0,
            planned_steps: 0,
            termination_time: Some(0.0),
            tracking_error: None,
            height_error: None,
            error: Some(e.to_string()),
        }
    }
}

pub const METRICS_CSV_HEADER: &str =
    "clip,success,return,mean_reward,steps,planned_steps,termination_time,tracking_error,height_error,error";

pub fn metrics_csv(metrics: &[ClipMetrics]) -> String {
    let mut out = format!("{METRICS_CSV_HEADER}\n");
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            m.clip,
            u8::from(m.success),
            m.total_return,
            m.mean_reward,
            m.steps,
            m.planned_steps,
            m.termination_time.map(|t| t.to_string()).unwrap_or_default(),
            opt(m.tracking_error),
            opt(m.height_error),
            m.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs the policy mean on one clip.
pub fn rollout(clip: &MotionClip, policy: &Policy, run: &RunConfig, seed: u64) -> Result<EpisodeResult, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_clip_episode(clip, &mut MeanActor(policy), &run.env, &run.sim, &run.model, &mut rng, false)
}

/// One deterministic episode per clip, seeded like the AMS evaluation so the
/// success flags agree with it.
pub fn evaluate_clips(dataset: &Dataset, policy: &Policy, run: &RunConfig, seed: u64) -> Vec<ClipMetrics> {
    let clips: Vec<_> = dataset.clips.iter().collect();
    clips
        .par_iter()
        .enumerate()
        .map(|(i, (id, clip))| {
            let clip_seed = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            match rollout(clip, policy, run, clip_seed) {
                Ok(r) => ClipMetrics::from_episode(id, &r),
                Err(e) => ClipMetrics::failed(id, &e),
            }
        })
        .collect()
}
