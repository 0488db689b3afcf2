//! Adaptive motion sampling.
//!
//! Clips are split into an unsuccessful set U and a successful set S. Batches
//! draw a fixed share from U and the rest from S, each set walked through its
//! own shuffled epoch permutation. Periodic evaluation reassigns every clip.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{run_clip_episode, ActionSource, EnvConfig};
use crate::kinematics::RobotModel;
use crate::motion::Dataset;
use crate::sim::SimConfig;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum AmsError {
    #[error("cannot sample from an empty dataset")]
    EmptyDataset,
    #[error("batch size must be at least 1")]
    EmptyBatch,
}

/// One set with its epoch permutation.
#[derive(Debug, Clone, PartialEq)]
struct Epoch {
    ids: Vec<String>,
    order: Vec<usize>,
    cursor: usize,
}

impl Epoch {
    fn new(ids: Vec<String>, rng: &mut ChaCha8Rng) -> Self {
        let mut e = Self {
            order: (0..ids.len()).collect(),
            ids,
            cursor: 0,
        };
        e.order.shuffle(rng);
        e
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> String {
        let id = self.ids[self.order[self.cursor]].clone();
        self.cursor += 1;
        if self.cursor == self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSets {
    unsuccessful: Epoch,
    successful: Epoch,
    /// Iterations between evaluations.
    pub eval_period: usize,
    /// Share of each batch drawn from U.
    pub mix: f64,
}

/// Number of batch slots reserved for U: `mix·n` rounded half up.
pub fn quota(mix: f64, n: usize) -> usize {
    ((mix * n as f64 + 0.5 + 1e-9).floor() as usize).min(n)
}

impl SampleSets {
    /// Every clip starts unsuccessful.
    pub fn init(dataset: &Dataset, eval_period: usize, mix: f64, rng: &mut ChaCha8Rng) -> Result<Self, AmsError> {
        if dataset.is_empty() {
            return Err(AmsError::EmptyDataset);
        }
        Ok(Self {
            unsuccessful: Epoch::new(dataset.ids(), rng),
            successful: Epoch::new(Vec::new(), rng),
            eval_period,
            mix,
        })
    }

    pub fn unsuccessful(&self) -> &[String] {
        &self.unsuccessful.ids
    }

    pub fn successful(&self) -> &[String] {
        &self.successful.ids
    }

    /// Epoch cursors of (U, S).
    pub fn cursors(&self) -> (usize, usize) {
        (self.unsuccessful.cursor, self.successful.cursor)
    }

    /// `n` clip ids: U's quota first, then S's. An empty set hands its quota to the other.
    pub fn draw_batch(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<String>, AmsError> {
        if n == 0 {
            return Err(AmsError::EmptyBatch);
        }
        let (nu, ns) = (self.unsuccessful.ids.len(), self.successful.ids.len());
        let from_u = match (nu, ns) {
            (0, 0) => return Err(AmsError::EmptyDataset),
            (0, _) => 0,
            (_, 0) => n,
            _ => quota(self.mix, n),
        };
        let mut batch = Vec::with_capacity(n);
        for _ in 0..from_u {
            batch.push(self.unsuccessful.next(rng));
        }
        for _ in from_u..n {
            batch.push(self.successful.next(rng));
        }
        Ok(batch)
    }

    /// Moves each clip to S on success and to U otherwise, reshuffling both epochs.
    pub fn repartition(&mut self, success: &BTreeMap<String, bool>, rng: &mut ChaCha8Rng) {
        let all = self.unsuccessful.ids.iter().chain(&self.successful.ids);
        let (mut s, mut u): (Vec<String>, Vec<String>) =
            all.cloned().partition(|id| success.get(id).copied().unwrap_or(false));
        u.sort();
        s.sort();
        self.unsuccessful = Epoch::new(u, rng);
        self.successful = Epoch::new(s, rng);
    }

    /// Whether an evaluation is due after `iteration` completed iterations.
    pub fn eval_due(&self, iteration: usize) -> bool {
        self.eval_period > 0 && iteration > 0 && iteration.is_multiple_of(self.eval_period)
    }

    /// Runs one deterministic episode per clip and repartitions on the outcome.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate_and_repartition<P, F>(
        &mut self,
        dataset: &Dataset,
        make_policy: F,
        env_cfg: &EnvConfig,
        sim_cfg: &SimConfig,
        model: &RobotModel,
        seed: u64,
        iteration: usize,
        rng: &mut ChaCha8Rng,
    ) -> EvalReport
    where
        P: ActionSource,
        F: Fn() -> P + Sync,
    {
        let report = evaluate(dataset, make_policy, env_cfg, sim_cfg, model, seed, iteration);
        self.repartition(&report.success, rng);
        report
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub iteration: usize,
    pub success: BTreeMap<String, bool>,
    pub returns: BTreeMap<String, f64>,
    pub failed: usize,
    pub mean_return: f64,
}

impl EvalReport {
    pub fn failed_ids(&self) -> Vec<&str> {
        self.success.iter().filter(|(_, ok)| !**ok).map(|(id, _)| id.as_str()).collect()
    }
}

/// Deterministic evaluation of every clip. Start-state or simulator errors count as failures.
pub fn evaluate<P, F>(
    dataset: &Dataset,
    make_policy: F,
    env_cfg: &EnvConfig,
    sim_cfg: &SimConfig,
    model: &RobotModel,
    seed: u64,
    iteration: usize,
) -> EvalReport
where
    P: ActionSource,
    F: Fn() -> P + Sync,
{
    let clips: Vec<_> = dataset.clips.iter().collect();
    let outcomes: Vec<(bool, f64)> = clips
        .par_iter()
        .enumerate()
        .map(|(i, (id, clip))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut policy = make_policy();
            match run_clip_episode(clip, &mut policy, env_cfg, sim_cfg, model, &mut rng, false) {
                Ok(r) => (r.success, r.total_reward),
                Err(e) => {
                    log::warn!("evaluation of `{id}` failed: {e}");
                    (false, 0.0)
                }
            }
        })
        .collect();
    let mut success = BTreeMap::new();
    let mut returns = BTreeMap::new();
    for ((id, _), (ok, ret)) in clips.iter().zip(&outcomes) {
        success.insert((*id).clone(), *ok);
        returns.insert((*id).clone(), *ret);
    }
    let failed = outcomes.iter().filter(|(ok, _)| !ok).count();
    let mean_return = outcomes.iter().map(|(_, r)| r).sum::<f64>() / outcomes.len().max(1) as f64;
    EvalReport {
        iteration,
        success,
        returns,
        failed,
        mean_return,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{synthesize_clip, GaitSpec, MotionType};
    use std::collections::HashMap;

    fn dataset(n: usize) -> Dataset {
        let mut spec = GaitSpec::new(MotionType::Stand);
        spec.duration = 0.2;
        let clip = synthesize_clip(&spec, &RobotModel::a1_like()).unwrap();
        let mut d = Dataset::new();
        for i in 0..n {
            d.insert(format!("clip{i:03}"), clip.clone()).unwrap();
        }
        d
    }

    fn sets_with(nu: usize, ns: usize, rng: &mut ChaCha8Rng) -> SampleSets {
        let mut sets = SampleSets::init(&dataset(nu + ns), 200, 0.7, rng).unwrap();
        let success = (0..nu + ns).map(|i| (format!("clip{i:03}"), i >= nu)).collect();
        sets.repartition(&success, rng);
        sets
    }

    #[test]
    fn init_puts_everything_in_u() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sets = SampleSets::init(&dataset(701), 200, 0.7, &mut rng).unwrap();
        assert_eq!(sets.unsuccessful().len(), 701);
        assert!(sets.successful().is_empty());
        assert_eq!(sets.cursors(), (0, 0));
        assert_eq!(SampleSets::init(&dataset(1), 200, 0.7, &mut rng).unwrap().unsuccessful().len(), 1);
        assert_eq!(SampleSets::init(&Dataset::new(), 200, 0.7, &mut rng), Err(AmsError::EmptyDataset));
    }

    #[test]
    fn quota_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sets = sets_with(500, 201, &mut rng);
        let batch = sets.draw_batch(100, &mut rng).unwrap();
        let from_u = batch.iter().filter(|id| sets.unsuccessful().contains(id)).count();
        assert_eq!(from_u, 70);

        let mut sets = sets_with(10, 0, &mut rng);
        let batch = sets.draw_batch(100, &mut rng).unwrap();
        assert_eq!(batch.len(), 100);

        let mut sets = sets_with(5, 3, &mut rng);
        let batch = sets.draw_batch(100, &mut rng).unwrap();
        let mut counts: HashMap<&String, usize> = HashMap::new();
        for id in &batch[..70] {
            *counts.entry(id).or_default() += 1;
        }
        assert_eq!(counts.len(), 5);
        assert!(counts.values().all(|c| *c == 14));
    }

    #[test]
    fn quota_rounds_half_up() {
        for n in 1..200 {
            assert_eq!(quota(0.7, n), (7 * n + 5) / 10, "n = {n}");
        }
    }

    #[test]
    fn repartition_is_bidirectional() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sets = sets_with(2, 2, &mut rng);
        let flipped = (0..4).map(|i| (format!("clip{i:03}"), i < 2)).collect();
        sets.repartition(&flipped, &mut rng);
        assert_eq!(sets.successful(), ["clip000", "clip001"]);
        assert_eq!(sets.unsuccessful(), ["clip002", "clip003"]);
    }

    #[test]
    fn evaluation_drives_partition() {
        let d = dataset(3);
        let model = RobotModel::a1_like();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sets = SampleSets::init(&d, 200, 0.7, &mut rng).unwrap();
        let env = EnvConfig::default();
        let sim = SimConfig::default();
        let stand = || |_: &[f64], _: &mut ChaCha8Rng| [0.0; 12];
        let report = sets.evaluate_and_repartition(&d, stand, &env, &sim, &model, 0, 200, &mut rng);
        assert_eq!(report.failed, 0);
        assert_eq!(sets.successful().len(), 3);
        let before = sets.clone();
        sets.evaluate_and_repartition(&d, stand, &env, &sim, &model, 0, 400, &mut rng);
        assert_eq!(sets.successful(), before.successful());

        // Kicking the legs out from under the robot fails every clip.
        let kick = || |_: &[f64], _: &mut ChaCha8Rng| [0.0, -5.0, 5.0, 0.0, -5.0, 5.0, 0.0, -5.0, 5.0, 0.0, -5.0, 5.0];
        let mut long = Dataset::new();
        let clip = synthesize_clip(&GaitSpec::new(MotionType::Stand), &model).unwrap();
        long.insert("a", clip.clone()).unwrap();
        long.insert("b", clip).unwrap();
        let mut sets = SampleSets::init(&long, 200, 0.7, &mut rng).unwrap();
        let report = sets.evaluate_and_repartition(&long, kick, &env, &sim, &model, 0, 200, &mut rng);
        assert_eq!(report.failed, 2);
        assert_eq!(sets.unsuccessful().len(), 2);
    }

    #[test]
    fn eval_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sets = SampleSets::init(&dataset(2), 200, 0.7, &mut rng).unwrap();
        assert!(!sets.eval_due(0));
        assert!(!sets.eval_due(199));
        assert!(sets.eval_due(200));
        assert!(sets.eval_due(400));
    }
}
