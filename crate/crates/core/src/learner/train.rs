//! The training loop: clip batches from AMS (or uniform), parallel rollouts,
//! PPO updates, periodic evaluation and checkpoints.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointError};
use super::policy::{MeanActor, Policy, StochasticActor};
use super::ppo::{self, Adam, Batch, LossStats, PpoConfig};
use crate::ams::{self, AmsError, EvalReport, SampleSets};
use crate::config::{self, ConfigError};
use crate::env::{run_clip_episode, EnvConfig, EpisodeResult, ACTION_DIM};
use crate::kinematics::RobotModel;
use crate::motion::Dataset;
use crate::sim::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Adaptive motion sampling; uniform over the dataset when false.
    pub adaptive_sampling: bool,
    pub eval_period: usize,
    /// Share of each batch drawn from the unsuccessful set.
    pub mix: f64,
    /// Rayon worker threads; 0 uses every core. Results do not depend on it.
    pub workers: usize,
    /// Stop once an evaluation succeeds on every clip.
    pub stop_on_success: bool,
    /// Also evaluate before the first iteration.
    pub eval_at_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            seed: 0,
            adaptive_sampling: true,
            eval_period: 200,
            mix: 0.7,
            workers: 0,
            stop_on_success: false,
            eval_at_start: true,
        }
    }
}

/// Everything a training run depends on besides the dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: RobotModel,
    pub sim: SimConfig,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.sim.validate()?;
        self.env.validate(&self.model)?;
        self.ppo.validate()?;
        if (self.env.control_period - self.sim.control_period).abs() > 1e-12 {
            return Err(ConfigError::Invalid {
                field: "control_period",
                message: "env and sim control periods differ".into(),
            });
        }
        if self.train.eval_period == 0 {
            return Err(ConfigError::Invalid {
                field: "eval_period",
                message: "must be >= 1".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.train.mix) {
            return Err(ConfigError::Invalid {
                field: "mix",
                message: "must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }

    /// Reads the run config embedded in a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ConfigError> {
        config::parse(&ck.metadata).map_err(|message| ConfigError::Parse {
            path: PathBuf::from("<checkpoint metadata>"),
            message,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ams(#[from] AmsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot build worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub mode: &'static str,
    pub episodes: usize,
    /// Episodes discarded after divergence or an invalid start.
    pub dropped: usize,
    pub samples: usize,
    pub mean_episode_reward: f64,
    pub mean_step_reward: f64,
    /// Failed clips at the latest evaluation.
    pub failed: Option<usize>,
    pub unsuccessful: usize,
    pub successful: usize,
    pub update_ok: bool,
    pub loss: LossStats,
}

pub const TRAIN_LOG_HEADER: &str = "iteration,mode,episodes,dropped,samples,mean_episode_reward,mean_step_reward,failed,unsuccessful,successful,update_ok,loss,surrogate,value_loss,entropy,kl,clip_fraction";
pub const EVAL_LOG_HEADER: &str = "iteration,failed,clips,unsuccessful,successful,mean_return,failed_ids";

impl IterationLog {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.mode,
            self.episodes,
            self.dropped,
            self.samples,
            self.mean_episode_reward,
            self.mean_step_reward,
            self.failed.map(|f| f.to_string()).unwrap_or_default(),
            self.unsuccessful,
            self.successful,
            u8::from(self.update_ok),
            l.total,
            l.surrogate,
            l.value,
            l.entropy,
            l.kl,
            l.clip_fraction
        )
    }
}

pub fn eval_csv_row(r: &EvalReport, unsuccessful: usize, successful: usize) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.iteration,
        r.failed,
        r.success.len(),
        unsuccessful,
        successful,
        r.mean_return,
        r.failed_ids().join(";")
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub iterations: usize,
    pub log: Vec<IterationLog>,
    pub evals: Vec<EvalReport>,
}

impl TrainOutcome {
    pub fn final_eval(&self) -> Option<&EvalReport> {
        self.evals.last()
    }
}

/// Seed for an independent stream keyed by (seed, a, b).
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the evaluation run after `iteration` completed iterations.
pub fn eval_seed(seed: u64, iteration: usize) -> u64 {
    derive_seed(seed, STREAM_EVAL, iteration as u64)
}

const STREAM_ROLLOUT: u64 = 1;
const STREAM_UPDATE: u64 = 2;
const STREAM_EVAL: u64 = 3;

struct Logs {
    train: BufWriter<File>,
    eval: BufWriter<File>,
    dir: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Logs {
    fn create(dir: &Path, cfg: &RunConfig) -> Result<Self, TrainError> {
        fs::create_dir_all(dir.join("checkpoints")).map_err(io_err(dir))?;
        config::save(cfg, &dir.join("config.toml"))?;
        let open = |name: &str, header: &str| -> Result<BufWriter<File>, TrainError> {
            let path = dir.join(name);
            let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            writeln!(w, "{header}").map_err(io_err(&path))?;
            Ok(w)
        };
        Ok(Self {
            train: open("train_log.csv", TRAIN_LOG_HEADER)?,
            eval: open("eval_log.csv", EVAL_LOG_HEADER)?,
            dir: dir.to_path_buf(),
        })
    }

    fn line(w: &mut BufWriter<File>, dir: &Path, row: &str) -> Result<(), TrainError> {
        writeln!(w, "{row}").and_then(|_| w.flush()).map_err(io_err(dir))
    }
}

/// Rollout samples of one iteration, ready for the PPO update.
struct Rollouts {
    batch: Batch,
    episodes: usize,
    dropped: usize,
    total_reward: f64,
}

/// Per-episode slices of the merged buffer plus how each one ended.
struct Segment {
    len: usize,
    terminal: bool,
    final_obs: Vec<f64>,
}

fn collect(
    results: Vec<Option<EpisodeResult>>,
    policy: &mut Policy,
    ppo_cfg: &PpoConfig,
) -> Rollouts {
    let obs_dim = policy.obs_dim();
    let mut raw_obs = Vec::new();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut segments = Vec::new();
    let (mut episodes, mut dropped, mut total_reward) = (0, 0, 0.0);
    for r in results {
        let Some(r) = r else {
            dropped += 1;
            continue;
        };
        if r.diverged {
            dropped += 1;
            continue;
        }
        episodes += 1;
        total_reward += r.total_reward;
        let t = r.transitions;
        segments.push(Segment {
            len: t.rewards.len(),
            terminal: r.terminated,
            final_obs: t.final_observation,
        });
        for o in &t.observations {
            raw_obs.extend_from_slice(o);
        }
        for a in &t.actions {
            actions.extend_from_slice(a);
        }
        rewards.extend(t.rewards);
    }
    let n = rewards.len();
    let raw = Array2::from_shape_vec((n, obs_dim), raw_obs).expect("observation width");
    policy.normalizer.update(&raw.view());
    let obs = policy.normalizer.normalize_batch(&raw.view());
    let actions = Array2::from_shape_vec((n, ACTION_DIM), actions).expect("action width");
    let old_log_prob = ppo::log_probs(policy, &obs, &actions);
    let values = ppo::values(policy, &obs);

    let mut advantages = Vec::with_capacity(n);
    let mut returns = Vec::with_capacity(n);
    let mut start = 0;
    for seg in &segments {
        let end = start + seg.len;
        let mut v: Vec<f64> = values.slice(ndarray::s![start..end]).to_vec();
        let bootstrap = if seg.terminal || seg.len == 0 {
            0.0
        } else {
            policy.forward(&seg.final_obs).expect("observation width").value
        };
        v.push(bootstrap);
        let mut terminals = vec![false; seg.len];
        if let Some(last) = terminals.last_mut() {
            *last = seg.terminal;
        }
        let (a, r) = ppo::gae(&rewards[start..end], &v, &terminals, ppo_cfg.gamma, ppo_cfg.lambda);
        advantages.extend(a);
        returns.extend(r);
        start = end;
    }
    ppo::normalize_advantages(&mut advantages);
    Rollouts {
        batch: Batch {
            obs,
            actions,
            old_log_prob,
            advantages: Array1::from(advantages),
            returns: Array1::from(returns),
        },
        episodes,
        dropped,
        total_reward,
    }
}

/// Trains a fresh policy on `dataset`. With `out`, writes `config.toml`,
/// `train_log.csv`, `eval_log.csv` and checkpoints under it.
pub fn train(dataset: &Dataset, cfg: &RunConfig, out: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(AmsError::EmptyDataset.into());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.train.workers).build()?;
    pool.install(|| train_in_pool(dataset, cfg, out))
}

fn train_in_pool(dataset: &Dataset, cfg: &RunConfig, out: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    let tc = &cfg.train;
    let metadata = config::to_text(cfg);
    let mut logs = out.map(|dir| Logs::create(dir, cfg)).transpose()?;
    let mode = if tc.adaptive_sampling { "ams" } else { "uniform" };
    log::info!("training {} iterations on {} clips, sampling: {mode}", tc.iterations, dataset.len());

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut policy = Policy::new(
        cfg.env.obs_dim(),
        &cfg.ppo.hidden,
        cfg.ppo.leaky_slope,
        cfg.ppo.init_log_std,
        &mut rng,
    );
    let mut adam = Adam::new(policy.num_params(), cfg.ppo.learning_rate);
    let mut sets = SampleSets::init(dataset, tc.eval_period, tc.mix, &mut rng)?;
    let ids = dataset.ids();
    let mut rollout_env = cfg.env.clone();
    rollout_env.episode_length = rollout_env
        .episode_length
        .min(cfg.ppo.horizon as f64 * cfg.env.control_period);

    let mut outcome = TrainOutcome {
        policy: policy.clone(),
        iterations: 0,
        log: Vec::new(),
        evals: Vec::new(),
    };
    let mut failed = None;

    let evaluate = |policy: &Policy,
                        iteration: usize,
                        sets: &mut SampleSets,
                        rng: &mut ChaCha8Rng,
                        repartition: bool,
                        outcome: &mut TrainOutcome,
                        logs: &mut Option<Logs>|
     -> Result<bool, TrainError> {
        let seed = eval_seed(tc.seed, iteration);
        let report = ams::evaluate(
            dataset,
            || MeanActor(policy),
            &cfg.env,
            &cfg.sim,
            &cfg.model,
            seed,
            iteration,
        );
        if repartition && tc.adaptive_sampling {
            sets.repartition(&report.success, rng);
        }
        log::info!(
            "iteration {iteration}: {} of {} clips failed, mean return {:.3}",
            report.failed,
            report.success.len(),
            report.mean_return
        );
        let all_ok = report.failed == 0;
        if let Some(l) = logs.as_mut() {
            let row = eval_csv_row(&report, sets.unsuccessful().len(), sets.successful().len());
            Logs::line(&mut l.eval, &l.dir, &row)?;
            let ck = Checkpoint {
                iteration: iteration as u64,
                metadata: metadata.clone(),
                policy: policy.clone(),
            };
            ck.save(&l.dir.join("checkpoints").join(format!("iter_{iteration:06}.bin")))?;
        }
        outcome.evals.push(report);
        Ok(all_ok)
    };

    if tc.eval_at_start {
        evaluate(&policy, 0, &mut sets, &mut rng, false, &mut outcome, &mut logs)?;
        failed = outcome.evals.last().map(|r| r.failed);
    }

    let mut iteration = 0;
    while iteration < tc.iterations {
        let batch_ids = if tc.adaptive_sampling {
            sets.draw_batch(cfg.ppo.num_envs, &mut rng)?
        } else {
            (0..cfg.ppo.num_envs)
                .map(|_| ids[rng.random_range(0..ids.len())].clone())
                .collect()
        };
        let snapshot = &policy;
        let results: Vec<Option<EpisodeResult>> = batch_ids
            .par_iter()
            .enumerate()
            .map(|(i, id)| {
                let clip = dataset.get(id).expect("batch ids come from the dataset");
                let mut env_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    tc.seed,
                    STREAM_ROLLOUT,
                    (iteration as u64) << 20 | i as u64,
                ));
                let mut actor = StochasticActor(snapshot);
                match run_clip_episode(clip, &mut actor, &rollout_env, &cfg.sim, &cfg.model, &mut env_rng, true) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        log::warn!("rollout on `{id}` dropped: {e}");
                        None
                    }
                }
            })
            .collect();
        for (r, id) in results.iter().zip(&batch_ids) {
            if r.as_ref().is_some_and(|r| r.diverged) {
                log::warn!("rollout on `{id}` diverged and was dropped");
            }
        }
        let rollouts = collect(results, &mut policy, &cfg.ppo);
        let samples = rollouts.batch.len();
        let mut update_rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, STREAM_UPDATE, iteration as u64));
        let (update_ok, loss) = match ppo::update(&mut policy, &mut adam, &rollouts.batch, &cfg.ppo, &mut update_rng) {
            Ok(stats) => (true, stats),
            Err(e) => {
                log::warn!("iteration {iteration}: {e}");
                (false, LossStats::default())
            }
        };
        iteration += 1;

        let mut done = false;
        if iteration % tc.eval_period == 0 || iteration == tc.iterations {
            let due = sets.eval_due(iteration);
            done = evaluate(&policy, iteration, &mut sets, &mut rng, due, &mut outcome, &mut logs)?;
            failed = outcome.evals.last().map(|r| r.failed);
        }
        let row = IterationLog {
            iteration,
            mode,
            episodes: rollouts.episodes,
            dropped: rollouts.dropped,
            samples,
            mean_episode_reward: rollouts.total_reward / rollouts.episodes.max(1) as f64,
            mean_step_reward: rollouts.total_reward / samples.max(1) as f64,
            failed,
            unsuccessful: sets.unsuccessful().len(),
            successful: sets.successful().len(),
            update_ok,
            loss,
        };
        if let Some(l) = logs.as_mut() {
            Logs::line(&mut l.train, &l.dir, &row.csv_row())?;
        }
        log::debug!(
            "iteration {iteration}: reward/step {:.4}, loss {:.4}, kl {:.2e}",
            row.mean_step_reward,
            row.loss.total,
            row.loss.kl
        );
        outcome.log.push(row);
        if done && tc.stop_on_success {
            log::info!("every clip succeeded at iteration {iteration}; stopping");
            break;
        }
    }

    if let Some(l) = logs.as_ref() {
        let ck = Checkpoint {
            iteration: iteration as u64,
            metadata,
            policy: policy.clone(),
        };
        ck.save(&l.dir.join("final.bin"))?;
    }
    outcome.iterations = iteration;
    outcome.policy = policy;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{synthesize_clip, GaitSpec, MotionType};

    fn tiny_run(iterations: usize) -> (Dataset, RunConfig) {
        let model = RobotModel::a1_like();
        let mut d = Dataset::new();
        for (i, t) in [MotionType::Stand, MotionType::Trot].into_iter().enumerate() {
            let mut spec = GaitSpec::new(t);
            spec.duration = 0.4;
            d.insert(format!("c{i}"), synthesize_clip(&spec, &model).unwrap()).unwrap();
        }
        let cfg = RunConfig {
            ppo: PpoConfig {
                hidden: vec![8],
                num_envs: 3,
                minibatch_size: 16,
                epochs: 2,
                ..PpoConfig::default()
            },
            train: TrainConfig {
                iterations,
                eval_period: 2,
                workers: 2,
                ..TrainConfig::default()
            },
            ..RunConfig::default()
        };
        (d, cfg)
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, 1, 0);
        assert_ne!(a, derive_seed(1, 1, 1));
        assert_ne!(a, derive_seed(1, 2, 0));
        assert_ne!(a, derive_seed(2, 1, 0));
    }

    #[test]
    fn run_writes_logs_and_is_deterministic() {
        let (d, cfg) = tiny_run(3);
        let dir = tempfile::tempdir().unwrap();
        let a = train(&d, &cfg, Some(dir.path())).unwrap();
        assert_eq!(a.iterations, 3);
        // Evaluations at 0, 2 and the final iteration.
        assert_eq!(a.evals.iter().map(|e| e.iteration).collect::<Vec<_>>(), vec![0, 2, 3]);
        let log = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        assert_eq!(log.lines().count(), 4);
        assert!(log.lines().nth(1).unwrap().contains(",ams,"));
        assert!(dir.path().join("final.bin").exists());
        assert!(dir.path().join("checkpoints/iter_000002.bin").exists());
        let snapshot: RunConfig = config::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(snapshot, cfg);

        let mut single = cfg.clone();
        single.train.workers = 1;
        let b = train(&d, &single, None).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn uniform_mode_is_logged() {
        let (d, mut cfg) = tiny_run(1);
        cfg.train.adaptive_sampling = false;
        let out = train(&d, &cfg, None).unwrap();
        assert_eq!(out.log[0].mode, "uniform");
        assert_eq!(out.log[0].episodes + out.log[0].dropped, 3);
    }
}
