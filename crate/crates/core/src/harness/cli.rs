//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::dataset_gen::{generate_dataset, DatasetSpec};
use super::evaluation::{evaluate_clips, metrics_csv, rollout};
use super::experiment::{emit_plots, run_experiment, ExperimentSpec, Report};
use crate::config::{self, load_or_default};
use crate::kinematics::RobotModel;
use crate::learner::train::eval_seed;
use crate::learner::{train, Checkpoint, RunConfig, TrainConfig};
use crate::motion::{read_clip, synthesize_clip, write_dataset, GaitSpec, MotionClip, MotionType, MANIFEST_FILE};
use crate::retarget::{read_source, retarget_pipeline, synthesize_source, write_source, RetargetConfig, RetargetReport};

#[derive(Debug, Parser)]
#[command(name = "quadmimic", version, about = "Motion imitation for quadrupeds")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural dataset from a per-type count spec.
    GenDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write a synthetic source-skeleton keypoint file.
    GenSource {
        #[arg(long = "type")]
        motion_type: MotionType,
        #[arg(long)]
        out: PathBuf,
        /// Skeleton size relative to the robot.
        #[arg(long, default_value_t = 1.0)]
        skeleton_scale: f64,
        #[arg(long)]
        knees: bool,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
    },
    /// Retarget a source keypoint file onto the robot.
    Retarget {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Retargeting config file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        knee_hints: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every clip of a dataset directory.
    Validate { dir: PathBuf },
    /// Train a policy.
    Train(TrainArgs),
    /// Evaluate a checkpoint on every clip of a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        friction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out a checkpoint on one clip and write the trajectory.
    Rollout {
        /// Clip id in `--dataset`, or a motion type to synthesize.
        #[arg(long)]
        clip: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a variant-by-seed experiment.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-emit plots and summaries from an experiment directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub sim: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long)]
    pub ppo: Option<PathBuf>,
    /// Training-loop config (eval period, mix, workers, ...).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Sample clips uniformly instead of adaptively.
    #[arg(long)]
    pub no_ams: bool,
    /// Observe only the current reference frame.
    #[arg(long)]
    pub obs_current_only: bool,
    /// Residual actions about the current reference pose.
    #[arg(long)]
    pub action_prior: bool,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig {
            model: load_or_default(self.model.as_deref())?,
            sim: load_or_default(self.sim.as_deref())?,
            env: load_or_default(self.env.as_deref())?,
            ppo: load_or_default(self.ppo.as_deref())?,
            train: load_or_default::<TrainConfig>(self.train.as_deref())?,
        };
        if self.no_ams {
            cfg.train.adaptive_sampling = false;
        }
        if self.obs_current_only {
            cfg.env.reference_offsets.clear();
            cfg.env.include_current_frame = true;
        }
        if self.action_prior {
            cfg.env.action_prior = true;
        }
        if let Some(n) = self.iters {
            cfg.train.iterations = n;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.train.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `<file>.config.toml` next to an output file.
fn snapshot_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.toml");
    out.with_file_name(name)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("cannot create {}", p.display()))?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn snapshot<T: Serialize>(out: &Path, value: &T) -> Result<()> {
    write_file(&snapshot_path(out), config::to_text(value))
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, RunConfig)> {
    let ck = Checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    let run = RunConfig::from_checkpoint(&ck)?;
    Ok((ck, run))
}

/// Clip files of a dataset directory, from its manifest or by extension.
fn dataset_entries(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        let text = fs::read_to_string(&manifest)?;
        return Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let cols: Vec<&str> = l.split('\t').collect();
                let file = cols.get(2).copied().unwrap_or(cols[0]);
                (cols[0].to_string(), dir.join(file))
            })
            .collect());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("clip" | "clipb")))
        .collect();
    files.sort();
    Ok(files
        .into_iter()
        .map(|p| (p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string(), p))
        .collect())
}

#[derive(Serialize)]
struct RetargetSnapshot<'a> {
    source: String,
    model: &'a RobotModel,
    retarget: &'a RetargetConfig,
}

#[derive(Serialize)]
struct EvalSnapshot<'a> {
    checkpoint: String,
    checkpoint_iteration: u64,
    seed: u64,
    run: &'a RunConfig,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDataset { out, spec, model } => {
            let spec: DatasetSpec = config::load(&spec)?;
            spec.validate()?;
            let model: RobotModel = load_or_default(model.as_deref())?;
            let dataset = generate_dataset(&spec, &model)?;
            write_dataset(&dataset, &out, spec.encoding())?;
            config::save(&spec, &out.join("gen_spec.toml"))?;
            config::save(&model, &out.join("model.toml"))?;
            for (t, n) in dataset.type_counts() {
                println!("{t}: {n}");
            }
            println!("wrote {} clips to {}", dataset.len(), out.display());
        }
        Command::GenSource {
            motion_type,
            out,
            skeleton_scale,
            knees,
            duration,
        } => {
            let skeleton = RobotModel::a1_like().scaled(skeleton_scale);
            let mut spec = GaitSpec::new(motion_type);
            spec.duration = duration;
            let src = synthesize_source(&spec, &skeleton, knees)?;
            ensure_parent(&out)?;
            write_source(&src, &out)?;
            println!("wrote {} frames to {}", src.frames.len(), out.display());
        }
        Command::Retarget {
            src,
            model,
            config: cfg_path,
            scale,
            knee_hints,
            out,
        } => {
            let model: RobotModel = load_or_default(model.as_deref())?;
            let mut cfg: RetargetConfig = load_or_default(cfg_path.as_deref())?;
            if let Some(s) = scale {
                cfg.scale = s;
            }
            if knee_hints {
                cfg.use_knee_hint = true;
            }
            cfg.validate()?;
            let source = read_source(&src)?;
            let (clip, report) = retarget_pipeline(&source, &model, &cfg)?;
            ensure_parent(&out)?;
            crate::motion::write_clip_text(&clip, &out)?;
            snapshot(
                &out,
                &RetargetSnapshot {
                    source: src.display().to_string(),
                    model: &model,
                    retarget: &cfg,
                },
            )?;
            println!("{}", RetargetReport::CSV_HEADER);
            println!("{}", report.csv_row());
        }
        Command::Validate { dir } => {
            let entries = dataset_entries(&dir)?;
            if entries.is_empty() {
                bail!("no clips in {}", dir.display());
            }
            let mut bad = 0;
            for (id, path) in entries {
                match read_clip(&path).and_then(|c| c.validate().map(|_| c)) {
                    Ok(c) => println!(
                        "OK {id} {} frames={} duration={:.3}s",
                        c.motion_type,
                        c.frames.len(),
                        c.duration()
                    ),
                    Err(e) => {
                        bad += 1;
                        println!("FAIL {id}: {e}");
                    }
                }
            }
            if bad > 0 {
                bail!("{bad} invalid clip(s)");
            }
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let dataset = crate::motion::load_dataset(&args.dataset)?;
            let outcome = train(&dataset, &cfg, Some(&args.out))?;
            let failed = outcome.final_eval().map(|e| e.failed);
            println!(
                "trained {} iterations; failed clips at last evaluation: {}",
                outcome.iterations,
                failed.map(|f| f.to_string()).unwrap_or_else(|| "n/a".into())
            );
        }
        Command::Eval {
            dataset,
            checkpoint,
            friction,
            seed,
            out,
        } => {
            let (ck, mut run) = load_checkpoint(&checkpoint)?;
            if let Some(mu) = friction {
                run.sim.friction = mu;
            }
            run.validate()?;
            let seed = seed.unwrap_or_else(|| eval_seed(run.train.seed, ck.iteration as usize));
            let dataset = crate::motion::load_dataset(&dataset)?;
            let metrics = evaluate_clips(&dataset, &ck.policy, &run, seed);
            write_file(&out, metrics_csv(&metrics))?;
            snapshot(
                &out,
                &EvalSnapshot {
                    checkpoint: checkpoint.display().to_string(),
                    checkpoint_iteration: ck.iteration,
                    seed,
                    run: &run,
                },
            )?;
            let failed = metrics.iter().filter(|m| !m.success).count();
            println!("{failed} of {} clips failed", metrics.len());
        }
        Command::Rollout {
            clip,
            checkpoint,
            dataset,
            seed,
            out,
        } => {
            let (ck, run) = load_checkpoint(&checkpoint)?;
            let motion: MotionClip = match &dataset {
                Some(dir) => crate::motion::load_dataset(dir)?
                    .get(&clip)
                    .cloned()
                    .with_context(|| format!("clip `{clip}` not in {}", dir.display()))?,
                None => {
                    let t: MotionType = clip
                        .parse()
                        .map_err(|e: String| anyhow::anyhow!("{e}; pass --dataset to roll out a stored clip"))?;
                    synthesize_clip(&GaitSpec::new(t), &run.model)?
                }
            };
            let seed = seed.unwrap_or(run.train.seed);
            let result = rollout(&motion, &ck.policy, &run, seed)?;
            write_file(&out, result.trajectory_csv())?;
            snapshot(
                &out,
                &EvalSnapshot {
                    checkpoint: checkpoint.display().to_string(),
                    checkpoint_iteration: ck.iteration,
                    seed,
                    run: &run,
                },
            )?;
            println!(
                "{} steps of {}, success: {}, mean reward {:.4}",
                result.steps,
                result.planned_steps,
                result.success,
                result.mean_reward()
            );
        }
        Command::Experiment { spec, out } => {
            let parsed: ExperimentSpec = config::load(&spec)?;
            let dir = spec.parent().map(Path::to_path_buf).unwrap_or_default();
            let report = run_experiment(&parsed, &dir, &out)?;
            print!("{}", report.summary_csv());
            if let Some(c) = &report.comparison {
                println!(
                    "{} failed on no more clips than {} in {} of {} seeds",
                    c.first, c.second, c.first_not_worse, c.seeds
                );
            }
        }
        Command::Report { input, out } => {
            let report = Report::load(&input.join("report.json"))?;
            let manifest = emit_plots(&report, &out)?;
            for line in manifest {
                println!("{line}");
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn train_requires_dataset() {
        let err = Cli::try_parse_from(["quadmimic", "train", "--out", "x"]).unwrap_err();
        assert_eq!(err.kind(), clap::error::ErrorKind::MissingRequiredArgument);
        assert!(Cli::try_parse_from(["quadmimic", "train", "--dataset", "d", "--out", "x", "--bogus"]).is_err());
    }

    #[test]
    fn train_flags_override_config() {
        let cli = Cli::try_parse_from([
            "quadmimic",
            "train",
            "--dataset",
            "d",
            "--out",
            "o",
            "--no-ams",
            "--obs-current-only",
            "--action-prior",
            "--iters",
            "7",
            "--seed",
            "3",
        ])
        .unwrap();
        let Command::Train(args) = cli.command else { panic!() };
        let cfg = args.resolve().unwrap();
        assert!(!cfg.train.adaptive_sampling);
        assert!(cfg.env.action_prior);
        assert_eq!(cfg.env.obs_dim(), 66);
        assert_eq!((cfg.train.iterations, cfg.train.seed), (7, 3));
    }

    #[test]
    fn snapshot_names() {
        assert_eq!(snapshot_path(Path::new("a/b.csv")), PathBuf::from("a/b.csv.config.toml"));
    }
}
