//! Variant-by-seed experiments and their reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset_gen::{generate_dataset, DatasetSpec};
use super::evaluation::{evaluate_clips, metrics_csv, rollout, ClipMetrics};
use super::plot::{Chart, Series};
use crate::config::{self, ConfigError};
use crate::learner::train::derive_seed;
use crate::learner::{train, Policy, RunConfig};
use crate::motion::{load_dataset, write_dataset};
use crate::motion::{Dataset, MotionError};

/// The single axis an experiment varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Axis {
    /// One variant trained with the base config.
    #[default]
    None,
    /// Reference window of past and future frames vs the current frame only.
    ObsWindow,
    /// Residuals about the nominal pose vs about the current reference pose.
    ActionPrior,
    /// Adaptive motion sampling vs uniform clip sampling.
    Sampling,
    /// Train at one friction coefficient, evaluate at several.
    Friction { train: f64, eval: Vec<f64> },
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::None => "none",
            Axis::ObsWindow => "obs-window",
            Axis::ActionPrior => "action-prior",
            Axis::Sampling => "sampling",
            Axis::Friction { .. } => "friction",
        }
    }

    /// Variant names with the config each one trains with.
    pub fn variants(&self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            Axis::None => vec![("baseline".into(), base.clone())],
            Axis::ObsWindow => vec![
                ("past-future".into(), base.clone()),
                (
                    "current-only".into(),
                    with(&|c| {
                        c.env.reference_offsets.clear();
                        c.env.include_current_frame = true;
                    }),
                ),
            ],
            Axis::ActionPrior => vec![
                ("none".into(), with(&|c| c.env.action_prior = false)),
                ("reference-residual".into(), with(&|c| c.env.action_prior = true)),
            ],
            Axis::Sampling => vec![
                ("ams".into(), with(&|c| c.train.adaptive_sampling = true)),
                ("uniform".into(), with(&|c| c.train.adaptive_sampling = false)),
            ],
            Axis::Friction { train, .. } => {
                vec![(format!("mu-{train}"), with(&|c| c.sim.friction = *train))]
            }
        }
    }

    /// Friction coefficients of the evaluation battery for a trained config.
    pub fn eval_frictions(&self, cfg: &RunConfig) -> Vec<f64> {
        let mut mus = vec![cfg.sim.friction];
        if let Axis::Friction { eval, .. } = self {
            mus.extend(eval.iter().copied().filter(|m| *m != cfg.sim.friction));
        }
        mus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Dataset directory, relative to the spec file.
    pub dataset: Option<PathBuf>,
    /// Procedural dataset used when `dataset` is absent.
    pub generate: Option<DatasetSpec>,
    pub seeds: Vec<u64>,
    /// Training budget per cell.
    pub iterations: usize,
    /// Clip rolled out for the height-tracking plot; defaults to the first clip.
    pub showcase_clip: Option<String>,
    pub axis: Axis,
    pub base: RunConfig,
    /// Runs cells concurrently, each in its own directory.
    pub parallel: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            dataset: None,
            generate: None,
            seeds: vec![0],
            iterations: 200,
            showcase_clip: None,
            axis: Axis::None,
            base: RunConfig::default(),
            parallel: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid report {path}: {message}")]
    Report { path: PathBuf, message: String },
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn mkdir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, message: &str| {
            Err(ConfigError::Invalid {
                field,
                message: message.to_string(),
            })
        };
        if self.seeds.is_empty() {
            return invalid("seeds", "at least one seed is required");
        }
        if self.iterations == 0 {
            return invalid("iterations", "must be >= 1");
        }
        if self.dataset.is_none() && self.generate.is_none() {
            return invalid("dataset", "set `dataset` or a `generate` table");
        }
        if let Some(g) = &self.generate {
            g.validate()?;
        }
        if let Axis::Friction { train, eval } = &self.axis {
            if !(*train > 0.0) || eval.iter().any(|m| !(*m > 0.0)) {
                return invalid("axis", "friction coefficients must be > 0");
            }
        }
        for (_, cfg) in self.axis.variants(&self.base) {
            cfg.validate()?;
        }
        Ok(())
    }

    /// Loads (or generates) the dataset; `spec_dir` anchors relative paths.
    pub fn load_dataset(&self, spec_dir: &Path) -> Result<Dataset, ExperimentError> {
        if let Some(dir) = &self.dataset {
            return Ok(load_dataset(&spec_dir.join(dir))?);
        }
        let g = self.generate.as_ref().expect("validated");
        Ok(generate_dataset(g, &self.base.model)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrictionEval {
    pub friction: f64,
    pub failed: usize,
    pub mean_return: f64,
    pub mean_tracking_error: f64,
    pub clips: Vec<ClipMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Showcase {
    pub clip: String,
    pub t: Vec<f64>,
    pub height: Vec<f64>,
    pub ref_height: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub error: Option<String>,
    pub iterations_run: usize,
    /// (iteration, failed clips) at every evaluation.
    pub failed_series: Vec<(usize, usize)>,
    /// (iteration, mean rollout reward per step).
    pub reward_series: Vec<(usize, f64)>,
    pub final_failed: Option<usize>,
    pub evaluations: Vec<FrictionEval>,
    pub showcase: Option<Showcase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub cells: usize,
    pub errors: usize,
    pub mean_final_failed: Option<f64>,
    pub mean_return: Option<f64>,
    pub mean_tracking_error: Option<f64>,
}

/// Seed-paired comparison of the first two variants' final failed counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub first: String,
    pub second: String,
    pub seeds: usize,
    /// Seeds on which the first variant failed on no more clips than the second.
    pub first_not_worse: usize,
    pub first_better: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub axis: String,
    pub clips: usize,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellReport>,
    pub summary: Vec<VariantSummary>,
    pub comparison: Option<PairedComparison>,
}

impl Report {
    pub fn variants(&self) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        for c in &self.cells {
            if !v.contains(&c.variant) {
                v.push(c.variant.clone());
            }
        }
        v
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Report {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("variant,cells,errors,mean_final_failed,mean_return,mean_tracking_error\n");
        for s in &self.summary {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.variant,
                s.cells,
                s.errors,
                opt(s.mean_final_failed),
                opt(s.mean_return),
                opt(s.mean_tracking_error)
            ));
        }
        out
    }

    fn summarize(&mut self) {
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        self.summary = self
            .variants()
            .into_iter()
            .map(|variant| {
                let cells: Vec<&CellReport> = self.cells.iter().filter(|c| c.variant == variant).collect();
                let ok: Vec<&&CellReport> = cells.iter().filter(|c| c.error.is_none()).collect();
                let base = |c: &&&CellReport| c.evaluations.first().cloned();
                VariantSummary {
                    variant,
                    cells: cells.len(),
                    errors: cells.len() - ok.len(),
                    mean_final_failed: mean(&ok.iter().filter_map(|c| c.final_failed.map(|f| f as f64)).collect::<Vec<_>>()),
                    mean_return: mean(&ok.iter().filter_map(base).map(|e| e.mean_return).collect::<Vec<_>>()),
                    mean_tracking_error: mean(
                        &ok.iter().filter_map(base).map(|e| e.mean_tracking_error).collect::<Vec<_>>(),
                    ),
                }
            })
            .collect();
        let variants = self.variants();
        self.comparison = (variants.len() == 2).then(|| {
            let by_seed = |v: &str| -> BTreeMap<u64, usize> {
                self.cells
                    .iter()
                    .filter(|c| c.variant == v)
                    .filter_map(|c| c.final_failed.map(|f| (c.seed, f)))
                    .collect()
            };
            let (a, b) = (by_seed(&variants[0]), by_seed(&variants[1]));
            let paired: Vec<(usize, usize)> = a.iter().filter_map(|(s, fa)| b.get(s).map(|fb| (*fa, *fb))).collect();
            PairedComparison {
                first: variants[0].clone(),
                second: variants[1].clone(),
                seeds: paired.len(),
                first_not_worse: paired.iter().filter(|(fa, fb)| fa <= fb).count(),
                first_better: paired.iter().filter(|(fa, fb)| fa < fb).count(),
            }
        });
    }
}

fn friction_eval(dataset: &Dataset, policy: &Policy, cfg: &RunConfig, mu: f64, seed: u64) -> FrictionEval {
    let mut c = cfg.clone();
    c.sim.friction = mu;
    let clips = evaluate_clips(dataset, policy, &c, seed);
    let n = clips.len().max(1) as f64;
    let tracked: Vec<f64> = clips.iter().filter_map(|m| m.tracking_error).collect();
    FrictionEval {
        friction: mu,
        failed: clips.iter().filter(|m| !m.success).count(),
        mean_return: clips.iter().map(|m| m.total_return).sum::<f64>() / n,
        mean_tracking_error: tracked.iter().sum::<f64>() / tracked.len().max(1) as f64,
        clips,
    }
}

fn run_cell(
    spec: &ExperimentSpec,
    dataset: &Dataset,
    variant: &str,
    cfg: &RunConfig,
    seed: u64,
    dir: &Path,
) -> Result<CellReport, ExperimentError> {
    let mut cfg = cfg.clone();
    cfg.train.seed = seed;
    cfg.train.iterations = spec.iterations;
    let mut cell = CellReport {
        variant: variant.to_string(),
        seed,
        config_hash: config::hash(&cfg),
        error: None,
        iterations_run: 0,
        failed_series: Vec::new(),
        reward_series: Vec::new(),
        final_failed: None,
        evaluations: Vec::new(),
        showcase: None,
    };
    mkdir(dir)?;
    let outcome = match train(dataset, &cfg, Some(dir)) {
        Ok(o) => o,
        Err(e) => {
            log::error!("cell {variant}/seed {seed} failed: {e}");
            cell.error = Some(e.to_string());
            return Ok(cell);
        }
    };
    cell.iterations_run = outcome.iterations;
    cell.failed_series = outcome.evals.iter().map(|e| (e.iteration, e.failed)).collect();
    cell.reward_series = outcome.log.iter().map(|l| (l.iteration, l.mean_step_reward)).collect();
    cell.final_failed = outcome.final_eval().map(|e| e.failed);

    let eval_seed = derive_seed(seed, 0xE7A1, outcome.iterations as u64);
    for mu in spec.axis.eval_frictions(&cfg) {
        let eval = friction_eval(dataset, &outcome.policy, &cfg, mu, eval_seed);
        write(&dir.join(format!("eval_mu_{mu}.csv")), metrics_csv(&eval.clips))?;
        cell.evaluations.push(eval);
    }
    let showcase = spec.showcase_clip.clone().or_else(|| dataset.ids().into_iter().next());
    if let Some(id) = showcase {
        if let Some(clip) = dataset.get(&id) {
            match rollout(clip, &outcome.policy, &cfg, eval_seed) {
                Ok(r) => {
                    write(&dir.join("showcase.csv"), r.trajectory_csv())?;
                    cell.showcase = Some(Showcase {
                        clip: id,
                        t: r.trajectory.iter().map(|p| p.t).collect(),
                        height: r.trajectory.iter().map(|p| p.position.z).collect(),
                        ref_height: r.trajectory.iter().map(|p| p.ref_position.z).collect(),
                    });
                }
                Err(e) => log::warn!("showcase rollout on `{id}` failed: {e}"),
            }
        }
    }
    Ok(cell)
}

/// Trains every variant on every seed, runs the evaluation battery and writes
/// `report.json`, `summary.csv` and plots under `out`.
pub fn run_experiment(spec: &ExperimentSpec, spec_dir: &Path, out: &Path) -> Result<Report, ExperimentError> {
    spec.validate()?;
    mkdir(out)?;
    config::save(spec, &out.join("spec.toml"))?;
    let dataset = spec.load_dataset(spec_dir)?;
    if spec.dataset.is_none() {
        let enc = spec.generate.as_ref().map(DatasetSpec::encoding).unwrap_or(crate::motion::ClipEncoding::Text);
        write_dataset(&dataset, &out.join("dataset"), enc)?;
    }
    let mut report = Report {
        name: spec.name.clone(),
        axis: spec.axis.name().into(),
        clips: dataset.len(),
        iterations: spec.iterations,
        seeds: spec.seeds.clone(),
        cells: Vec::new(),
        summary: Vec::new(),
        comparison: None,
    };
    let jobs: Vec<(String, RunConfig, u64)> = spec
        .axis
        .variants(&spec.base)
        .into_iter()
        .flat_map(|(variant, cfg)| spec.seeds.iter().map(move |&seed| (variant.clone(), cfg.clone(), seed)))
        .collect();
    let run = |(variant, cfg, seed): &(String, RunConfig, u64)| {
        log::info!("experiment {}: variant {variant}, seed {seed}", spec.name);
        let dir = out.join("cells").join(format!("{variant}_seed{seed}"));
        run_cell(spec, &dataset, variant, cfg, *seed, &dir)
    };
    report.cells = if spec.parallel {
        jobs.par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_, _>>()?
    };
    report.summarize();
    write(&out.join("report.json"), report.to_json())?;
    emit_plots(&report, &out.join("plots"))?;
    Ok(report)
}

/// Writes the charts of a report plus `summary.csv` and `manifest.txt`.
/// Returns the manifest lines.
pub fn emit_plots(report: &Report, out: &Path) -> Result<Vec<String>, ExperimentError> {
    mkdir(out)?;
    let variants = report.variants();
    let color = |v: &str| variants.iter().position(|x| x == v).unwrap_or(0);
    let label = |c: &CellReport| {
        if report.seeds.len() > 1 {
            format!("{} s{}", c.variant, c.seed)
        } else {
            c.variant.clone()
        }
    };
    let mut charts = Vec::new();
    charts.push((
        "failed_count",
        Chart {
            title: format!("{}: failed clips (of {})", report.name, report.clips),
            x_label: "iteration".into(),
            y_label: "failed clips".into(),
            series: report
                .cells
                .iter()
                .filter(|c| !c.failed_series.is_empty())
                .map(|c| Series {
                    name: label(c),
                    points: c.failed_series.iter().map(|&(i, f)| (i as f64, f as f64)).collect(),
                    dashed: false,
                    color: color(&c.variant),
                })
                .collect(),
        },
    ));
    charts.push((
        "reward",
        Chart {
            title: format!("{}: rollout reward per step", report.name),
            x_label: "iteration".into(),
            y_label: "mean reward per step".into(),
            series: report
                .cells
                .iter()
                .filter(|c| !c.reward_series.is_empty())
                .map(|c| Series {
                    name: label(c),
                    points: c.reward_series.iter().map(|&(i, r)| (i as f64, r)).collect(),
                    dashed: false,
                    color: color(&c.variant),
                })
                .collect(),
        },
    ));
    let mut height = Vec::new();
    for v in &variants {
        if let Some((c, s)) = report
            .cells
            .iter()
            .filter(|c| &c.variant == v)
            .find_map(|c| c.showcase.as_ref().map(|s| (c, s)))
        {
            if height.is_empty() {
                height.push(Series {
                    name: format!("reference ({})", s.clip),
                    points: s.t.iter().copied().zip(s.ref_height.iter().copied()).collect(),
                    dashed: true,
                    color: 7,
                });
            }
            height.push(Series {
                name: label(c),
                points: s.t.iter().copied().zip(s.height.iter().copied()).collect(),
                dashed: false,
                color: color(v),
            });
        }
    }
    charts.push((
        "height",
        Chart {
            title: format!("{}: CoM height tracking", report.name),
            x_label: "time (s)".into(),
            y_label: "CoM height (m)".into(),
            series: height,
        },
    ));
    let friction_points = |v: &str| -> Vec<(f64, f64)> {
        let mut by_mu: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
        for c in report.cells.iter().filter(|c| c.variant == v) {
            for e in &c.evaluations {
                let entry = by_mu.entry(e.friction.to_bits()).or_insert((e.friction, 0.0, 0));
                entry.1 += e.mean_tracking_error;
                entry.2 += 1;
            }
        }
        let mut pts: Vec<(f64, f64)> = by_mu.values().map(|(mu, sum, n)| (*mu, sum / *n as f64)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    };
    let multi_mu = report.cells.iter().any(|c| c.evaluations.len() > 1);
    charts.push((
        "tracking_vs_friction",
        Chart {
            title: format!("{}: tracking error by friction", report.name),
            x_label: "friction coefficient".into(),
            y_label: "mean CoM error (m)".into(),
            series: if multi_mu {
                variants
                    .iter()
                    .map(|v| Series {
                        name: v.clone(),
                        points: friction_points(v),
                        dashed: false,
                        color: color(v),
                    })
                    .collect()
            } else {
                Vec::new()
            },
        },
    ));

    let mut manifest = Vec::new();
    for (name, chart) in charts {
        if chart.is_empty() {
            manifest.push(format!("omitted {name}: no data"));
            continue;
        }
        write(&out.join(format!("{name}.svg")), chart.to_svg())?;
        write(&out.join(format!("{name}.csv")), chart.to_csv())?;
        manifest.push(format!("{name}.svg"));
        manifest.push(format!("{name}.csv"));
    }
    write(&out.join("summary.csv"), report.summary_csv())?;
    manifest.push("summary.csv".into());
    let mut text = manifest.join("\n");
    text.push('\n');
    write(&out.join("manifest.txt"), text)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset_gen::ClipGroup;
    use crate::learner::{PpoConfig, TrainConfig};
    use crate::motion::MotionType;

    fn spec(axis: Axis) -> ExperimentSpec {
        ExperimentSpec {
            name: "toy".into(),
            generate: Some(DatasetSpec {
                duration: 0.3,
                groups: vec![
                    ClipGroup {
                        motion_type: MotionType::Stand,
                        count: 2,
                        ..ClipGroup::default()
                    },
                    ClipGroup {
                        motion_type: MotionType::Jump,
                        count: 1,
                        ..ClipGroup::default()
                    },
                ],
                ..DatasetSpec::default()
            }),
            seeds: vec![0, 1],
            iterations: 2,
            axis,
            base: RunConfig {
                ppo: PpoConfig {
                    hidden: vec![8],
                    num_envs: 2,
                    minibatch_size: 16,
                    epochs: 1,
                    ..PpoConfig::default()
                },
                train: TrainConfig {
                    eval_period: 1,
                    workers: 1,
                    ..TrainConfig::default()
                },
                ..RunConfig::default()
            },
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn variants_per_axis() {
        let base = RunConfig::default();
        let names = |a: Axis| a.variants(&base).into_iter().map(|v| v.0).collect::<Vec<_>>();
        assert_eq!(names(Axis::Sampling), vec!["ams", "uniform"]);
        assert_eq!(names(Axis::ObsWindow), vec!["past-future", "current-only"]);
        assert_eq!(names(Axis::ActionPrior), vec!["none", "reference-residual"]);
        assert_eq!(names(Axis::None), vec!["baseline"]);
        let current = &Axis::ObsWindow.variants(&base)[1].1;
        assert_eq!(current.env.obs_dim(), 66);
        let f = Axis::Friction {
            train: 0.8,
            eval: vec![0.3, 1.5],
        };
        let v = f.variants(&base);
        assert_eq!(v[0].0, "mu-0.8");
        assert_eq!(f.eval_frictions(&v[0].1), vec![0.8, 0.3, 1.5]);
    }

    #[test]
    fn spec_parses_from_toml() {
        let text = r#"
            name = "sampling"
            seeds = [0, 1, 2]
            iterations = 10
            [generate]
            duration = 3.0
            [[generate.groups]]
            motion_type = "pace"
            count = 20
            [[generate.groups]]
            motion_type = "jump"
            count = 2
            [axis]
            kind = "friction"
            train = 0.8
            eval = [0.3, 1.5]
            [base.ppo]
            hidden = [32, 32]
        "#;
        let s: ExperimentSpec = config::parse(text).unwrap();
        s.validate().unwrap();
        assert_eq!(s.generate.as_ref().unwrap().groups[0].count, 20);
        assert_eq!(s.base.ppo.hidden, vec![32, 32]);
        assert!(matches!(s.axis, Axis::Friction { .. }));
        let round: ExperimentSpec = config::parse(&config::to_text(&s)).unwrap();
        assert_eq!(round, s);
    }

    #[test]
    fn parallel_cells_match_sequential() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let seq = run_experiment(&spec(Axis::ActionPrior), a.path(), a.path()).unwrap();
        let par_spec = ExperimentSpec {
            parallel: true,
            ..spec(Axis::ActionPrior)
        };
        let par = run_experiment(&par_spec, b.path(), b.path()).unwrap();
        assert_eq!(seq.cells, par.cells);
    }

    #[test]
    fn sampling_experiment_reports_both_variants() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&spec(Axis::Sampling), dir.path(), dir.path()).unwrap();
        assert_eq!(report.cells.len(), 4);
        assert_eq!(report.variants(), vec!["ams", "uniform"]);
        for c in &report.cells {
            assert!(c.error.is_none());
            assert_eq!(c.failed_series.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        }
        let cmp = report.comparison.as_ref().unwrap();
        assert_eq!(cmp.seeds, 2);
        let back = Report::load(&dir.path().join("report.json")).unwrap();
        assert_eq!(back.to_json(), report.to_json());
        let manifest = fs::read_to_string(dir.path().join("plots/manifest.txt")).unwrap();
        assert!(manifest.contains("failed_count.svg"));
        assert!(manifest.contains("omitted tracking_vs_friction"));
        let svg = fs::read_to_string(dir.path().join("plots/failed_count.svg")).unwrap();
        assert!(svg.contains("ams s0") && svg.contains("uniform s1"));
        assert!(dir.path().join("dataset/manifest.tsv").exists());
    }

    #[test]
    fn friction_experiment_evaluates_each_coefficient() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(Axis::Friction {
            train: 0.8,
            eval: vec![0.3, 1.5],
        });
        s.seeds = vec![0];
        let report = run_experiment(&s, dir.path(), dir.path()).unwrap();
        let mus: Vec<f64> = report.cells[0].evaluations.iter().map(|e| e.friction).collect();
        assert_eq!(mus, vec![0.8, 0.3, 1.5]);
        for e in &report.cells[0].evaluations {
            assert_eq!(e.clips.len(), 3);
            assert!(e.clips.iter().all(|m| m.steps > 0 || m.error.is_some()));
        }
        assert!(dir.path().join("plots/tracking_vs_friction.svg").exists());
        assert!(report.comparison.is_none());
    }

    #[test]
    fn empty_report_omits_charts() {
        let dir = tempfile::tempdir().unwrap();
        let report = Report {
            name: "empty".into(),
            axis: "none".into(),
            clips: 0,
            iterations: 0,
            seeds: vec![0],
            cells: Vec::new(),
            summary: Vec::new(),
            comparison: None,
        };
        let manifest = emit_plots(&report, dir.path()).unwrap();
        assert!(manifest.iter().filter(|l| l.starts_with("omitted")).count() == 4);
        assert!(!dir.path().join("height.svg").exists());
    }
}
