//! Config-driven experiments. A run trains the baseline, semi-supervised and ideal models
//! for every seed, writes per-seed metrics, bounds and traces, and aggregates across seeds.
//!
//! Every configured seed (generator, training, augmentation) is mixed with the run seed, so
//! each seed's outputs depend only on the config and that seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundsReport, DEFAULT_DELTA};
use crate::data::{generate_synthetic, generate_test_set, load_csv, save_csv, Dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::metrics::{group_mean, group_std, median, subgroup_report, MetricsReport, SubPopReport};
use crate::mitigation::{
    balance_weights, balance_weights_all_labeled, grow_labeled, Allocation, BalanceMode, LabelSource,
};
use crate::model::{accuracy, Classifier, LossKind, TrainConfig};
use crate::pseudolabel::{build_pseudo_dataset, AugmentConfig, PseudoDataset, PseudoMode, Teacher};
use crate::rng::{self, derive_seed};
use crate::ssl::{
    train_baseline, train_ideal, train_iterative, train_semi, IterativeConfig, Objective, Trace,
};

const GROW_TAG: u64 = 0x6752;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        generator: SynthConfig,
        test_per_group: usize,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        num_classes: usize,
        dim: usize,
        /// Held-out labeled examples for `grow`.
        #[serde(default)]
        pool: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    TwoIteration,
    IterativeL1,
    IterativeL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    /// The baseline model labels D_U.
    #[default]
    Model,
    /// D_U gets its hidden truth (two-iteration regime only).
    TruthOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SslSettings {
    #[serde(default)]
    pub regime: Regime,
    /// Pseudo-label flavour for the two-iteration regime.
    #[serde(default = "default_pseudo_mode")]
    pub pseudo_mode: PseudoMode,
    #[serde(default)]
    pub augment: AugmentConfig,
    /// Weight of the unsupervised term in the L2 objective.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub consistency_loss: LossKind,
    #[serde(default)]
    pub teacher: TeacherKind,
}

fn default_pseudo_mode() -> PseudoMode {
    PseudoMode::Explicit
}

fn default_lambda() -> f64 {
    1.0
}

impl Default for SslSettings {
    fn default() -> Self {
        Self {
            regime: Regime::TwoIteration,
            pseudo_mode: default_pseudo_mode(),
            augment: AugmentConfig::default(),
            lambda: default_lambda(),
            consistency_loss: LossKind::CrossEntropy,
            teacher: TeacherKind::Model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitigationSettings {
    #[serde(default)]
    pub balance: BalanceMode,
    /// Extra labeled examples per group, added before training.
    #[serde(default)]
    pub grow: Option<Allocation>,
    #[serde(default)]
    pub grow_source: GrowSource,
}

/// Where `grow` gets its labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowSource {
    /// New examples: generator draws, or the `pool` file for CSV data.
    #[default]
    Fresh,
    /// Label existing unlabeled examples with their hidden truth.
    Annotate,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub train: TrainConfig,
    #[serde(default)]
    pub ssl: SslSettings,
    #[serde(default)]
    pub mitigation: MitigationSettings,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(Error::Config(format!("seed {s} is listed twice")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta = {} must lie in (0, 1)", self.delta)));
        }
        self.train.validate()?;
        self.ssl.augment.validate()?;
        IterativeConfig {
            objective: Objective::ImplicitL2,
            lambda: self.ssl.lambda,
            consistency_loss: self.ssl.consistency_loss,
        }
        .validate()?;
        if self.ssl.teacher == TeacherKind::TruthOracle && self.ssl.regime != Regime::TwoIteration {
            return Err(Error::Config(
                "the truth_oracle teacher needs the two_iteration regime".into(),
            ));
        }
        match &self.data {
            DataSource::Synthetic {
                generator,
                test_per_group,
            } => {
                generator.validate()?;
                if *test_per_group == 0 {
                    return Err(Error::Config("test_per_group must be positive".into()));
                }
            }
            DataSource::Csv {
                train, test, pool, ..
            } => {
                for p in [Some(train), Some(test), pool.as_ref()].into_iter().flatten() {
                    if !p.is_file() {
                        return Err(Error::Config(format!("data file {} not found", p.display())));
                    }
                }
                if self.mitigation.grow.is_some()
                    && self.mitigation.grow_source == GrowSource::Fresh
                    && pool.is_none()
                {
                    return Err(Error::Config(
                        "grow with CSV data needs a `pool` file of held-out labeled examples".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn with_seeds(&self, seeds: Vec<u64>) -> Self {
        Self {
            seeds,
            ..self.clone()
        }
    }
}

/// Training pool (after any growth) and test set for one seed.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub full: Dataset,
    pub test: Dataset,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Data for `seed`: synthetic draws use the generator seed mixed with `seed`.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let (full, test) = match &cfg.data {
        DataSource::Synthetic {
            generator,
            test_per_group,
        } => {
            let gen = SynthConfig {
                seed: derive_seed(generator.seed, seed),
                ..generator.clone()
            };
            let mut full = generate_synthetic(&gen)?;
            if let Some(alloc) = &cfg.mitigation.grow {
                let mut r = rng::stream(derive_seed(gen.seed, GROW_TAG), 0);
                let source = match cfg.mitigation.grow_source {
                    GrowSource::Fresh => LabelSource::Generator(&gen),
                    GrowSource::Annotate => LabelSource::Annotate,
                };
                full = grow_labeled(&full, source, alloc, &mut r)?;
            }
            (full, generate_test_set(&gen, *test_per_group)?)
        }
        DataSource::Csv {
            train,
            test,
            num_classes,
            dim,
            pool,
        } => {
            let mut full = load_csv(train, *num_classes, *dim)?;
            if let Some(alloc) = &cfg.mitigation.grow {
                let mut r = rng::stream(derive_seed(seed, GROW_TAG), 0);
                full = match (cfg.mitigation.grow_source, pool) {
                    (GrowSource::Annotate, _) => {
                        grow_labeled(&full, LabelSource::Annotate, alloc, &mut r)?
                    }
                    (GrowSource::Fresh, Some(pool)) => {
                        let pool = load_csv(pool, *num_classes, *dim)?;
                        grow_labeled(&full, LabelSource::Pool(&pool), alloc, &mut r)?
                    }
                    (GrowSource::Fresh, None) => {
                        return Err(Error::Config("grow with CSV data needs a pool file".into()))
                    }
                };
            }
            (full, load_csv(test, *num_classes, *dim)?)
        }
    };
    Ok(SeedData { full, test })
}

/// The three trained models plus the pseudo-labeled set built from the baseline.
#[derive(Debug, Clone)]
pub struct Trained {
    pub baseline: Classifier,
    pub semi: Classifier,
    pub ideal: Classifier,
    pub d_tilde: PseudoDataset,
}

fn split_weights(full: &Dataset, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut w_l = Vec::new();
    let mut w_u = Vec::new();
    for (ex, &wi) in full.examples().iter().zip(w) {
        if ex.is_labeled() {
            w_l.push(wi);
        } else {
            w_u.push(wi);
        }
    }
    (w_l, w_u)
}

/// Trains baseline, semi and ideal models for `seed`, appending to `trace` if given.
pub fn train_models(
    cfg: &ExperimentConfig,
    seed: u64,
    data: &SeedData,
    mut trace: Option<&mut Trace<'_>>,
) -> Result<Trained> {
    let tc = cfg.train.with_seed(derive_seed(cfg.train.seed, seed));
    let aug = AugmentConfig {
        seed: derive_seed(cfg.ssl.augment.seed, seed),
        ..cfg.ssl.augment
    };
    let weights = balance_weights(&data.full, cfg.mitigation.balance)?;
    let (labeled, unlabeled) = data.full.split();
    let (w_l, w_u) = split_weights(&data.full, &weights);
    let mut w_tilde = w_l.clone();
    w_tilde.extend_from_slice(&w_u);

    let baseline = train_baseline(&labeled, Some(&w_l), &tc, trace.as_deref_mut())?.model;
    let mode = match cfg.ssl.regime {
        Regime::TwoIteration => cfg.ssl.pseudo_mode,
        Regime::IterativeL1 => PseudoMode::Explicit,
        Regime::IterativeL2 => PseudoMode::Implicit,
    };
    let teacher = match cfg.ssl.teacher {
        TeacherKind::Model => Teacher::Snapshot(&baseline),
        TeacherKind::TruthOracle => Teacher::TruthOracle,
    };
    let d_tilde = build_pseudo_dataset(teacher, &labeled, &unlabeled, &aug, mode)?;
    let semi = match cfg.ssl.regime {
        Regime::TwoIteration => {
            train_semi(&d_tilde, Some(&w_tilde), &tc, trace.as_deref_mut())?.model
        }
        Regime::IterativeL1 | Regime::IterativeL2 => {
            let it = IterativeConfig {
                objective: if cfg.ssl.regime == Regime::IterativeL1 {
                    Objective::ExplicitL1
                } else {
                    Objective::ImplicitL2
                },
                lambda: cfg.ssl.lambda,
                consistency_loss: cfg.ssl.consistency_loss,
            };
            let tc_semi = tc.with_seed(derive_seed(tc.seed, crate::ssl::SEMI_SEED_TAG));
            train_iterative(
                &labeled,
                &unlabeled,
                Some(&w_l),
                Some(&w_u),
                &tc_semi,
                &aug,
                &it,
                trace.as_deref_mut(),
            )?
            .model
        }
    };
    let ideal_weights = balance_weights_all_labeled(&data.full, cfg.mitigation.balance)?;
    let ideal = train_ideal(&data.full, Some(&ideal_weights), &tc, trace)?.model;
    Ok(Trained {
        baseline,
        semi,
        ideal,
        d_tilde,
    })
}

/// Per-group report plus an `overall` entry covering the whole test set.
pub fn evaluate(
    baseline: &Classifier,
    semi: &Classifier,
    ideal: &Classifier,
    test: &Dataset,
    groups: &[String],
) -> Result<MetricsReport> {
    let mut report = MetricsReport::from_groups(subgroup_report(
        baseline,
        semi,
        ideal,
        test.examples(),
        groups,
    )?);
    let (ab, asemi, ai) = (
        accuracy(baseline, test.examples(), None)?,
        accuracy(semi, test.examples(), None)?,
        accuracy(ideal, test.examples(), None)?,
    );
    report.overall = Some(SubPopReport {
        group: "all".into(),
        a_baseline: Some(ab),
        a_semi: Some(asemi),
        a_ideal: Some(ai),
        br: crate::metrics::benefit_ratio(ab, asemi, ai)?,
        n_test: test.len(),
    });
    Ok(report)
}

pub fn bounds_report(
    trained: &Trained,
    test: &Dataset,
    delta: f64,
) -> Result<BoundsReport> {
    let holdout = 1.0 - accuracy(&trained.baseline, test.examples(), None)?;
    BoundsReport::compute(&trained.d_tilde, &trained.semi, delta, Some(holdout))
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub bounds: BoundsReport,
    pub trained: Trained,
}

/// One seed end to end, in memory. With `trace` the per-epoch record is filled in.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    trace: Option<&mut Trace<'_>>,
) -> Result<SeedOutcome> {
    let data = prepare_data(cfg, seed)?;
    run_seed_on(cfg, seed, &data, trace)
}

fn run_seed_on(
    cfg: &ExperimentConfig,
    seed: u64,
    data: &SeedData,
    trace: Option<&mut Trace<'_>>,
) -> Result<SeedOutcome> {
    let trained = train_models(cfg, seed, data, trace)?;
    let metrics = evaluate(
        &trained.baseline,
        &trained.semi,
        &trained.ideal,
        &data.test,
        data.full.groups(),
    )?;
    let bounds = bounds_report(&trained, &data.test, cfg.delta)?;
    Ok(SeedOutcome {
        seed,
        metrics,
        bounds,
        trained,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// File names inside a seed directory.
pub mod files {
    pub const TRAIN: &str = "train.csv";
    pub const TEST: &str = "test.csv";
    pub const PSEUDO: &str = "pseudo.csv";
    pub const BASELINE: &str = "baseline.json";
    pub const SEMI: &str = "semi.json";
    pub const IDEAL: &str = "ideal.json";
    pub const TRACE: &str = "trace.csv";
    pub const METRICS: &str = "metrics.json";
    pub const BOUNDS: &str = "bounds.json";
    pub const ERROR: &str = "error.json";
    pub const AGGREGATE: &str = "aggregate.json";
    pub const TABLE: &str = "table.csv";
}

pub fn write_data(dir: &Path, data: &SeedData) -> Result<()> {
    create_dir(dir)?;
    save_csv(&data.full, dir.join(files::TRAIN))?;
    save_csv(&data.test, dir.join(files::TEST))
}

pub fn read_data(cfg: &ExperimentConfig, dir: &Path) -> Result<SeedData> {
    let (k, d) = shape(cfg);
    Ok(SeedData {
        full: load_csv(dir.join(files::TRAIN), k, d)?,
        test: load_csv(dir.join(files::TEST), k, d)?,
    })
}

fn shape(cfg: &ExperimentConfig) -> (usize, usize) {
    match &cfg.data {
        DataSource::Synthetic { generator, .. } => (generator.num_classes, generator.dim),
        DataSource::Csv {
            num_classes, dim, ..
        } => (*num_classes, *dim),
    }
}

pub fn write_models(dir: &Path, trained: &Trained, trace: &Trace<'_>) -> Result<()> {
    create_dir(dir)?;
    trained.baseline.save(dir.join(files::BASELINE))?;
    trained.semi.save(dir.join(files::SEMI))?;
    trained.ideal.save(dir.join(files::IDEAL))?;
    trained.d_tilde.save_csv(dir.join(files::PSEUDO))?;
    trace.save_csv(dir.join(files::TRACE))
}

pub fn read_models(cfg: &ExperimentConfig, dir: &Path) -> Result<Trained> {
    let (k, d) = shape(cfg);
    Ok(Trained {
        baseline: Classifier::load(dir.join(files::BASELINE))?,
        semi: Classifier::load(dir.join(files::SEMI))?,
        ideal: Classifier::load(dir.join(files::IDEAL))?,
        d_tilde: PseudoDataset::load_csv(dir.join(files::PSEUDO), k, d)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub kind: String,
    pub error: String,
}

/// Short category used for failure records and exit statuses.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Diverged { .. } => "diverged",
        Error::Io { .. } => "io",
        _ => "data",
    }
}

/// Runs one seed and writes every per-seed file under `out`.
pub fn run_seed_to_dir(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<SeedOutcome> {
    let dir = seed_dir(out, seed);
    let data = prepare_data(cfg, seed)?;
    write_data(&dir, &data)?;
    let mut trace = Trace::new(Some(&data.test));
    let outcome = run_seed_on(cfg, seed, &data, Some(&mut trace))?;
    write_models(&dir, &outcome.trained, &trace)?;
    write_json(&dir.join(files::METRICS), &outcome.metrics)?;
    write_json(&dir.join(files::BOUNDS), &outcome.bounds)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAggregate {
    pub group: String,
    pub br_mean: Option<f64>,
    pub br_std: Option<f64>,
    pub n_defined: usize,
    pub n_negative: usize,
    pub a_baseline_mean: Option<f64>,
    pub a_semi_mean: Option<f64>,
    pub a_ideal_mean: Option<f64>,
}

/// Cross-seed summary. `br_std_*` and `br_gap_*` summarize the per-seed spread across
/// groups; `table_sd` is the spread across groups of the per-group mean BRs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub failed: Vec<SeedFailure>,
    pub groups: Vec<GroupAggregate>,
    pub br_std_mean: Option<f64>,
    pub br_std_median: Option<f64>,
    pub br_gap_mean: Option<f64>,
    pub br_gap_median: Option<f64>,
    pub n_negative_br_mean: Option<f64>,
    pub table_mean: Option<f64>,
    pub table_sd: Option<f64>,
}

pub fn aggregate(reports: &[(u64, MetricsReport)], failed: Vec<SeedFailure>) -> Aggregate {
    let mut names: Vec<String> = Vec::new();
    for (_, r) in reports {
        for g in &r.groups {
            if !names.contains(&g.group) {
                names.push(g.group.clone());
            }
        }
    }
    let collect = |name: &str, f: fn(&SubPopReport) -> Option<f64>| -> Vec<f64> {
        reports
            .iter()
            .filter_map(|(_, r)| r.groups.iter().find(|g| g.group == name).and_then(f))
            .collect()
    };
    let groups: Vec<GroupAggregate> = names
        .iter()
        .map(|name| {
            let brs = collect(name, |g| g.br);
            GroupAggregate {
                group: name.clone(),
                br_mean: group_mean(&brs).ok(),
                br_std: group_std(&brs).ok(),
                n_defined: brs.len(),
                n_negative: brs.iter().filter(|&&b| b < 0.0).count(),
                a_baseline_mean: group_mean(&collect(name, |g| g.a_baseline)).ok(),
                a_semi_mean: group_mean(&collect(name, |g| g.a_semi)).ok(),
                a_ideal_mean: group_mean(&collect(name, |g| g.a_ideal)).ok(),
            }
        })
        .collect();
    let per_seed = |f: fn(&MetricsReport) -> Option<f64>| -> Vec<f64> {
        reports.iter().filter_map(|(_, r)| f(r)).collect()
    };
    let stds = per_seed(|r| r.br_std);
    let gaps = per_seed(|r| r.br_gap);
    let negs: Vec<f64> = reports.iter().map(|(_, r)| r.n_negative_br as f64).collect();
    let means: Vec<f64> = groups.iter().filter_map(|g| g.br_mean).collect();
    Aggregate {
        seeds: reports.iter().map(|(s, _)| *s).collect(),
        failed,
        br_std_mean: group_mean(&stds).ok(),
        br_std_median: median(&stds).ok(),
        br_gap_mean: group_mean(&gaps).ok(),
        br_gap_median: median(&gaps).ok(),
        n_negative_br_mean: group_mean(&negs).ok(),
        table_mean: group_mean(&means).ok(),
        table_sd: group_std(&means).ok(),
        groups,
    }
}

/// Table-1 layout: one row per setting, per-group mean BR in percent, then the mean and
/// the across-group SD last.
pub fn render_table(rows: &[(String, Aggregate)]) -> String {
    let mut groups: Vec<String> = Vec::new();
    for (_, a) in rows {
        for g in &a.groups {
            if !groups.contains(&g.group) {
                groups.push(g.group.clone());
            }
        }
    }
    let pct = |v: Option<f64>| {
        v.map_or_else(String::new, |x| {
            let s = format!("{:.2}", 100.0 * x);
            if s == "-0.00" { "0.00".into() } else { s }
        })
    };
    let mut out = String::from("setting");
    for g in &groups {
        out.push(',');
        out.push_str(g);
    }
    out.push_str(",mean,sd\n");
    for (name, a) in rows {
        out.push_str(name);
        for g in &groups {
            out.push(',');
            out.push_str(&pct(a.groups.iter().find(|x| &x.group == g).and_then(|x| x.br_mean)));
        }
        out.push(',');
        out.push_str(&pct(a.table_mean));
        out.push(',');
        out.push_str(&pct(a.table_sd));
        out.push('\n');
    }
    out
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))
}

/// Applies `f` to every seed, at most `jobs` at a time; results keep the seed order.
pub fn map_seeds<T, F>(seeds: &[u64], jobs: usize, f: F) -> Result<Vec<(u64, Result<T>)>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    Ok(pool(jobs.max(1))?.install(|| seeds.par_iter().map(|&s| (s, f(s))).collect()))
}

#[derive(Debug)]
pub struct RunSummary {
    pub aggregate: Aggregate,
    /// First failure, if any seed failed.
    pub first_error: Option<Error>,
}

/// Runs every seed (at most `jobs` at a time) into `out`, then writes `aggregate.json` and
/// `table.csv`. A failing seed leaves `seed_<s>/error.json` and the others proceed.
pub fn run(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<RunSummary> {
    cfg.validate()?;
    create_dir(out)?;
    let results = map_seeds(&cfg.seeds, jobs, |s| run_seed_to_dir(cfg, s, out))?;
    let mut first_error = None;
    for (seed, r) in results {
        if let Err(e) = r {
            let dir = seed_dir(out, seed);
            create_dir(&dir)?;
            write_json(
                &dir.join(files::ERROR),
                &SeedFailure {
                    seed,
                    kind: error_kind(&e).into(),
                    error: e.to_string(),
                },
            )?;
            first_error.get_or_insert(e);
        }
    }
    let aggregate = report(out, "run")?;
    Ok(RunSummary {
        aggregate,
        first_error,
    })
}

fn seed_dirs(out: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(out).map_err(|e| Error::io(out, e))? {
        let entry = entry.map_err(|e| Error::io(out, e))?;
        let name = entry.file_name();
        if let Some(seed) = name
            .to_str()
            .and_then(|n| n.strip_prefix("seed_"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            if entry.path().is_dir() {
                found.push((seed, entry.path()));
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Recomputes `aggregate.json` and `table.csv` from the per-seed files in `out`.
pub fn report(out: &Path, setting: &str) -> Result<Aggregate> {
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for (seed, dir) in seed_dirs(out)? {
        let metrics = dir.join(files::METRICS);
        let error = dir.join(files::ERROR);
        if error.is_file() {
            failed.push(read_json::<SeedFailure>(&error)?);
        } else if metrics.is_file() {
            reports.push((seed, read_json::<MetricsReport>(&metrics)?));
        }
    }
    if reports.is_empty() && failed.is_empty() {
        return Err(Error::Data(format!(
            "{} holds no seed_<s>/{} files",
            out.display(),
            files::METRICS
        )));
    }
    let agg = aggregate(&reports, failed);
    write_json(&out.join(files::AGGREGATE), &agg)?;
    let table = render_table(&[(setting.to_string(), agg.clone())]);
    fs::write(out.join(files::TABLE), table).map_err(|e| Error::io(out.join(files::TABLE), e))?;
    Ok(agg)
}

/// A named variant of a base config.
#[derive(Debug, Clone)]
pub struct Setting {
    pub name: String,
    pub config: ExperimentConfig,
}

/// Scales every group's labeled count so the total is `total` (group ratios kept, rounded).
pub fn label_settings(base: &ExperimentConfig, totals: &[usize]) -> Result<Vec<Setting>> {
    let DataSource::Synthetic { generator, .. } = &base.data else {
        return Err(Error::Config("a label sweep needs synthetic data".into()));
    };
    let current: usize = generator.groups.iter().map(|g| g.n_labeled).sum();
    if current == 0 {
        return Err(Error::Config("a label sweep needs labeled examples in the base config".into()));
    }
    Ok(totals
        .iter()
        .map(|&total| {
            let mut cfg = base.clone();
            if let DataSource::Synthetic { generator, .. } = &mut cfg.data {
                for g in &mut generator.groups {
                    g.n_labeled =
                        ((g.n_labeled * total) as f64 / current as f64).round().max(1.0) as usize;
                }
            }
            Setting {
                name: format!("labels_{total}"),
                config: cfg,
            }
        })
        .collect())
}

pub fn balance_settings(base: &ExperimentConfig, modes: &[BalanceMode]) -> Vec<Setting> {
    modes
        .iter()
        .map(|&m| {
            let mut cfg = base.clone();
            cfg.mitigation.balance = m;
            let name = serde_json::to_value(m)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            Setting { name, config: cfg }
        })
        .collect()
}

/// Runs each setting into `out/<name>` and writes a combined `out/table.csv`.
pub fn sweep(settings: &[Setting], out: &Path, jobs: usize) -> Result<Vec<(String, RunSummary)>> {
    let mut names: BTreeMap<&str, ()> = BTreeMap::new();
    for s in settings {
        if names.insert(&s.name, ()).is_some() {
            return Err(Error::Config(format!("setting {:?} appears twice", s.name)));
        }
    }
    create_dir(out)?;
    let mut results = Vec::new();
    for s in settings {
        let dir = out.join(&s.name);
        let mut summary = run(&s.config, &dir, jobs)?;
        summary.aggregate = report(&dir, &s.name)?;
        results.push((s.name.clone(), summary));
    }
    let rows: Vec<(String, Aggregate)> = results
        .iter()
        .map(|(n, r)| (n.clone(), r.aggregate.clone()))
        .collect();
    let path = out.join(files::TABLE);
    fs::write(&path, render_table(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::two_group_cfg;

    pub(crate) fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::Synthetic {
                generator: two_group_cfg(6, 20),
                test_per_group: 30,
            },
            train: TrainConfig {
                epochs: 5,
                batch_size: 8,
                ..TrainConfig::default()
            },
            ssl: SslSettings::default(),
            mitigation: MitigationSettings::default(),
            delta: DEFAULT_DELTA,
            seeds: vec![1, 2, 3],
            output_dir: None,
        }
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let cfg = small_config();
        let mut v = serde_json::to_value(&cfg).unwrap();
        assert!(ExperimentConfig::from_json(&v.to_string()).is_ok());
        v["ssl"]["lamda"] = serde_json::json!(0.5);
        assert!(matches!(ExperimentConfig::from_json(&v.to_string()), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.seeds = vec![1, 1];
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.ssl.regime = Regime::IterativeL2;
        cfg.ssl.teacher = TeacherKind::TruthOracle;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.data = DataSource::Csv {
            train: "/nonexistent/train.csv".into(),
            test: "/nonexistent/test.csv".into(),
            num_classes: 2,
            dim: 2,
            pool: None,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("not found")));
    }

    #[test]
    fn seeds_are_isolated() {
        let cfg = small_config();
        let a = run_seed(&cfg, 2, None).unwrap();
        let b = run_seed(&cfg.with_seeds(vec![2]), 2, None).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.bounds, b.bounds);
        let c = run_seed(&cfg, 3, None).unwrap();
        assert_ne!(a.trained.baseline, c.trained.baseline);
    }

    #[test]
    fn aggregate_std_matches_group_std() {
        let mk = |brs: &[f64]| MetricsReport::from_groups(
            brs.iter()
                .enumerate()
                .map(|(i, &b)| SubPopReport {
                    group: format!("g{i}"),
                    a_baseline: Some(0.5),
                    a_semi: Some(0.5),
                    a_ideal: Some(0.5),
                    br: Some(b),
                    n_test: 10,
                })
                .collect(),
        );
        let reports = vec![(1, mk(&[0.1, 0.5, -0.2])), (2, mk(&[0.3, 0.1, 0.0]))];
        let agg = aggregate(&reports, Vec::new());
        let g0 = group_std(&[0.1, 0.3]).unwrap();
        assert_eq!(agg.groups[0].br_std, Some(g0));
        let stds = [group_std(&[0.1, 0.5, -0.2]).unwrap(), group_std(&[0.3, 0.1, 0.0]).unwrap()];
        assert_eq!(agg.br_std_median, Some(median(&stds).unwrap()));
        assert_eq!(agg.table_sd, Some(group_std(&[0.2, 0.3, -0.1]).unwrap()));
        assert_eq!(agg.n_negative_br_mean, Some(0.5));
    }

    #[test]
    fn table_layout() {
        let agg = aggregate(&[], Vec::new());
        let t = render_table(&[("none".into(), agg)]);
        assert_eq!(t, "setting,mean,sd\nnone,,\n");
    }
}
