//! Sub-populated classification datasets: synthetic Gaussian generator, CSV I/O and
//! labeled/unlabeled bookkeeping.
//!
//! Class indices are 0-based in memory and 1-based in CSV files.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub feature: Vec<f64>,
    /// Observed label; `None` marks an unlabeled example.
    pub label: Option<usize>,
    pub group: String,
    /// Ground truth kept for evaluation only. Training code never reads it.
    pub hidden_truth: Option<usize>,
}

impl Example {
    /// The label if observed, else the hidden truth.
    pub fn truth(&self) -> Option<usize> {
        self.label.or(self.hidden_truth)
    }

    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_classes: usize,
    dim: usize,
    groups: Vec<String>,
}

impl Dataset {
    /// Validates every example and registers groups in order of first appearance.
    pub fn new(num_classes: usize, dim: usize, examples: Vec<Example>) -> Result<Self> {
        Self::with_groups(num_classes, dim, Vec::new(), examples)
    }

    /// Like [`Dataset::new`] but seeds the group registry, so groups with no examples
    /// are still known.
    pub fn with_groups(
        num_classes: usize,
        dim: usize,
        groups: Vec<String>,
        examples: Vec<Example>,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let mut registry = Vec::new();
        for g in groups {
            if !registry.contains(&g) {
                registry.push(g);
            }
        }
        for (i, ex) in examples.iter().enumerate() {
            check_example(ex, num_classes, dim).map_err(|m| Error::Data(format!("example {i}: {m}")))?;
            if !registry.contains(&ex.group) {
                registry.push(ex.group.clone());
            }
        }
        Ok(Self {
            examples,
            num_classes,
            dim,
            groups: registry,
        })
    }

    pub fn empty(num_classes: usize, dim: usize) -> Result<Self> {
        Self::new(num_classes, dim, Vec::new())
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_labeled(&self) -> usize {
        self.examples.iter().filter(|e| e.is_labeled()).count()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.len() - self.n_labeled()
    }

    /// Labeled part (D_L) and unlabeled part (D_U), each keeping the full group registry.
    pub fn split(&self) -> (Dataset, Dataset) {
        let (labeled, unlabeled): (Vec<_>, Vec<_>) =
            self.examples.iter().cloned().partition(Example::is_labeled);
        let make = |examples| Dataset {
            examples,
            num_classes: self.num_classes,
            dim: self.dim,
            groups: self.groups.clone(),
        };
        (make(labeled), make(unlabeled))
    }

    /// Concatenation; both parts must agree on K and d.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        self.check_compatible(other)?;
        let mut groups = self.groups.clone();
        groups.extend(other.groups.iter().cloned());
        let mut examples = self.examples.clone();
        examples.extend(other.examples.iter().cloned());
        Dataset::with_groups(self.num_classes, self.dim, groups, examples)
    }

    pub fn check_compatible(&self, other: &Dataset) -> Result<()> {
        if self.num_classes != other.num_classes || self.dim != other.dim {
            return Err(Error::Shape(format!(
                "datasets disagree: K={} d={} vs K={} d={}",
                self.num_classes, self.dim, other.num_classes, other.dim
            )));
        }
        Ok(())
    }
}

fn check_example(ex: &Example, num_classes: usize, dim: usize) -> std::result::Result<(), String> {
    if ex.feature.len() != dim {
        return Err(format!("feature has {} entries, expected {dim}", ex.feature.len()));
    }
    if let Some(j) = ex.feature.iter().position(|v| !v.is_finite()) {
        return Err(format!("feature entry {j} is not finite"));
    }
    for (name, value) in [("label", ex.label), ("hidden_truth", ex.hidden_truth)] {
        if let Some(c) = value {
            if c >= num_classes {
                return Err(format!("{name} {} outside 1..{num_classes}", c + 1));
            }
        }
    }
    if let (Some(l), Some(t)) = (ex.label, ex.hidden_truth) {
        if l != t {
            return Err(format!("label {} disagrees with hidden_truth {}", l + 1, t + 1));
        }
    }
    Ok(())
}

/// Per-group counts of (labeled, unlabeled) examples.
pub fn group_counts(ds: &Dataset) -> BTreeMap<String, (usize, usize)> {
    let mut counts = BTreeMap::new();
    for ex in ds.examples() {
        let entry = counts.entry(ex.group.clone()).or_insert((0, 0));
        if ex.is_labeled() {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
    }
    counts
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    /// One mean vector per class.
    pub class_means: Vec<Vec<f64>>,
    /// Isotropic standard deviation around every class mean.
    pub noise_scale: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub groups: Vec<GroupSpec>,
    pub seed: u64,
}

// Stream offsets keep training, test and growth draws for a group apart.
const STREAM_TRAIN: u64 = 0;
const STREAM_TEST: u64 = 1 << 32;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.groups.is_empty() {
            return Err(Error::Config("at least one group is required".into()));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if self.groups[..i].iter().any(|o| o.name == g.name) {
                return Err(Error::Config(format!("duplicate group name {:?}", g.name)));
            }
            if !(g.noise_scale > 0.0 && g.noise_scale.is_finite()) {
                return Err(Error::Config(format!(
                    "group {:?}: noise_scale must be positive, got {}",
                    g.name, g.noise_scale
                )));
            }
            if g.class_means.len() != self.num_classes {
                return Err(Error::Config(format!(
                    "group {:?}: {} class means for {} classes",
                    g.name,
                    g.class_means.len(),
                    self.num_classes
                )));
            }
            for m in &g.class_means {
                if m.len() != self.dim || m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config(format!(
                        "group {:?}: class mean must have {} finite entries",
                        g.name, self.dim
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn group(&self, name: &str) -> Option<&GroupSpec> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn group_names(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.name.clone()).collect()
    }

    /// Draws `n` examples of `group`. Classes are stratified: example `i` belongs to class
    /// `(offset + i) mod K`.
    pub fn draw(
        &self,
        group: &GroupSpec,
        n: usize,
        offset: usize,
        labeled: bool,
        rng: &mut Rng,
    ) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let class = (offset + i) % self.num_classes;
                let feature = group.class_means[class]
                    .iter()
                    .map(|&mu| {
                        let z: f64 = rng.sample(StandardNormal);
                        mu + group.noise_scale * z
                    })
                    .collect();
                Example {
                    feature,
                    label: labeled.then_some(class),
                    group: group.name.clone(),
                    hidden_truth: Some(class),
                }
            })
            .collect()
    }
}

/// Training pool: for each group in order, its labeled then its unlabeled examples.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut examples = Vec::new();
    for (gi, g) in cfg.groups.iter().enumerate() {
        let mut rng = rng::stream(cfg.seed, STREAM_TRAIN + gi as u64);
        examples.extend(cfg.draw(g, g.n_labeled, 0, true, &mut rng));
        examples.extend(cfg.draw(g, g.n_unlabeled, g.n_labeled, false, &mut rng));
    }
    Dataset::with_groups(cfg.num_classes, cfg.dim, cfg.group_names(), examples)
}

/// Held-out labeled examples from the same class-conditional distributions.
pub fn generate_test_set(cfg: &SynthConfig, n_per_group: usize) -> Result<Dataset> {
    cfg.validate()?;
    let mut examples = Vec::new();
    for (gi, g) in cfg.groups.iter().enumerate() {
        let mut rng = rng::stream(cfg.seed, STREAM_TEST + gi as u64);
        examples.extend(cfg.draw(g, n_per_group, 0, true, &mut rng));
    }
    Dataset::with_groups(cfg.num_classes, cfg.dim, cfg.group_names(), examples)
}

/// Bayes-rule accuracy for a two-class isotropic Gaussian group with equal priors:
/// Φ(separation / 2σ).
pub fn two_class_bayes_accuracy(group: &GroupSpec) -> Option<f64> {
    if group.class_means.len() != 2 {
        return None;
    }
    let sep: f64 = group.class_means[0]
        .iter()
        .zip(&group.class_means[1])
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Some(normal_cdf(sep / (2.0 * group.noise_scale)))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

pub(crate) fn feature_header(dim: usize) -> Vec<String> {
    let mut header: Vec<String> = (0..dim).map(|j| format!("f{j}")).collect();
    header.extend(["label", "group", "hidden_truth"].map(String::from));
    header
}

/// Decimal text with 17 significant digits: enough for an exact f64 round trip.
pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_class(c: Option<usize>) -> String {
    c.map(|c| (c + 1).to_string()).unwrap_or_default()
}

pub(crate) fn example_fields(ex: &Example) -> Vec<String> {
    let mut fields: Vec<String> = ex.feature.iter().map(|&v| fmt_real(v)).collect();
    fields.push(fmt_class(ex.label));
    fields.push(ex.group.clone());
    fields.push(fmt_class(ex.hidden_truth));
    fields
}

pub fn write_csv<W: std::io::Write>(ds: &Dataset, writer: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(feature_header(ds.dim()))?;
    for ex in ds.examples() {
        w.write_record(example_fields(ex))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, std::io::BufWriter::new(file)).map_err(|e| csv_io(path, e))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            message: format!("{other:?}"),
        },
    }
}

pub(crate) fn parse_class(
    field: &str,
    num_classes: usize,
    name: &str,
) -> std::result::Result<Option<usize>, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    let v: usize = field
        .parse()
        .map_err(|_| format!("{name} {field:?} is not an integer"))?;
    if v == 0 || v > num_classes {
        return Err(format!("{name} {v} outside 1..{num_classes}"));
    }
    Ok(Some(v - 1))
}

pub(crate) fn parse_example(
    record: &csv::StringRecord,
    num_classes: usize,
    dim: usize,
) -> std::result::Result<Example, String> {
    if record.len() < dim + 3 {
        return Err(format!("expected {} columns, found {}", dim + 3, record.len()));
    }
    let feature = (0..dim)
        .map(|j| {
            let f = record[j].trim();
            match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format!("column f{j}: {f:?} is not a finite number")),
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let label = parse_class(&record[dim], num_classes, "label")?;
    let group = record[dim + 1].to_string();
    let hidden_truth = parse_class(&record[dim + 2], num_classes, "hidden_truth")?;
    let ex = Example {
        feature,
        label,
        group,
        hidden_truth,
    };
    check_example(&ex, num_classes, dim)?;
    Ok(ex)
}

pub(crate) fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))
}

pub(crate) fn check_header(
    path: &Path,
    reader: &mut csv::Reader<std::fs::File>,
    expected: &[String],
) -> Result<()> {
    let header = reader.headers().map_err(|e| csv_io(path, e))?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            message: format!("header {:?} does not match {:?}", found, expected),
        });
    }
    Ok(())
}

/// Reads a dataset; rows are reported by file line (the header is line 1).
pub fn load_csv(path: impl AsRef<Path>, num_classes: usize, dim: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    check_header(path, &mut reader, &feature_header(dim))?;
    let mut examples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_io(path, e))?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != dim + 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                message: format!("expected {} columns, found {}", dim + 3, record.len()),
            });
        }
        let ex = parse_example(&record, num_classes, dim).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            row,
            message,
        })?;
        examples.push(ex);
    }
    Dataset::new(num_classes, dim, examples)
}

#[cfg(test)]
pub(crate) use tests::two_group_cfg;
