//! Augmentation, sharpening and pseudo-label generation, and the combined dataset of
//! given labels plus pseudo-labeled references that the semi-supervised model trains on.

use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, Example};
use crate::error::{Error, Result};
use crate::model::{Classifier, SoftLabel, TrainExample};
use crate::rng::{self, Rng};

/// Additive isotropic Gaussian noise: `x + sigma * z`.
pub fn augment(x: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    x.iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SharpenMode {
    #[default]
    OneHot,
    /// `p^(1/T)` renormalized, `T` in (0, 1].
    Temperature(f64),
}

impl SharpenMode {
    pub fn validate(self) -> Result<()> {
        match self {
            SharpenMode::OneHot => Ok(()),
            SharpenMode::Temperature(t) if t > 0.0 && t <= 1.0 => Ok(()),
            SharpenMode::Temperature(t) => {
                Err(Error::Config(format!("sharpening temperature {t} outside (0, 1]")))
            }
        }
    }
}

pub fn sharpen(s: &SoftLabel, mode: SharpenMode) -> SoftLabel {
    match mode {
        SharpenMode::OneHot => SoftLabel::one_hot(s.num_classes(), s.argmax()),
        SharpenMode::Temperature(t) => {
            // Dividing by the max first keeps the largest term at exactly 1.
            let max = s.max();
            let powered: Vec<f64> = s.probs().iter().map(|&p| (p / max).powf(1.0 / t)).collect();
            let total: f64 = powered.iter().sum();
            SoftLabel::from_normalized(powered.into_iter().map(|p| p / total).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Noise scale of the Gaussian augmentation.
    pub sigma: f64,
    /// Number of augmentation rounds averaged for an explicit pseudo-label.
    pub rounds: usize,
    #[serde(default)]
    pub sharpen: SharpenMode,
    #[serde(default)]
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            rounds: 1,
            sharpen: SharpenMode::OneHot,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        self.sharpen.validate()
    }
}

/// Sharpened mean of the teacher's outputs on `cfg.rounds` independent augmentations.
pub fn explicit_pseudo(
    teacher: &Classifier,
    x: &[f64],
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<SoftLabel> {
    let k = teacher.num_classes();
    let mut mean = vec![0.0; k];
    for _ in 0..cfg.rounds {
        let out = teacher.forward(&augment(x, cfg.sigma, rng))?;
        mean.iter_mut().zip(out.probs()).for_each(|(m, p)| *m += p);
    }
    let m = cfg.rounds as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    Ok(sharpen(&SoftLabel::from_normalized(mean), cfg.sharpen))
}

/// The teacher's unsharpened output on one augmented copy.
pub fn implicit_pseudo(teacher: &Classifier, x: &[f64], sigma: f64, rng: &mut Rng) -> Result<SoftLabel> {
    teacher.forward(&augment(x, sigma, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoMode {
    Explicit,
    Implicit,
}

/// Source of pseudo-labels for the unlabeled part.
#[derive(Debug, Clone, Copy)]
pub enum Teacher<'a> {
    /// A frozen model; only its outputs are used.
    Snapshot(&'a Classifier),
    /// Emits the one-hot hidden truth. An evaluation device, not a learner.
    TruthOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Given,
    ExplicitPseudo,
    ImplicitPseudo,
}

impl Origin {
    fn as_str(self) -> &'static str {
        match self {
            Origin::Given => "given",
            Origin::ExplicitPseudo => "explicit_pseudo",
            Origin::ImplicitPseudo => "implicit_pseudo",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "given" => Some(Origin::Given),
            "explicit_pseudo" => Some(Origin::ExplicitPseudo),
            "implicit_pseudo" => Some(Origin::ImplicitPseudo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoExample {
    pub feature: Vec<f64>,
    /// Reference label ỹ: one-hot for given labels, a pseudo-label otherwise.
    pub reference: SoftLabel,
    pub origin: Origin,
    pub group: String,
    pub hidden_truth: Option<usize>,
}

/// Given-label entries first (in D_L order), then pseudo-labeled entries (in D_U order).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDataset {
    num_classes: usize,
    dim: usize,
    examples: Vec<PseudoExample>,
}

impl PseudoDataset {
    pub fn new(num_classes: usize, dim: usize, examples: Vec<PseudoExample>) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            if ex.feature.len() != dim || ex.reference.num_classes() != num_classes {
                return Err(Error::Shape(format!("pseudo example {i} has wrong shape")));
            }
            if ex.origin == Origin::Given && !ex.reference.is_one_hot() {
                return Err(Error::Data(format!(
                    "pseudo example {i}: given label must be one-hot"
                )));
            }
        }
        Ok(Self {
            num_classes,
            dim,
            examples,
        })
    }

    pub fn examples(&self) -> &[PseudoExample] {
        &self.examples
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.examples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
    pub fn n_given(&self) -> usize {
        self.examples.iter().filter(|e| e.origin == Origin::Given).count()
    }
    pub fn n_pseudo(&self) -> usize {
        self.len() - self.n_given()
    }

    pub fn pseudo_examples(&self) -> impl Iterator<Item = &PseudoExample> {
        self.examples.iter().filter(|e| e.origin != Origin::Given)
    }

    /// Cross-entropy training units for the unified loss, with optional per-entry weights
    /// aligned with [`PseudoDataset::examples`].
    pub fn train_examples(&self, weights: Option<&[f64]>) -> Result<Vec<TrainExample>> {
        if let Some(w) = weights {
            if w.len() != self.len() {
                return Err(Error::Shape(format!(
                    "{} weights for {} pseudo examples",
                    w.len(),
                    self.len()
                )));
            }
        }
        Ok(self
            .examples
            .iter()
            .enumerate()
            .map(|(i, e)| {
                TrainExample::new(e.feature.clone(), e.reference.clone())
                    .with_weight(weights.map_or(1.0, |w| w[i]))
            })
            .collect())
    }

    fn header(&self) -> Vec<String> {
        let mut h = data::feature_header(self.dim);
        h.extend((0..self.num_classes).map(|i| format!("ref_{i}")));
        h.push("origin".into());
        h
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| data::csv_io(path, e))?;
        let write = |w: &mut csv::Writer<std::fs::File>| -> std::result::Result<(), csv::Error> {
            w.write_record(self.header())?;
            for e in &self.examples {
                let as_example = Example {
                    feature: e.feature.clone(),
                    label: (e.origin == Origin::Given).then(|| e.reference.argmax()),
                    group: e.group.clone(),
                    hidden_truth: e.hidden_truth,
                };
                let mut fields = data::example_fields(&as_example);
                fields.extend(e.reference.probs().iter().map(|&p| data::fmt_real(p)));
                fields.push(e.origin.as_str().into());
                w.write_record(fields)?;
            }
            w.flush()?;
            Ok(())
        };
        write(&mut w).map_err(|e| data::csv_io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>, num_classes: usize, dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let shell = PseudoDataset {
            num_classes,
            dim,
            examples: Vec::new(),
        };
        let mut reader = data::open_csv(path)?;
        data::check_header(path, &mut reader, &shell.header())?;
        let width = dim + 3 + num_classes + 1;
        let mut examples = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| data::csv_io(path, e))?;
            let row = record.position().map_or(0, |p| p.line() as usize);
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                row,
                message,
            };
            if record.len() != width {
                return Err(parse_err(format!(
                    "expected {width} columns, found {}",
                    record.len()
                )));
            }
            let ex = data::parse_example(&record, num_classes, dim).map_err(&parse_err)?;
            let probs = (0..num_classes)
                .map(|i| {
                    record[dim + 3 + i]
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| format!("ref_{i} is not a number"))
                })
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(&parse_err)?;
            let reference = SoftLabel::new(probs).map_err(|e| parse_err(e.to_string()))?;
            let origin = Origin::parse(record[width - 1].trim())
                .ok_or_else(|| parse_err(format!("unknown origin {:?}", &record[width - 1])))?;
            examples.push(PseudoExample {
                feature: ex.feature,
                reference,
                origin,
                group: ex.group,
                hidden_truth: ex.hidden_truth,
            });
        }
        PseudoDataset::new(num_classes, dim, examples).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            message: e.to_string(),
        })
    }
}

/// Reference label for one unlabeled example. `rng` is the example's own stream.
pub(crate) fn pseudo_reference(
    teacher: Teacher<'_>,
    ex: &Example,
    num_classes: usize,
    cfg: &AugmentConfig,
    mode: PseudoMode,
    rng: &mut Rng,
) -> Result<SoftLabel> {
    match teacher {
        Teacher::TruthOracle => {
            let t = ex.hidden_truth.ok_or_else(|| {
                Error::Data("truth oracle needs hidden_truth on every unlabeled example".into())
            })?;
            Ok(SoftLabel::one_hot(num_classes, t))
        }
        Teacher::Snapshot(model) => match mode {
            PseudoMode::Explicit => explicit_pseudo(model, &ex.feature, cfg, rng),
            PseudoMode::Implicit => implicit_pseudo(model, &ex.feature, cfg.sigma, rng),
        },
    }
}

/// Builds D̃: labeled examples keep their one-hot label, unlabeled ones get a pseudo-label
/// from `teacher`. Unlabeled example `n` draws its augmentations from stream `n` of
/// `cfg.seed`, so the result does not depend on evaluation order.
pub fn build_pseudo_dataset(
    teacher: Teacher<'_>,
    labeled: &Dataset,
    unlabeled: &Dataset,
    cfg: &AugmentConfig,
    mode: PseudoMode,
) -> Result<PseudoDataset> {
    labeled.check_compatible(unlabeled)?;
    cfg.validate()?;
    let k = labeled.num_classes();
    if let Teacher::Snapshot(m) = teacher {
        if m.num_classes() != k || m.dim() != labeled.dim() {
            return Err(Error::Shape("teacher shape differs from the datasets".into()));
        }
    }
    let mut examples = Vec::with_capacity(labeled.len() + unlabeled.len());
    for ex in labeled.examples() {
        let label = ex
            .label
            .ok_or_else(|| Error::Data("labeled partition contains an unlabeled example".into()))?;
        examples.push(PseudoExample {
            feature: ex.feature.clone(),
            reference: SoftLabel::one_hot(k, label),
            origin: Origin::Given,
            group: ex.group.clone(),
            hidden_truth: ex.hidden_truth.or(Some(label)),
        });
    }
    let origin = match mode {
        PseudoMode::Explicit => Origin::ExplicitPseudo,
        PseudoMode::Implicit => Origin::ImplicitPseudo,
    };
    for (n, ex) in unlabeled.examples().iter().enumerate() {
        let mut rng = rng::stream(cfg.seed, n as u64);
        examples.push(PseudoExample {
            feature: ex.feature.clone(),
            reference: pseudo_reference(teacher, ex, k, cfg, mode, &mut rng)?,
            origin,
            group: ex.group.clone(),
            hidden_truth: ex.hidden_truth,
        });
    }
    PseudoDataset::new(k, labeled.dim(), examples)
}
