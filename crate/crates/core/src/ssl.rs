//! Training regimes: supervised baseline on D_L, the ideal model on fully labeled data, the
//! two-iteration pseudo-label scheme and iterative consistency training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    accuracy, checked_objective, train_observed, Classifier, LossKind, SoftLabel, TrainConfig,
    TrainExample, TrainOutcome, Trainer,
};
use crate::pseudolabel::{build_pseudo_dataset, AugmentConfig, PseudoDataset, PseudoMode, Teacher};
use crate::rng::derive_seed;

/// Seed tag for the freshly initialized semi model.
pub const SEMI_SEED_TAG: u64 = 0x5e41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Baseline,
    Semi,
    Ideal,
    Iterative,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Baseline => "baseline",
            Phase::Semi => "semi",
            Phase::Ideal => "ideal",
            Phase::Iterative => "iterative",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub phase: Phase,
    pub epoch: usize,
    pub supervised_loss: Option<f64>,
    pub unsupervised_loss: Option<f64>,
    /// Aligned with [`Trace::groups`]; `None` for groups absent from the test set.
    pub group_accuracy: Vec<Option<f64>>,
}

/// Per-epoch training record. Accuracies are measured on `test` when one is given.
#[derive(Debug, Clone)]
pub struct Trace<'a> {
    test: Option<&'a Dataset>,
    rows: Vec<TraceRow>,
}

impl<'a> Trace<'a> {
    pub fn new(test: Option<&'a Dataset>) -> Self {
        Self {
            test,
            rows: Vec::new(),
        }
    }

    pub fn groups(&self) -> &[String] {
        self.test.map_or(&[], |t| t.groups())
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn record(
        &mut self,
        phase: Phase,
        epoch: usize,
        model: &Classifier,
        supervised_loss: Option<f64>,
        unsupervised_loss: Option<f64>,
    ) -> Result<()> {
        let mut group_accuracy = Vec::new();
        if let Some(test) = self.test {
            for g in test.groups() {
                group_accuracy.push(match accuracy(model, test.examples(), Some(g)) {
                    Ok(a) => Some(a),
                    Err(Error::Undefined(_)) => None,
                    Err(e) => return Err(e),
                });
            }
        }
        self.rows.push(TraceRow {
            phase,
            epoch,
            supervised_loss,
            unsupervised_loss,
            group_accuracy,
        });
        Ok(())
    }

    /// Columns: `phase,epoch,supervised_loss,unsupervised_loss,acc_<group>...`; missing
    /// values are empty fields.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "phase".to_string(),
            "epoch".into(),
            "supervised_loss".into(),
            "unsupervised_loss".into(),
        ];
        header.extend(self.groups().iter().map(|g| format!("acc_{g}")));
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.rows {
            let mut rec = vec![
                r.phase.as_str().to_string(),
                r.epoch.to_string(),
                opt(r.supervised_loss),
                opt(r.unsupervised_loss),
            ];
            rec.extend(r.group_accuracy.iter().map(|&a| opt(a)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file).map_err(|e| crate::data::csv_io(path, e))
    }
}

fn record(
    trace: &mut Option<&mut Trace<'_>>,
    phase: Phase,
    epoch: usize,
    model: &Classifier,
    sup: Option<f64>,
    unsup: Option<f64>,
) -> Result<()> {
    match trace {
        Some(t) => t.record(phase, epoch, model, sup, unsup),
        None => Ok(()),
    }
}

fn check_weights(n: usize, weights: Option<&[f64]>) -> Result<()> {
    match weights {
        Some(w) if w.len() != n => Err(Error::Shape(format!(
            "{} weights for {n} examples",
            w.len()
        ))),
        _ => Ok(()),
    }
}

/// One-hot training units for `ds`. With `use_truth` the hidden truth stands in for
/// missing labels; otherwise every example must be labeled.
pub fn supervised_examples(
    ds: &Dataset,
    weights: Option<&[f64]>,
    use_truth: bool,
) -> Result<Vec<TrainExample>> {
    check_weights(ds.len(), weights)?;
    let k = ds.num_classes();
    ds.examples()
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let class = if use_truth {
                ex.truth().ok_or_else(|| {
                    Error::Data(format!(
                        "example {i} has no label or hidden_truth; the ideal model needs the truth of every example"
                    ))
                })?
            } else {
                ex.label
                    .ok_or_else(|| Error::Data(format!("example {i} is unlabeled")))?
            };
            Ok(TrainExample::new(ex.feature.clone(), SoftLabel::one_hot(k, class))
                .with_weight(weights.map_or(1.0, |w| w[i])))
        })
        .collect()
}

/// f̂_{D_L}: supervised training on the labeled set.
pub fn train_baseline(
    labeled: &Dataset,
    weights: Option<&[f64]>,
    cfg: &TrainConfig,
    mut trace: Option<&mut Trace<'_>>,
) -> Result<TrainOutcome> {
    if labeled.is_empty() {
        return Err(Error::Data("baseline needs at least one labeled example".into()));
    }
    let examples = supervised_examples(labeled, weights, false)?;
    train_observed(&examples, cfg, |epoch, m, loss| {
        record(&mut trace, Phase::Baseline, epoch, m, Some(loss), None)
    })
}

/// f̂_D: supervised training on every example with its true label.
pub fn train_ideal(
    full: &Dataset,
    weights: Option<&[f64]>,
    cfg: &TrainConfig,
    mut trace: Option<&mut Trace<'_>>,
) -> Result<TrainOutcome> {
    let examples = supervised_examples(full, weights, true)?;
    train_observed(&examples, cfg, |epoch, m, loss| {
        record(&mut trace, Phase::Ideal, epoch, m, Some(loss), None)
    })
}

/// f̂_{D̃}: a freshly initialized model (seed derived from `cfg.seed`) trained on the
/// pseudo-labeled set. The trace splits the loss into given and pseudo-labeled entries.
pub fn train_semi(
    d_tilde: &PseudoDataset,
    weights: Option<&[f64]>,
    cfg: &TrainConfig,
    mut trace: Option<&mut Trace<'_>>,
) -> Result<TrainOutcome> {
    let examples = d_tilde.train_examples(weights)?;
    let cfg = cfg.with_seed(derive_seed(cfg.seed, SEMI_SEED_TAG));
    let (given, pseudo): (Vec<TrainExample>, Vec<TrainExample>) = if trace.is_some() {
        let mut given = Vec::new();
        let mut pseudo = Vec::new();
        for (ex, p) in examples.iter().zip(d_tilde.examples()) {
            if p.origin == crate::pseudolabel::Origin::Given {
                given.push(ex.clone());
            } else {
                pseudo.push(ex.clone());
            }
        }
        (given, pseudo)
    } else {
        (Vec::new(), Vec::new())
    };
    train_observed(&examples, &cfg, |epoch, m, _| {
        if trace.is_none() {
            return Ok(());
        }
        let part = |xs: &[TrainExample]| -> Result<Option<f64>> {
            if xs.is_empty() {
                Ok(None)
            } else {
                m.objective(xs).map(Some)
            }
        };
        let (s, u) = (part(&given)?, part(&pseudo)?);
        record(&mut trace, Phase::Semi, epoch, m, s, u)
    })
}

fn concat_weights(
    n_l: usize,
    n_u: usize,
    w_l: Option<&[f64]>,
    w_u: Option<&[f64]>,
) -> Result<Option<Vec<f64>>> {
    check_weights(n_l, w_l)?;
    check_weights(n_u, w_u)?;
    if w_l.is_none() && w_u.is_none() {
        return Ok(None);
    }
    let mut w = w_l.map_or_else(|| vec![1.0; n_l], <[f64]>::to_vec);
    w.extend(w_u.map_or_else(|| vec![1.0; n_u], <[f64]>::to_vec));
    Ok(Some(w))
}

#[derive(Debug, Clone)]
pub struct TwoIteration {
    pub baseline: TrainOutcome,
    pub d_tilde: PseudoDataset,
    pub semi: TrainOutcome,
}

/// Train on D_L to convergence, pseudo-label D_U once with that model, then train a fresh
/// model on the combined set.
#[allow(clippy::too_many_arguments)]
pub fn train_two_iteration(
    labeled: &Dataset,
    unlabeled: &Dataset,
    w_l: Option<&[f64]>,
    w_u: Option<&[f64]>,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    mode: PseudoMode,
    mut trace: Option<&mut Trace<'_>>,
) -> Result<TwoIteration> {
    let weights = concat_weights(labeled.len(), unlabeled.len(), w_l, w_u)?;
    let baseline = train_baseline(labeled, w_l, cfg, trace.as_deref_mut())?;
    let d_tilde = build_pseudo_dataset(
        Teacher::Snapshot(&baseline.model),
        labeled,
        unlabeled,
        aug,
        mode,
    )?;
    let semi = train_semi(&d_tilde, weights.as_deref(), cfg, trace)?;
    Ok(TwoIteration {
        baseline,
        d_tilde,
        semi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Supervised loss plus consistency to explicit (averaged, sharpened) pseudo-labels.
    ExplicitL1,
    /// Supervised loss plus λ times consistency to the snapshot's output on an augmented copy.
    ImplicitL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterativeConfig {
    pub objective: Objective,
    /// Weight of the unsupervised term in L2 (L1 always uses 1).
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub consistency_loss: LossKind,
}

fn default_lambda() -> f64 {
    1.0
}

impl IterativeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    fn unsup_weight(&self) -> f64 {
        match self.objective {
            Objective::ExplicitL1 => 1.0,
            Objective::ImplicitL2 => self.lambda,
        }
    }
}

/// Iterative pseudo-labeling. Before every epoch the current model is frozen as a snapshot,
/// pseudo-labels for D_U are regenerated from it (augmentation seed derived from `aug.seed`
/// and the epoch), and one SGD pass runs over D_L ∪ D_U with per-example weights chosen so
/// the mean loss is the supervised mean plus the weighted unsupervised mean. The snapshot
/// only supplies fixed targets.
///
/// `loss_trace[t]` is that objective at the snapshot taken after `t` epochs. When the
/// unsupervised term is inactive (λ = 0 or no unlabeled data) the parameter trajectory is
/// exactly that of [`crate::model::train`] on D_L.
#[allow(clippy::too_many_arguments)]
pub fn train_iterative(
    labeled: &Dataset,
    unlabeled: &Dataset,
    w_l: Option<&[f64]>,
    w_u: Option<&[f64]>,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    it: &IterativeConfig,
    mut trace: Option<&mut Trace<'_>>,
) -> Result<TrainOutcome> {
    it.validate()?;
    aug.validate()?;
    labeled.check_compatible(unlabeled)?;
    check_weights(unlabeled.len(), w_u)?;
    if labeled.is_empty() {
        return Err(Error::Data("iterative training needs at least one labeled example".into()));
    }
    let sup = supervised_examples(labeled, w_l, false)?;
    let (n_l, n_u) = (labeled.len(), unlabeled.len());
    let n = (n_l + n_u) as f64;
    let lambda = it.unsup_weight();
    let active = n_u > 0 && lambda > 0.0;
    let sup_train: Vec<TrainExample> = if active {
        sup.iter()
            .map(|e| e.clone().with_weight(e.weight * n / n_l as f64))
            .collect()
    } else {
        sup.clone()
    };
    let mode = match it.objective {
        Objective::ExplicitL1 => PseudoMode::Explicit,
        Objective::ImplicitL2 => PseudoMode::Implicit,
    };
    let mut trainer = Trainer::new(cfg, labeled.num_classes(), labeled.dim())?;
    let mut objective = Vec::with_capacity(cfg.epochs + 1);
    for t in 0..=cfg.epochs {
        let snapshot = trainer.model().clone();
        let sup_loss = checked_objective(&snapshot, &sup, t)?;
        let mut unsup = Vec::new();
        let mut unsup_loss = None;
        if n_u > 0 {
            let epoch_aug = AugmentConfig {
                seed: derive_seed(aug.seed, t as u64),
                ..*aug
            };
            let d_t = build_pseudo_dataset(
                Teacher::Snapshot(&snapshot),
                labeled,
                unlabeled,
                &epoch_aug,
                mode,
            )?;
            unsup = d_t
                .pseudo_examples()
                .enumerate()
                .map(|(i, p)| {
                    let w = w_u.map_or(1.0, |w| w[i]) * lambda * n / n_u as f64;
                    TrainExample::new(p.feature.clone(), p.reference.clone())
                        .with_loss(it.consistency_loss)
                        .with_weight(if active { w } else { 1.0 })
                })
                .collect();
            unsup_loss = Some(checked_objective(&snapshot, &unsup, t)?);
        }
        record(&mut trace, Phase::Iterative, t, &snapshot, Some(sup_loss), unsup_loss)?;
        objective.push(sup_loss + unsup_loss.map_or(0.0, |u| lambda * u));
        if t == cfg.epochs || cfg.early_stop.is_some_and(|s| s.fires(&objective)) {
            break;
        }
        if active {
            let mut union = sup_train.clone();
            union.extend(unsup);
            trainer.run_epoch(&union)?;
        } else {
            trainer.run_epoch(&sup_train)?;
        }
    }
    Ok(TrainOutcome {
        model: trainer.into_model(),
        loss_trace: objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, generate_test_set, two_group_cfg};
    use crate::model::{train, EarlyStop};

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: 0.2,
            batch_size: 8,
            seed: 5,
            early_stop: None,
            ..TrainConfig::default()
        }
    }

    fn split(n_l: usize, n_u: usize) -> (Dataset, Dataset) {
        generate_synthetic(&two_group_cfg(n_l, n_u)).unwrap().split()
    }

    #[test]
    fn baseline_is_plain_training() {
        let (l, _) = split(10, 0);
        let c = cfg(20);
        let a = train_baseline(&l, None, &c, None).unwrap();
        let b = train(&supervised_examples(&l, None, false).unwrap(), &c).unwrap();
        assert_eq!(a.model, b.model);
        assert!(matches!(
            train_baseline(&Dataset::empty(2, 2).unwrap(), None, &c, None),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn ideal_without_unlabeled_equals_baseline() {
        let (l, _) = split(10, 0);
        let c = cfg(15);
        let a = train_baseline(&l, None, &c, None).unwrap();
        let b = train_ideal(&l, None, &c, None).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn ideal_needs_truth() {
        let (l, u) = split(4, 4);
        let mut ex = l.concat(&u).unwrap().examples().to_vec();
        ex[12].hidden_truth = None;
        let d = Dataset::new(2, 2, ex).unwrap();
        let err = train_ideal(&d, None, &cfg(2), None).unwrap_err();
        assert!(err.to_string().contains("example 12"));
    }

    #[test]
    fn semi_never_reads_unlabeled_truth() {
        let (l, u) = split(10, 30);
        let c = cfg(10);
        let aug = AugmentConfig {
            sigma: 0.3,
            rounds: 2,
            ..AugmentConfig::default()
        };
        let a = train_two_iteration(&l, &u, None, None, &c, &aug, PseudoMode::Explicit, None).unwrap();
        let flipped: Vec<_> = u
            .examples()
            .iter()
            .cloned()
            .map(|mut e| {
                e.hidden_truth = e.hidden_truth.map(|t| 1 - t);
                e
            })
            .collect();
        let u2 = Dataset::new(2, 2, flipped).unwrap();
        let b = train_two_iteration(&l, &u2, None, None, &c, &aug, PseudoMode::Explicit, None).unwrap();
        assert_eq!(a.semi.model, b.semi.model);
        assert_eq!(a.baseline.model, b.baseline.model);
    }

    #[test]
    fn empty_unlabeled_retrains_on_labeled_with_new_seed() {
        let (l, u) = split(10, 0);
        let c = cfg(10);
        let r = train_two_iteration(&l, &u, None, None, &c, &AugmentConfig::default(), PseudoMode::Explicit, None)
            .unwrap();
        assert_eq!(r.d_tilde.n_pseudo(), 0);
        let fresh = train_baseline(&l, None, &c.with_seed(derive_seed(c.seed, SEMI_SEED_TAG)), None).unwrap();
        assert_eq!(r.semi.model.params(), fresh.model.params());
    }

    #[test]
    fn zero_lambda_matches_supervised_trajectory() {
        let (l, u) = split(12, 40);
        let mut c = cfg(30);
        c.early_stop = Some(EarlyStop::default());
        let it = IterativeConfig {
            objective: Objective::ImplicitL2,
            lambda: 0.0,
            consistency_loss: LossKind::CrossEntropy,
        };
        let aug = AugmentConfig {
            sigma: 0.5,
            ..AugmentConfig::default()
        };
        let a = train_iterative(&l, &u, None, None, &c, &aug, &it, None).unwrap();
        let b = train(&supervised_examples(&l, None, false).unwrap(), &c).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.loss_trace, b.loss_trace);

        let empty = Dataset::empty(2, 2).unwrap();
        let it1 = IterativeConfig {
            objective: Objective::ExplicitL1,
            ..it
        };
        let e = train_iterative(&l, &empty, None, None, &c, &aug, &it1, None).unwrap();
        assert_eq!(e.model.params(), b.model.params());
    }

    #[test]
    fn zero_sigma_consistency_is_entropy() {
        let (l, u) = split(8, 30);
        let test = generate_test_set(&two_group_cfg(0, 0), 10).unwrap();
        let mut trace = Trace::new(Some(&test));
        let it = IterativeConfig {
            objective: Objective::ImplicitL2,
            lambda: 1.0,
            consistency_loss: LossKind::CrossEntropy,
        };
        let out = train_iterative(&l, &u, None, None, &cfg(4), &AugmentConfig::default(), &it, Some(&mut trace))
            .unwrap();
        assert_eq!(trace.rows().len(), 5);
        assert_eq!(out.loss_trace.len(), 5);
        // the last row is the snapshot of the returned model
        let last = trace.rows()[4].unsupervised_loss.unwrap();
        let final_entropy: f64 = u
            .examples()
            .iter()
            .map(|e| out.model.forward(&e.feature).unwrap().entropy())
            .sum::<f64>()
            / u.len() as f64;
        assert!((last - final_entropy).abs() < 1e-9);
    }

    #[test]
    fn trace_csv_layout() {
        let (l, u) = split(6, 6);
        let test = generate_test_set(&two_group_cfg(0, 0), 5).unwrap();
        let mut trace = Trace::new(Some(&test));
        train_two_iteration(&l, &u, None, None, &cfg(2), &AugmentConfig::default(), PseudoMode::Explicit, Some(&mut trace))
            .unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "phase,epoch,supervised_loss,unsupervised_loss,acc_rich,acc_poor");
        assert_eq!(lines.len(), 1 + 3 + 3);
        assert!(lines[1].starts_with("baseline,0,"));
        assert!(lines[1].split(',').nth(3).unwrap().is_empty());
        assert!(lines[4].starts_with("semi,0,"));
        assert!(!lines[4].split(',').nth(3).unwrap().is_empty());
    }
}
