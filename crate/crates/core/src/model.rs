//! Softmax-output classifiers, the cross-entropy / consistency losses, and mini-batch SGD.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Probabilities are clamped below at this value before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// A point of the K-simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SoftLabel(Vec<f64>);

impl SoftLabel {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Domain(format!(
                "soft label needs at least 2 entries, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain(format!("soft label entry {p} outside [0,1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Domain(format!("soft label sums to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(num_classes: usize, class: usize) -> Self {
        assert!(class < num_classes, "class {class} out of range for K={num_classes}");
        let mut v = vec![0.0; num_classes];
        v[class] = 1.0;
        Self(v)
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0 / num_classes as f64; num_classes])
    }

    /// For vectors already normalized by construction (softmax output, averages). Non-finite
    /// entries from a diverging model pass through and are caught by the trainer.
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        let sum: f64 = probs.iter().sum();
        debug_assert!(!sum.is_finite() || (sum - 1.0).abs() < 1e-6);
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Shannon entropy in nats, with 0 ln 0 = 0.
    pub fn entropy(&self) -> f64 {
        self.0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }

    pub fn is_one_hot(&self) -> bool {
        self.0.iter().filter(|&&p| p == 1.0).count() == 1
            && self.0.iter().all(|&p| p == 0.0 || p == 1.0)
    }
}

impl TryFrom<Vec<f64>> for SoftLabel {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        SoftLabel::new(v)
    }
}

impl From<SoftLabel> for Vec<f64> {
    fn from(s: SoftLabel) -> Self {
        s.0
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= s);
    out
}

/// Cross-entropy with a soft target: `-Σ target[i] ln max(pred[i], 1e-12)`.
pub fn ce_loss(pred: &SoftLabel, target: &SoftLabel) -> f64 {
    assert_eq!(pred.num_classes(), target.num_classes());
    pred.0
        .iter()
        .zip(&target.0)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * p.max(LOG_CLAMP).ln())
        .sum()
}

/// Squared L2 distance divided by K.
pub fn mse_consistency(pred: &SoftLabel, target: &SoftLabel) -> f64 {
    assert_eq!(pred.num_classes(), target.num_classes());
    let k = pred.num_classes() as f64;
    pred.0
        .iter()
        .zip(&target.0)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    Mse,
}

impl LossKind {
    pub fn value(self, pred: &SoftLabel, target: &SoftLabel) -> f64 {
        match self {
            LossKind::CrossEntropy => ce_loss(pred, target),
            LossKind::Mse => mse_consistency(pred, target),
        }
    }

    /// Derivative of the loss with respect to the predicted probabilities.
    fn grad_probs(self, pred: &[f64], target: &[f64]) -> Vec<f64> {
        match self {
            LossKind::CrossEntropy => pred
                .iter()
                .zip(target)
                .map(|(&p, &t)| if t == 0.0 || p < LOG_CLAMP { 0.0 } else { -t / p })
                .collect(),
            LossKind::Mse => {
                let k = pred.len() as f64;
                pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / k).collect()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// logits = W x + b
    #[default]
    Linear,
    /// logits = W2 tanh(W1 x + b1) + b2
    Mlp { hidden: usize },
}

/// Parameters live in one flat vector: `[W (K x d), b]` for the linear model and
/// `[W1 (h x d), b1, W2 (K x h), b2]` for the MLP, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    architecture: Architecture,
    num_classes: usize,
    dim: usize,
    seed: u64,
    params: Vec<f64>,
}

fn param_count(arch: Architecture, k: usize, d: usize) -> usize {
    match arch {
        Architecture::Linear => k * d + k,
        Architecture::Mlp { hidden } => hidden * d + hidden + k * hidden + k,
    }
}

impl Classifier {
    pub fn zeros(architecture: Architecture, num_classes: usize, dim: usize) -> Self {
        Self {
            architecture,
            num_classes,
            dim,
            seed: 0,
            params: vec![0.0; param_count(architecture, num_classes, dim)],
        }
    }

    /// Weight matrices drawn from N(0, scale²); biases start at zero.
    pub fn init(
        architecture: Architecture,
        num_classes: usize,
        dim: usize,
        scale: f64,
        seed: u64,
    ) -> Self {
        let mut c = Self::zeros(architecture, num_classes, dim);
        c.seed = seed;
        let mut rng = rng::stream(seed, 0);
        let mut fill = |slice: &mut [f64]| {
            for w in slice {
                let z: f64 = rng.sample(StandardNormal);
                *w = scale * z;
            }
        };
        match architecture {
            Architecture::Linear => fill(&mut c.params[..num_classes * dim]),
            Architecture::Mlp { hidden } => {
                let w1 = hidden * dim;
                fill(&mut c.params[..w1]);
                let w2_start = w1 + hidden;
                fill(&mut c.params[w2_start..w2_start + num_classes * hidden]);
            }
        }
        c
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("input feature is not finite".into()));
        }
        Ok(())
    }

    /// Returns (hidden activations, logits). Hidden is empty for the linear model.
    fn raw_forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (k, d, p) = (self.num_classes, self.dim, &self.params);
        let affine = |w: &[f64], b: &[f64], input: &[f64], rows: usize| -> Vec<f64> {
            let cols = input.len();
            (0..rows)
                .map(|r| {
                    let row = &w[r * cols..(r + 1) * cols];
                    b[r] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        };
        match self.architecture {
            Architecture::Linear => {
                let logits = affine(&p[..k * d], &p[k * d..], x, k);
                (Vec::new(), logits)
            }
            Architecture::Mlp { hidden: h } => {
                let (w1, rest) = p.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                let act: Vec<f64> = affine(w1, b1, x, h).into_iter().map(f64::tanh).collect();
                let logits = affine(w2, b2, &act, k);
                (act, logits)
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.raw_forward(x).1)
    }

    /// Class probabilities 𝒇(x).
    pub fn forward(&self, x: &[f64]) -> Result<SoftLabel> {
        self.check_input(x)?;
        Ok(SoftLabel::from_normalized(softmax(&self.raw_forward(x).1)))
    }

    /// argmax of [`Classifier::forward`], lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }

    /// Adds `scale * d loss / d params` for one example into `grad`; returns the loss.
    fn accumulate_grad(&self, ex: &TrainExample, scale: f64, grad: &mut [f64]) -> f64 {
        let (k, d) = (self.num_classes, self.dim);
        let (act, logits) = self.raw_forward(&ex.feature);
        let probs = softmax(&logits);
        let pred = SoftLabel::from_normalized(probs.clone());
        let loss = ex.loss.value(&pred, &ex.target);

        let g = ex.loss.grad_probs(&probs, ex.target.probs());
        let dot: f64 = probs.iter().zip(&g).map(|(p, g)| p * g).sum();
        let dlogits: Vec<f64> = probs.iter().zip(&g).map(|(p, gi)| p * (gi - dot)).collect();

        let x = &ex.feature;
        match self.architecture {
            Architecture::Linear => {
                let (gw, gb) = grad.split_at_mut(k * d);
                for (r, &dz) in dlogits.iter().enumerate() {
                    let s = scale * dz;
                    gw[r * d..(r + 1) * d]
                        .iter_mut()
                        .zip(x)
                        .for_each(|(gw, xi)| *gw += s * xi);
                    gb[r] += s;
                }
            }
            Architecture::Mlp { hidden: h } => {
                let w2 = &self.params[h * d + h..h * d + h + k * h];
                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(k * h);
                let mut dact = vec![0.0; h];
                for (r, &dz) in dlogits.iter().enumerate() {
                    let s = scale * dz;
                    for i in 0..h {
                        gw2[r * h + i] += s * act[i];
                        dact[i] += w2[r * h + i] * dz;
                    }
                    gb2[r] += s;
                }
                for i in 0..h {
                    let dpre = scale * dact[i] * (1.0 - act[i] * act[i]);
                    gw1[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(x)
                        .for_each(|(gw, xi)| *gw += dpre * xi);
                    gb1[i] += dpre;
                }
            }
        }
        loss
    }

    /// Weighted mean loss `Σ w_i ℓ_i / n` with weights rescaled to mean one.
    pub fn objective(&self, examples: &[TrainExample]) -> Result<f64> {
        let w = normalized_weights(examples)?;
        let total: f64 = examples
            .iter()
            .zip(&w)
            .map(|(ex, &w)| {
                let pred = SoftLabel::from_normalized(softmax(&self.raw_forward(&ex.feature).1));
                w * ex.loss.value(&pred, &ex.target)
            })
            .sum();
        Ok(total / examples.len() as f64)
    }

    /// Objective and its analytic gradient with respect to [`Classifier::params`].
    pub fn objective_and_gradient(&self, examples: &[TrainExample]) -> Result<(f64, Vec<f64>)> {
        let w = normalized_weights(examples)?;
        let n = examples.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for (ex, &w) in examples.iter().zip(&w) {
            total += w * self.accumulate_grad(ex, w / n, &mut grad);
        }
        Ok((total / n, grad))
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub feature: Vec<f64>,
    pub target: SoftLabel,
    /// Nonnegative loss weight; weights are rescaled to mean one per training call.
    pub weight: f64,
    pub loss: LossKind,
}

impl TrainExample {
    pub fn new(feature: Vec<f64>, target: SoftLabel) -> Self {
        Self {
            feature,
            target,
            weight: 1.0,
            loss: LossKind::CrossEntropy,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }
}

/// `w_i / max(w) * n / Σ(w_j / max(w))`: mean one, and exactly 1.0 everywhere when all
/// weights are equal.
fn normalized_weights(examples: &[TrainExample]) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if let Some(w) = examples
        .iter()
        .map(|e| e.weight)
        .find(|w| !(w.is_finite() && *w >= 0.0))
    {
        return Err(Error::Domain(format!("example weight {w} must be finite and >= 0")));
    }
    let max = examples.iter().map(|e| e.weight).fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::Domain("all example weights are zero".into()));
    }
    let rel: Vec<f64> = examples.iter().map(|e| e.weight / max).collect();
    let factor = examples.len() as f64 / rel.iter().sum::<f64>();
    Ok(rel.into_iter().map(|r| r * factor).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    /// Stop once the loss fell by less than this over the last `patience` epochs.
    pub min_delta: f64,
    pub patience: usize,
}

impl EarlyStop {
    /// `trace[0]` is the objective before training, `trace[t]` after epoch `t`.
    pub fn fires(&self, trace: &[f64]) -> bool {
        let t = trace.len().saturating_sub(1);
        self.patience > 0 && t >= self.patience && trace[t - self.patience] - trace[t] < self.min_delta
    }
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            min_delta: 1e-5,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub architecture: Architecture,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
}

fn default_init_scale() -> f64 {
    0.1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Linear,
            epochs: 100,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
            init_scale: default_init_scale(),
            early_stop: Some(EarlyStop::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be >= 0".into()));
        }
        if let Architecture::Mlp { hidden: 0 } = self.architecture {
            return Err(Error::Config("mlp needs at least one hidden unit".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Classifier,
    /// Objective before training (index 0) and after every completed epoch.
    pub loss_trace: Vec<f64>,
}

/// Stateful SGD loop. Initialization and shuffling use separate streams of `cfg.seed`, so
/// callers that rebuild the training set between epochs (iterative pseudo-labeling) see
/// the same shuffle sequence as plain training.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Classifier,
    cfg: TrainConfig,
    shuffle: Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, num_classes: usize, dim: usize) -> Result<Self> {
        cfg.validate()?;
        let model = Classifier::init(cfg.architecture, num_classes, dim, cfg.init_scale, cfg.seed);
        Ok(Self {
            model,
            cfg: cfg.clone(),
            shuffle: rng::stream(cfg.seed, 1),
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Classifier {
        &self.model
    }

    pub fn into_model(self) -> Classifier {
        self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass of mini-batch SGD over `examples` in a freshly shuffled order.
    pub fn run_epoch(&mut self, examples: &[TrainExample]) -> Result<()> {
        let weights = normalized_weights(examples)?;
        for ex in examples {
            if ex.target.num_classes() != self.model.num_classes {
                return Err(Error::Shape("target length differs from K".into()));
            }
            self.model.check_input(&ex.feature)?;
        }
        self.epoch += 1;
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut self.shuffle);
        let mut grad = vec![0.0; self.model.params.len()];
        for batch in order.chunks(self.cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                self.model
                    .accumulate_grad(&examples[i], weights[i] * inv, &mut grad);
            }
            let lr = self.cfg.learning_rate;
            self.model
                .params
                .iter_mut()
                .zip(&grad)
                .for_each(|(p, g)| *p -= lr * g);
        }
        if self.model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                epoch: self.epoch,
                loss: f64::NAN,
            });
        }
        Ok(())
    }
}

pub(crate) fn checked_objective(model: &Classifier, examples: &[TrainExample], epoch: usize) -> Result<f64> {
    let loss = model.objective(examples)?;
    if !loss.is_finite() {
        return Err(Error::Diverged { epoch, loss });
    }
    Ok(loss)
}

/// Empirical risk minimization by mini-batch SGD on the weighted mean loss.
pub fn train(examples: &[TrainExample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(examples, cfg, |_, _, _| Ok(()))
}

/// [`train`] that calls `observe(epoch, model, objective)` before the first epoch and
/// after every epoch.
pub fn train_observed<F>(examples: &[TrainExample], cfg: &TrainConfig, mut observe: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &Classifier, f64) -> Result<()>,
{
    let first = examples
        .first()
        .ok_or_else(|| Error::Data("empty training set".into()))?;
    let mut trainer = Trainer::new(cfg, first.target.num_classes(), first.feature.len())?;
    let mut trace = vec![checked_objective(trainer.model(), examples, 0)?];
    observe(0, trainer.model(), trace[0])?;
    for epoch in 1..=cfg.epochs {
        trainer.run_epoch(examples)?;
        trace.push(checked_objective(trainer.model(), examples, epoch)?);
        observe(epoch, trainer.model(), trace[epoch])?;
        if cfg.early_stop.is_some_and(|s| s.fires(&trace)) {
            break;
        }
    }
    Ok(TrainOutcome {
        model: trainer.into_model(),
        loss_trace: trace,
    })
}

/// Fraction of correct predictions against each example's label (or hidden truth),
/// optionally restricted to one group.
pub fn accuracy(model: &Classifier, examples: &[Example], group: Option<&str>) -> Result<f64> {
    let mut n = 0usize;
    let mut correct = 0usize;
    for ex in examples.iter().filter(|e| group.is_none_or(|g| e.group == g)) {
        let truth = ex
            .truth()
            .ok_or_else(|| Error::Data("example has neither label nor hidden_truth".into()))?;
        n += 1;
        if model.predict(&ex.feature)? == truth {
            correct += 1;
        }
    }
    if n == 0 {
        return Err(Error::Undefined(match group {
            Some(g) => format!("no examples in group {g:?}"),
            None => "no examples to evaluate".into(),
        }));
    }
    Ok(correct as f64 / n as f64)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub num_classes: usize,
    pub dim: usize,
    pub seed: u64,
    pub arrays: Vec<LayerArray>,
}

fn layer_shapes(arch: Architecture, k: usize, d: usize) -> Vec<(&'static str, usize, usize)> {
    match arch {
        Architecture::Linear => vec![("weight", k, d), ("bias", k, 1)],
        Architecture::Mlp { hidden: h } => vec![
            ("hidden_weight", h, d),
            ("hidden_bias", h, 1),
            ("output_weight", k, h),
            ("output_bias", k, 1),
        ],
    }
}

impl Classifier {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut offset = 0;
        let arrays = layer_shapes(self.architecture, self.num_classes, self.dim)
            .into_iter()
            .map(|(name, rows, cols)| {
                let values = self.params[offset..offset + rows * cols].to_vec();
                offset += rows * cols;
                LayerArray {
                    name: name.into(),
                    rows,
                    cols,
                    values,
                }
            })
            .collect();
        Checkpoint {
            architecture: self.architecture,
            num_classes: self.num_classes,
            dim: self.dim,
            seed: self.seed,
            arrays,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let shapes = layer_shapes(ck.architecture, ck.num_classes, ck.dim);
        if shapes.len() != ck.arrays.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} arrays, architecture needs {}",
                ck.arrays.len(),
                shapes.len()
            )));
        }
        let mut params = Vec::with_capacity(param_count(ck.architecture, ck.num_classes, ck.dim));
        for ((name, rows, cols), arr) in shapes.into_iter().zip(&ck.arrays) {
            if arr.name != name || arr.rows != rows || arr.cols != cols || arr.values.len() != rows * cols
            {
                return Err(Error::Shape(format!(
                    "checkpoint array {:?} ({}x{}, {} values) does not match {name} ({rows}x{cols})",
                    arr.name,
                    arr.rows,
                    arr.cols,
                    arr.values.len()
                )));
            }
            params.extend_from_slice(&arr.values);
        }
        Ok(Self {
            architecture: ck.architecture,
            num_classes: ck.num_classes,
            dim: ck.dim,
            seed: ck.seed,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_checkpoint())
            .map_err(|e| Error::json("serializing checkpoint", e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        Self::from_checkpoint(&ck)
    }
}
