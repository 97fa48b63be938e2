//! Generalization-bound quantities for pseudo-label training: label-noise rates of a
//! pseudo-labeled set, the Term-1 sandwich, Hoeffding sample-complexity terms and the
//! benefit-ratio proxy. Includes exact enumeration checks on small discrete instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Classifier, SoftLabel};
use crate::pseudolabel::{Origin, PseudoDataset};

pub const DEFAULT_DELTA: f64 = 0.05;

/// Tolerance used by the sandwich and identity checks.
pub const CHECK_TOLERANCE: f64 = 1e-12;

/// Largest number of feature values a [`DiscreteInstance`] may enumerate.
pub const MAX_DISCRETE_FEATURES: usize = 8;

fn check_prob(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {v} is not in [0, 1]")))
    }
}

fn check_same_k(a: &SoftLabel, b: &SoftLabel) -> Result<()> {
    if a.num_classes() != b.num_classes() {
        return Err(Error::Shape(format!(
            "label distributions over {} and {} classes",
            a.num_classes(),
            b.num_classes()
        )));
    }
    Ok(())
}

/// η(X): half the L1 distance between the reference label and the true label distribution.
pub fn tv_eta(reference: &SoftLabel, truth_dist: &SoftLabel) -> Result<f64> {
    check_same_k(reference, truth_dist)?;
    let l1: f64 = reference
        .probs()
        .iter()
        .zip(truth_dist.probs())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok((0.5 * l1).min(1.0))
}

/// P(Ỹ ≠ Y | X) when Ỹ and Y are drawn independently given X.
pub fn error_rate(reference: &SoftLabel, truth_dist: &SoftLabel) -> Result<f64> {
    check_same_k(reference, truth_dist)?;
    let agree: f64 = reference
        .probs()
        .iter()
        .zip(truth_dist.probs())
        .map(|(a, b)| a * b)
        .sum();
    Ok((1.0 - agree).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Check {
    pub eta: f64,
    pub e: f64,
    pub equal: bool,
}

/// Compares η(X) with e(X) = 1 − reference[i′] for a confident (one-hot) truth.
pub fn lemma2_check(reference: &SoftLabel, truth: &SoftLabel) -> Result<Lemma2Check> {
    check_same_k(reference, truth)?;
    if !truth.is_one_hot() {
        return Err(Error::Domain(
            "the identity needs a confident truth (one-hot distribution)".into(),
        ));
    }
    let eta = tv_eta(reference, truth)?;
    let e = 1.0 - reference.probs()[truth.argmax()];
    Ok(Lemma2Check {
        eta,
        e,
        equal: (eta - e).abs() <= CHECK_TOLERANCE,
    })
}

/// Label-noise statistics of a pseudo-labeled set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseStats {
    /// Mean η over pseudo-labeled entries.
    pub eta_per_pseudo: f64,
    /// `eta_per_pseudo · N_U / N`: the expected label error over the whole set.
    pub eta_bar: f64,
    /// Fraction of pseudo-labeled entries whose argmax differs from the truth.
    pub e_bar: f64,
}

fn truth_of(i: usize, hidden_truth: Option<usize>) -> Result<usize> {
    hidden_truth.ok_or_else(|| {
        Error::Data(format!(
            "entry {i} has no hidden_truth; noise rates need the true label of every pseudo-labeled entry"
        ))
    })
}

pub fn eta_bar_and_e_bar(d_tilde: &PseudoDataset) -> Result<NoiseStats> {
    let k = d_tilde.num_classes();
    let (mut eta_sum, mut err_sum, mut n_u) = (0.0, 0.0, 0usize);
    for (i, ex) in d_tilde.examples().iter().enumerate() {
        if ex.origin == Origin::Given {
            continue;
        }
        let t = truth_of(i, ex.hidden_truth)?;
        eta_sum += tv_eta(&ex.reference, &SoftLabel::one_hot(k, t))?;
        err_sum += f64::from(u8::from(ex.reference.argmax() != t));
        n_u += 1;
    }
    if n_u == 0 {
        return Ok(NoiseStats {
            eta_per_pseudo: 0.0,
            eta_bar: 0.0,
            e_bar: 0.0,
        });
    }
    let eta_per_pseudo = eta_sum / n_u as f64;
    Ok(NoiseStats {
        eta_per_pseudo,
        eta_bar: eta_per_pseudo * n_u as f64 / d_tilde.len() as f64,
        e_bar: err_sum / n_u as f64,
    })
}

/// Ã_f: mean over the set of the reference mass on f's prediction.
pub fn noisy_accuracy(f: &Classifier, d_tilde: &PseudoDataset) -> Result<f64> {
    if d_tilde.is_empty() {
        return Err(Error::Undefined("noisy accuracy of an empty set".into()));
    }
    let mut sum = 0.0;
    for ex in d_tilde.examples() {
        sum += ex.reference.probs()[f.predict(&ex.feature)?];
    }
    Ok(sum / d_tilde.len() as f64)
}

/// `((2Ã − 1)·ē, η̄)`.
pub fn term1_bounds(a_tilde: f64, e_bar: f64, eta_bar: f64) -> Result<(f64, f64)> {
    check_prob("a_tilde", a_tilde)?;
    check_prob("e_bar", e_bar)?;
    check_prob("eta_bar", eta_bar)?;
    Ok(((2.0 * a_tilde - 1.0) * e_bar, eta_bar))
}

/// A finite feature space with explicit P(X), P(Y|X), P(Ỹ|X) and a deterministic
/// classifier table. Y and Ỹ are taken to be independent given X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteInstance {
    pub p_x: Vec<f64>,
    pub truth: Vec<SoftLabel>,
    pub reference: Vec<SoftLabel>,
    pub classifier: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Check {
    /// R_𝒟(f) − R_𝒟̃(f).
    pub gap: f64,
    pub lower: f64,
    pub upper: f64,
    pub eta_bar: f64,
    pub e_bar: f64,
    pub a_tilde: f64,
}

impl Lemma1Check {
    pub fn lower_holds(&self) -> bool {
        self.gap >= self.lower - CHECK_TOLERANCE
    }
    pub fn upper_holds(&self) -> bool {
        self.gap <= self.upper + CHECK_TOLERANCE
    }
    pub fn holds(&self) -> bool {
        self.lower_holds() && self.upper_holds()
    }
}

impl DiscreteInstance {
    pub fn validate(&self) -> Result<()> {
        let n = self.p_x.len();
        if n == 0 || n > MAX_DISCRETE_FEATURES {
            return Err(Error::Domain(format!(
                "discrete instance needs 1..={MAX_DISCRETE_FEATURES} feature values, has {n}"
            )));
        }
        if self.truth.len() != n || self.reference.len() != n || self.classifier.len() != n {
            return Err(Error::Shape("instance tables differ in length".into()));
        }
        if self.p_x.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain("P(X) has an entry outside [0, 1]".into()));
        }
        let total: f64 = self.p_x.iter().sum();
        if (total - 1.0).abs() > SoftLabel::SUM_TOLERANCE {
            return Err(Error::Domain(format!("P(X) sums to {total}")));
        }
        let k = self.truth[0].num_classes();
        for x in 0..n {
            if self.truth[x].num_classes() != k || self.reference[x].num_classes() != k {
                return Err(Error::Shape(format!("feature {x} has a different class count")));
            }
            if self.classifier[x] >= k {
                return Err(Error::Domain(format!(
                    "classifier predicts class {} at feature {x}, K = {k}",
                    self.classifier[x]
                )));
            }
        }
        Ok(())
    }

    /// Exact Term-1 gap and its sandwich by enumeration over X.
    pub fn term1(&self) -> Result<Lemma1Check> {
        self.validate()?;
        let (mut r_clean, mut r_noisy) = (0.0, 0.0);
        let (mut eta_bar, mut e_bar, mut a_tilde) = (0.0, 0.0, 0.0);
        for (x, &p) in self.p_x.iter().enumerate() {
            let (t, r, f) = (&self.truth[x], &self.reference[x], self.classifier[x]);
            r_clean += p * (1.0 - t.probs()[f]);
            r_noisy += p * (1.0 - r.probs()[f]);
            eta_bar += p * tv_eta(r, t)?;
            e_bar += p * error_rate(r, t)?;
            a_tilde += p * r.probs()[f];
        }
        let (lower, upper) = ((2.0 * a_tilde - 1.0) * e_bar, eta_bar);
        Ok(Lemma1Check {
            gap: r_clean - r_noisy,
            lower,
            upper,
            eta_bar,
            e_bar,
            a_tilde,
        })
    }
}

/// Computes the sandwich on `instance` and reports whether it holds.
pub fn verify_lemma1(instance: &DiscreteInstance) -> Result<(bool, Lemma1Check)> {
    let check = instance.term1()?;
    Ok((check.holds(), check))
}

/// √(2·ln(4/δ)/N). `n` may be an effective (non-integer) count.
pub fn hoeffding_term(n: f64, delta: f64) -> Result<f64> {
    if !(n >= 1.0) || !n.is_finite() {
        return Err(Error::Domain(format!("sample size {n} must be at least 1")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta = {delta} must lie in (0, 1)")));
    }
    Ok((2.0 * (4.0 / delta).ln() / n).sqrt())
}

/// Hoeffding term on the labeled set plus P(Y* ≠ Y).
pub fn supervised_bound(n_labeled: f64, delta: f64, sharpness_clean: f64) -> Result<f64> {
    check_prob("sharpness_clean", sharpness_clean)?;
    Ok(hoeffding_term(n_labeled, delta)? + sharpness_clean)
}

/// η̄ + P(Ỹ ≠ Ỹ*) + Hoeffding term on all N examples.
pub fn ssl_bound(eta_bar: f64, sharpness_noisy: f64, n: f64, delta: f64) -> Result<f64> {
    check_prob("eta_bar", eta_bar)?;
    check_prob("sharpness_noisy", sharpness_noisy)?;
    Ok(eta_bar + sharpness_noisy + hoeffding_term(n, delta)?)
}

/// Δ(N_P, N_PL): how much the Hoeffding term shrinks going from the labeled count to the full count.
pub fn delta_term(n_p: f64, n_pl: f64, delta: f64) -> Result<f64> {
    if !(n_p > n_pl) {
        return Err(Error::Domain(format!(
            "group size {n_p} must exceed its labeled count {n_pl}"
        )));
    }
    Ok(hoeffding_term(n_pl, delta)? - hoeffding_term(n_p, delta)?)
}

/// `1 − η̄/Δ`; negative when pseudo-label noise outweighs the gain in sample size.
pub fn br_proxy(eta_bar: f64, n_p: f64, n_pl: f64, delta: f64) -> Result<f64> {
    check_prob("eta_bar", eta_bar)?;
    Ok(1.0 - eta_bar / delta_term(n_p, n_pl, delta)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBound {
    pub group: String,
    pub n: usize,
    pub n_labeled: usize,
    pub eta_bar: f64,
    /// `None` when the group has no unlabeled examples.
    pub br_proxy: Option<f64>,
}

/// Every bound quantity for one two-iteration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    /// Mean η over pseudo-labeled entries.
    pub eta_bar_prime: f64,
    /// η̄′·N_U/N.
    pub eta_bar: f64,
    /// Mean over the whole set of e(X) = 1 − reference[truth].
    pub e_bar: f64,
    /// Argmax error rate of the pseudo-labels.
    pub pseudo_label_error: f64,
    /// Held-out error of the labeled-only model, when available.
    pub baseline_holdout_error: Option<f64>,
    pub a_tilde: f64,
    pub sharpness: f64,
    pub n: usize,
    pub n_labeled: usize,
    pub hoeffding_l: f64,
    pub hoeffding_n: f64,
    pub supervised_ub: f64,
    pub ssl_ub: f64,
    pub term1_lower: f64,
    pub term1_upper: f64,
    pub delta: f64,
    pub groups: Vec<GroupBound>,
}

impl BoundsReport {
    /// `semi` is the model trained on `d_tilde`. The clean sharpness P(Y* ≠ Y) is taken as 0
    /// (confident labels).
    pub fn compute(
        d_tilde: &PseudoDataset,
        semi: &Classifier,
        delta: f64,
        baseline_holdout_error: Option<f64>,
    ) -> Result<Self> {
        let n = d_tilde.len();
        let n_labeled = d_tilde.n_given();
        if n_labeled == 0 {
            return Err(Error::Data("bounds need at least one labeled example".into()));
        }
        let k = d_tilde.num_classes();
        let stats = eta_bar_and_e_bar(d_tilde)?;
        let mut e_sum = 0.0;
        let mut sharp_sum = 0.0;
        for (i, ex) in d_tilde.examples().iter().enumerate() {
            let t = truth_of(i, ex.hidden_truth)?;
            e_sum += error_rate(&ex.reference, &SoftLabel::one_hot(k, t))?;
            if !ex.reference.is_one_hot() {
                sharp_sum += 1.0 - ex.reference.max();
            }
        }
        let e_bar = e_sum / n as f64;
        let sharpness = sharp_sum / n as f64;
        let a_tilde = noisy_accuracy(semi, d_tilde)?;
        let (term1_lower, term1_upper) = term1_bounds(a_tilde, e_bar, stats.eta_bar)?;
        let hoeffding_l = hoeffding_term(n_labeled as f64, delta)?;
        let hoeffding_n = hoeffding_term(n as f64, delta)?;
        Ok(Self {
            eta_bar_prime: stats.eta_per_pseudo,
            eta_bar: stats.eta_bar,
            e_bar,
            pseudo_label_error: stats.e_bar,
            baseline_holdout_error,
            a_tilde,
            sharpness,
            n,
            n_labeled,
            hoeffding_l,
            hoeffding_n,
            supervised_ub: supervised_bound(n_labeled as f64, delta, 0.0)?,
            ssl_ub: stats.eta_bar + sharpness + hoeffding_n,
            term1_lower,
            term1_upper,
            delta,
            groups: group_bounds(d_tilde, delta)?,
        })
    }
}

fn group_bounds(d_tilde: &PseudoDataset, delta: f64) -> Result<Vec<GroupBound>> {
    let k = d_tilde.num_classes();
    let mut names: Vec<&str> = Vec::new();
    for ex in d_tilde.examples() {
        if !names.contains(&ex.group.as_str()) {
            names.push(&ex.group);
        }
    }
    names
        .into_iter()
        .map(|g| {
            let (mut n, mut n_labeled, mut eta_sum) = (0usize, 0usize, 0.0);
            for (i, ex) in d_tilde.examples().iter().enumerate() {
                if ex.group != g {
                    continue;
                }
                n += 1;
                if ex.origin == Origin::Given {
                    n_labeled += 1;
                } else {
                    let t = truth_of(i, ex.hidden_truth)?;
                    eta_sum += tv_eta(&ex.reference, &SoftLabel::one_hot(k, t))?;
                }
            }
            let eta_bar = eta_sum / n as f64;
            let br_proxy = if n > n_labeled && n_labeled > 0 {
                Some(br_proxy(eta_bar, n as f64, n_labeled as f64, delta)?)
            } else {
                None
            };
            Ok(GroupBound {
                group: g.to_string(),
                n,
                n_labeled,
                eta_bar,
                br_proxy,
            })
        })
        .collect()
}
