//! Treatments for disparate benefit: per-group reweighting and collecting more labels.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, SynthConfig};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMode {
    #[default]
    None,
    /// Equalize group mass within the labeled partition.
    BalanceLabeled,
    /// Equalize group mass within the labeled and the unlabeled partition separately.
    BalanceBoth,
}

/// Per-example weights aligned with `ds.examples()`. Within each balanced partition every
/// group carries the same total weight and the weights sum to the partition size.
pub fn balance_weights(ds: &Dataset, mode: BalanceMode) -> Result<Vec<f64>> {
    let mut weights = vec![1.0; ds.len()];
    let partitions: &[bool] = match mode {
        BalanceMode::None => &[],
        BalanceMode::BalanceLabeled => &[true],
        BalanceMode::BalanceBoth => &[true, false],
    };
    for &labeled in partitions {
        let idx: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.examples()[i].is_labeled() == labeled)
            .collect();
        if idx.is_empty() {
            if labeled {
                return Err(Error::Data("cannot balance an empty labeled partition".into()));
            }
            continue;
        }
        balance_part(ds, &idx, if labeled { "labeled" } else { "unlabeled" }, &mut weights)?;
    }
    Ok(weights)
}

/// Weights for training on `ds` with every example labeled: under any balancing mode the
/// whole set is one labeled partition.
pub fn balance_weights_all_labeled(ds: &Dataset, mode: BalanceMode) -> Result<Vec<f64>> {
    let mut weights = vec![1.0; ds.len()];
    if mode != BalanceMode::None && !ds.is_empty() {
        let idx: Vec<usize> = (0..ds.len()).collect();
        balance_part(ds, &idx, "training", &mut weights)?;
    }
    Ok(weights)
}

fn balance_part(ds: &Dataset, idx: &[usize], part: &str, weights: &mut [f64]) -> Result<()> {
    let mut counts: BTreeMap<&str, usize> = ds.groups().iter().map(|g| (g.as_str(), 0)).collect();
    for &i in idx {
        *counts.entry(ds.examples()[i].group.as_str()).or_insert(0) += 1;
    }
    if let Some((g, _)) = counts.iter().find(|(_, &c)| c == 0) {
        return Err(Error::Data(format!("group {g:?} has no {part} examples to balance")));
    }
    let per_group = idx.len() as f64 / counts.len() as f64;
    for &i in idx {
        weights[i] = per_group / counts[ds.examples()[i].group.as_str()] as f64;
    }
    Ok(())
}

/// How many labeled examples to add to each group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// The same number for every group.
    PerGroup(usize),
    /// Multiply each group's labeled count by this factor (≥ 1), rounding the addition.
    Scale(f64),
    /// Explicit counts; unlisted groups get none.
    Explicit(BTreeMap<String, usize>),
}

impl Allocation {
    fn resolve(&self, ds: &Dataset) -> Result<Vec<(String, usize)>> {
        let labeled_in = |g: &str| {
            ds.examples()
                .iter()
                .filter(|e| e.is_labeled() && e.group == g)
                .count()
        };
        match self {
            Allocation::PerGroup(n) => Ok(ds.groups().iter().map(|g| (g.clone(), *n)).collect()),
            Allocation::Scale(f) => {
                if !(*f >= 1.0 && f.is_finite()) {
                    return Err(Error::Config(format!("growth factor {f} must be at least 1")));
                }
                Ok(ds
                    .groups()
                    .iter()
                    .map(|g| (g.clone(), ((f - 1.0) * labeled_in(g) as f64).round() as usize))
                    .collect())
            }
            Allocation::Explicit(map) => {
                if let Some(g) = map.keys().find(|g| !ds.groups().contains(g)) {
                    return Err(Error::Config(format!("allocation names unknown group {g:?}")));
                }
                Ok(ds
                    .groups()
                    .iter()
                    .map(|g| (g.clone(), map.get(g).copied().unwrap_or(0)))
                    .collect())
            }
        }
    }
}

/// Where fresh labeled examples come from.
#[derive(Debug, Clone, Copy)]
pub enum LabelSource<'a> {
    /// Draw new examples from the generating distribution.
    Generator(&'a SynthConfig),
    /// Take labeled examples (without replacement) from a held-out pool.
    Pool(&'a Dataset),
    /// Reveal the hidden truth of unlabeled examples already in the dataset.
    Annotate,
}

/// Adds labeled examples to `ds`. Fresh draws and pool examples are appended and existing
/// examples keep their order and values; `Annotate` labels examples in place.
pub fn grow_labeled(
    ds: &Dataset,
    source: LabelSource<'_>,
    allocation: &Allocation,
    rng: &mut Rng,
) -> Result<Dataset> {
    let plan = allocation.resolve(ds)?;
    let mut added: Vec<Example> = Vec::new();
    match source {
        LabelSource::Generator(cfg) => {
            cfg.validate()?;
            if cfg.num_classes != ds.num_classes() || cfg.dim != ds.dim() {
                return Err(Error::Shape("generator shape differs from the dataset".into()));
            }
            for (g, n) in &plan {
                if *n == 0 {
                    continue;
                }
                let spec = cfg.group(g).ok_or_else(|| {
                    Error::Config(format!("generator has no parameters for group {g:?}"))
                })?;
                let have = ds
                    .examples()
                    .iter()
                    .filter(|e| e.is_labeled() && &e.group == g)
                    .count();
                added.extend(cfg.draw(spec, *n, have, true, rng));
            }
        }
        LabelSource::Pool(pool) => {
            ds.check_compatible(pool)?;
            for (g, n) in &plan {
                if *n == 0 {
                    continue;
                }
                let mut candidates: Vec<&Example> = pool
                    .examples()
                    .iter()
                    .filter(|e| e.is_labeled() && &e.group == g)
                    .collect();
                if candidates.len() < *n {
                    return Err(Error::Data(format!(
                        "pool has {} labeled examples of group {g:?}, {n} requested",
                        candidates.len()
                    )));
                }
                candidates.shuffle(rng);
                added.extend(candidates.into_iter().take(*n).cloned());
            }
        }
        LabelSource::Annotate => return annotate(ds, &plan, rng),
    }
    let mut examples = ds.examples().to_vec();
    examples.extend(added);
    Dataset::with_groups(ds.num_classes(), ds.dim(), ds.groups().to_vec(), examples)
}

fn annotate(ds: &Dataset, plan: &[(String, usize)], rng: &mut Rng) -> Result<Dataset> {
    let mut examples = ds.examples().to_vec();
    for (g, n) in plan {
        if *n == 0 {
            continue;
        }
        let mut candidates: Vec<usize> = (0..examples.len())
            .filter(|&i| !examples[i].is_labeled() && &examples[i].group == g)
            .collect();
        if candidates.len() < *n {
            return Err(Error::Data(format!(
                "group {g:?} has {} unlabeled examples, {n} requested",
                candidates.len()
            )));
        }
        candidates.shuffle(rng);
        for &i in &candidates[..*n] {
            let truth = examples[i].hidden_truth.ok_or_else(|| {
                Error::Data(format!("example {i} has no hidden_truth to reveal"))
            })?;
            examples[i].label = Some(truth);
        }
    }
    Dataset::with_groups(ds.num_classes(), ds.dim(), ds.groups().to_vec(), examples)
}
