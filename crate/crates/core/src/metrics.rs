//! Benefit ratio, equalized-benefit-ratio gap and the group statistics used to summarize them.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{accuracy, Classifier};

/// Below this |a_ideal - a_baseline| the benefit ratio is reported as undefined.
pub const BR_DENOMINATOR_EPS: f64 = 1e-6;

/// `(a_semi - a_baseline) / (a_ideal - a_baseline)`, or `None` when the denominator is
/// smaller than [`BR_DENOMINATOR_EPS`] in magnitude.
pub fn benefit_ratio(a_baseline: f64, a_semi: f64, a_ideal: f64) -> Result<Option<f64>> {
    for (name, v) in [("a_baseline", a_baseline), ("a_semi", a_semi), ("a_ideal", a_ideal)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{name} = {v} is not an accuracy")));
        }
    }
    let den = a_ideal - a_baseline;
    if den.abs() < BR_DENOMINATOR_EPS {
        return Ok(None);
    }
    Ok(Some((a_semi - a_baseline) / den))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubPopReport {
    pub group: String,
    pub a_baseline: Option<f64>,
    pub a_semi: Option<f64>,
    pub a_ideal: Option<f64>,
    pub br: Option<f64>,
    pub n_test: usize,
}

/// One report per group in `groups`. A group with no test examples gets `n_test = 0` and
/// undefined accuracies.
pub fn subgroup_report(
    baseline: &Classifier,
    semi: &Classifier,
    ideal: &Classifier,
    test: &[Example],
    groups: &[String],
) -> Result<Vec<SubPopReport>> {
    groups
        .iter()
        .map(|g| {
            let n_test = test.iter().filter(|e| &e.group == g).count();
            if n_test == 0 {
                return Ok(SubPopReport {
                    group: g.clone(),
                    a_baseline: None,
                    a_semi: None,
                    a_ideal: None,
                    br: None,
                    n_test,
                });
            }
            let a_baseline = accuracy(baseline, test, Some(g))?;
            let a_semi = accuracy(semi, test, Some(g))?;
            let a_ideal = accuracy(ideal, test, Some(g))?;
            Ok(SubPopReport {
                group: g.clone(),
                a_baseline: Some(a_baseline),
                a_semi: Some(a_semi),
                a_ideal: Some(a_ideal),
                br: benefit_ratio(a_baseline, a_semi, a_ideal)?,
                n_test,
            })
        })
        .collect()
}

/// Largest pairwise |BR(P) - BR(P')| over groups with a defined BR. Zero exactly when the
/// equalized benefit ratio criterion holds.
pub fn equalized_br_gap(reports: &[SubPopReport]) -> Result<f64> {
    let defined: Vec<f64> = reports.iter().filter_map(|r| r.br).collect();
    if defined.len() < 2 {
        return Err(Error::Undefined(format!(
            "benefit-ratio gap needs 2 defined ratios, have {}",
            defined.len()
        )));
    }
    let max = defined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = defined.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

pub fn group_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Undefined("mean of an empty list".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Sample standard deviation (n - 1 divisor).
pub fn group_std(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Undefined(format!(
            "standard deviation needs at least 2 values, have {}",
            values.len()
        )));
    }
    let mean = group_mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((ss / (values.len() - 1) as f64).sqrt())
}

/// Median; averages the two middle values for even lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Undefined("median of an empty list".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Per-run metrics document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub groups: Vec<SubPopReport>,
    pub br_mean: Option<f64>,
    pub br_std: Option<f64>,
    pub br_gap: Option<f64>,
    pub n_negative_br: usize,
    pub n_undefined_br: usize,
    /// Same comparison over the whole test set, when computed.
    #[serde(default)]
    pub overall: Option<SubPopReport>,
}

impl MetricsReport {
    /// Aggregates skip undefined ratios and count them instead.
    pub fn from_groups(groups: Vec<SubPopReport>) -> Self {
        let defined: Vec<f64> = groups.iter().filter_map(|r| r.br).collect();
        Self {
            br_mean: group_mean(&defined).ok(),
            br_std: group_std(&defined).ok(),
            br_gap: equalized_br_gap(&groups).ok(),
            n_negative_br: defined.iter().filter(|&&b| b < 0.0).count(),
            n_undefined_br: groups.len() - defined.len(),
            overall: None,
            groups,
        }
    }
}
