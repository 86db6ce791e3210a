//! Grouped samples, probability grids, and empirical quantiles.
//!
//! The empirical quantile is the left-continuous generalized inverse of
//! the empirical distribution function: the ceil(n*p)-th order statistic.
//! No interpolation is used, so permutation and bootstrap statistics are
//! exactly reproducible.

use crate::error::{Error, Result};

/// k independent samples with group labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSample {
    groups: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl GroupedSample {
    /// Build a grouped sample. Each group needs at least two finite
    /// observations. Contrast-based tests additionally require k >= 2,
    /// which is checked when a hypothesis family is applied.
    pub fn new(groups: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Domain("need at least one group".into()));
        }
        if groups.len() != labels.len() {
            return Err(Error::Domain(format!(
                "{} groups but {} labels",
                groups.len(),
                labels.len()
            )));
        }
        for (i, g) in groups.iter().enumerate() {
            if g.len() < 2 {
                return Err(Error::Domain(format!(
                    "group {} ('{}') has {} observations, need at least 2",
                    i + 1,
                    labels[i],
                    g.len()
                )));
            }
            if let Some(bad) = g.iter().find(|x| !x.is_finite()) {
                return Err(Error::Domain(format!(
                    "group {} ('{}') contains a non-finite value {bad}",
                    i + 1,
                    labels[i]
                )));
            }
        }
        Ok(GroupedSample { groups, labels })
    }

    /// Convenience constructor with labels "g1", "g2", ...
    pub fn from_groups(groups: Vec<Vec<f64>>) -> Result<Self> {
        let labels = (1..=groups.len()).map(|i| format!("g{i}")).collect();
        GroupedSample::new(groups, labels)
    }

    /// Constructor that skips validation; used by resampling loops whose
    /// shapes were already validated on the observed data.
    pub(crate) fn new_unchecked(groups: Vec<Vec<f64>>, labels: Vec<String>) -> Self {
        GroupedSample { groups, labels }
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn total_n(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn group(&self, i: usize) -> &[f64] {
        &self.groups[i]
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Groups with each sample sorted ascending.
    pub(crate) fn sorted_groups(&self) -> Vec<Vec<f64>> {
        self.groups
            .iter()
            .map(|g| {
                let mut s = g.clone();
                s.sort_by(|a, b| a.partial_cmp(b).unwrap());
                s
            })
            .collect()
    }
}

/// Strictly increasing probabilities p_1 < ... < p_m in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid {
    probs: Vec<f64>,
}

impl ProbabilityGrid {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Domain("probability grid is empty".into()));
        }
        for &p in &probs {
            if !(p > 0.0 && p < 1.0) || p.is_nan() {
                return Err(Error::Domain(format!(
                    "grid probability {p} outside (0, 1)"
                )));
            }
        }
        if probs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(
                "grid probabilities must be strictly increasing".into(),
            ));
        }
        Ok(ProbabilityGrid { probs })
    }

    /// The median-only grid {0.5}.
    pub fn median() -> Self {
        ProbabilityGrid { probs: vec![0.5] }
    }

    /// The quartile grid {0.25, 0.5, 0.75}.
    pub fn quartiles() -> Self {
        ProbabilityGrid {
            probs: vec![0.25, 0.5, 0.75],
        }
    }

    pub fn m(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Group-major vector of empirical quantiles:
/// (q_11, ..., q_1m, q_21, ..., q_km).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileVector {
    values: Vec<f64>,
}

impl QuantileVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn entry(&self, group: usize, prob_idx: usize, m: usize) -> f64 {
        self.values[group * m + prob_idx]
    }
}

/// 1-based order-statistic index ceil(n*p), with a small nudge so that
/// products like 10 * 0.1 that are mathematically integral do not get
/// pushed up by floating-point rounding.
pub(crate) fn ceil_index(n: usize, p: f64) -> usize {
    let idx = (n as f64 * p - 1e-9).ceil() as usize;
    idx.clamp(1, n)
}

/// Quantile of an already sorted sample under the ceil rule.
pub(crate) fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    sorted[ceil_index(sorted.len(), p) - 1]
}

/// Empirical quantile: smallest x with F_hat(x) >= p.
pub fn empirical_quantile(sample: &[f64], p: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Domain("empirical quantile of empty sample".into()));
    }
    if !(p > 0.0 && p < 1.0) || p.is_nan() {
        return Err(Error::Domain(format!("quantile level {p} outside (0, 1)")));
    }
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(sorted_quantile(&s, p))
}

/// Empirical quantiles of every group at every grid probability,
/// group-major, matching the contrast-matrix column convention.
pub fn quantile_vector(data: &GroupedSample, grid: &ProbabilityGrid) -> Result<QuantileVector> {
    let mut values = Vec::with_capacity(data.k() * grid.m());
    for sorted in data.sorted_groups() {
        for &p in grid.probs() {
            values.push(sorted_quantile(&sorted, p));
        }
    }
    Ok(QuantileVector { values })
}

/// Concatenation of all groups in group order; the pooled sample that
/// permutations draw from without replacement.
pub fn pool(data: &GroupedSample) -> Vec<f64> {
    let mut pooled = Vec::with_capacity(data.total_n());
    for g in data.groups() {
        pooled.extend_from_slice(g);
    }
    pooled
}
