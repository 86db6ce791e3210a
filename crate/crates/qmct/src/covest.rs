//! The three estimators of the scaled block-diagonal quantile covariance:
//! kernel, bootstrap, and interval-based.
//!
//! Each group contributes an m x m block; cross-group entries are zero by
//! construction because the groups are independent. Block entries carry
//! the finite-sample scale factor n / n_i.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::quantiles::{ceil_index, sorted_quantile, GroupedSample, ProbabilityGrid};
use crate::statdist::{binomial_cdf, normal_pdf, normal_quantile};

/// Which estimator produced a covariance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Kernel,
    Bootstrap,
    IntervalBased,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Kernel => "kernel",
            EstimatorKind::Bootstrap => "bootstrap",
            EstimatorKind::IntervalBased => "interval",
        }
    }
}

/// Bandwidth selection for the kernel estimator (the kernel itself is
/// fixed to the Gaussian).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// h = 0.9 * min(sd, IQR/1.34) * n^(-1/5), falling back to
    /// sd * n^(-1/5) when ties collapse the IQR.
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub bandwidth: BandwidthRule,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            bandwidth: BandwidthRule::Silverman,
        }
    }
}

/// Block-diagonal estimate of the scaled quantile covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    blocks: Vec<Vec<f64>>, // one m*m row-major block per group
    m: usize,
    estimator: EstimatorKind,
    alpha_used: Option<f64>,
}

impl CovarianceEstimate {
    /// Assemble an estimate from raw blocks; test scaffolding for the
    /// inference layer.
    #[cfg(test)]
    pub(crate) fn from_blocks(blocks: Vec<Vec<f64>>, m: usize) -> Self {
        CovarianceEstimate {
            blocks,
            m,
            estimator: EstimatorKind::Bootstrap,
            alpha_used: None,
        }
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn estimator(&self) -> EstimatorKind {
        self.estimator
    }

    pub fn alpha_used(&self) -> Option<f64> {
        self.alpha_used
    }

    /// The m x m block of group `i`, row-major.
    pub fn block(&self, i: usize) -> &[f64] {
        &self.blocks[i]
    }

    pub fn entry(&self, group: usize, a: usize, b: usize) -> f64 {
        self.blocks[group][a * self.m + b]
    }

    /// Quadratic form h' Sigma_hat h for a contrast row of length k*m.
    pub fn quad_form(&self, h: &[f64]) -> f64 {
        self.quad_cross(h, h)
    }

    /// Bilinear form ha' Sigma_hat hb, exploiting block-diagonality.
    pub fn quad_cross(&self, ha: &[f64], hb: &[f64]) -> f64 {
        debug_assert_eq!(ha.len(), self.k() * self.m);
        debug_assert_eq!(hb.len(), self.k() * self.m);
        let m = self.m;
        let mut total = 0.0;
        for (i, block) in self.blocks.iter().enumerate() {
            let ha_i = &ha[i * m..(i + 1) * m];
            let hb_i = &hb[i * m..(i + 1) * m];
            for a in 0..m {
                if ha_i[a] == 0.0 {
                    continue;
                }
                let row = &block[a * m..(a + 1) * m];
                let mut dot = 0.0;
                for b in 0..m {
                    dot += row[b] * hb_i[b];
                }
                total += ha_i[a] * dot;
            }
        }
        total
    }
}

/// Brownian-bridge covariance factor min(pa, pb) - pa*pb.
fn bridge_cov(pa: f64, pb: f64) -> f64 {
    pa.min(pb) - pa * pb
}

/// Kernel estimator: block entry
/// (n/n_i) * (min(pa,pb) - pa*pb) / (f_hat(q_ia) * f_hat(q_ib))
/// with a Gaussian kernel density estimate evaluated at the empirical
/// quantiles.
pub fn kernel_estimate(
    data: &GroupedSample,
    grid: &ProbabilityGrid,
    cfg: &KernelConfig,
) -> Result<CovarianceEstimate> {
    let n = data.total_n() as f64;
    let m = grid.m();
    let mut blocks = Vec::with_capacity(data.k());
    for (i, sorted) in data.sorted_groups().iter().enumerate() {
        let ni = sorted.len() as f64;
        let h = bandwidth(sorted, cfg).ok_or(Error::SingularDensity {
            group: i + 1,
            prob: None,
        })?;
        let mut dens = Vec::with_capacity(m);
        for &p in grid.probs() {
            let q = sorted_quantile(sorted, p);
            let f = kde_at(sorted, q, h);
            if !(f > 0.0) {
                return Err(Error::SingularDensity {
                    group: i + 1,
                    prob: Some(p),
                });
            }
            dens.push(f);
        }
        let mut block = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                block[a * m + b] =
                    n / ni * bridge_cov(grid.probs()[a], grid.probs()[b]) / (dens[a] * dens[b]);
            }
        }
        blocks.push(block);
    }
    Ok(CovarianceEstimate {
        blocks,
        m,
        estimator: EstimatorKind::Kernel,
        alpha_used: None,
    })
}

fn bandwidth(sorted: &[f64], cfg: &KernelConfig) -> Option<f64> {
    match cfg.bandwidth {
        BandwidthRule::Fixed(h) if h > 0.0 => Some(h),
        BandwidthRule::Fixed(_) => None,
        BandwidthRule::Silverman => {
            let n = sorted.len() as f64;
            let mean = sorted.iter().sum::<f64>() / n;
            let var = sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            let iqr = sorted_quantile(sorted, 0.75) - sorted_quantile(sorted, 0.25);
            let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
            let h = 0.9 * spread * n.powf(-0.2);
            if h > 0.0 {
                Some(h)
            } else {
                let fallback = sd * n.powf(-0.2);
                (fallback > 0.0).then_some(fallback)
            }
        }
    }
}

fn kde_at(sample: &[f64], x: f64, h: f64) -> f64 {
    let n = sample.len() as f64;
    sample.iter().map(|&xi| normal_pdf((x - xi) / h)).sum::<f64>() / (n * h)
}

// The bootstrap weights P_ijr and the interval-estimator constants depend
// only on (n_i, grid probability, alpha), not on the data, so resampling
// loops can reuse them across thousands of replicates. The caches are
// thread-local to keep the estimators lock-free under rayon.
thread_local! {
    static BOOT_WEIGHTS: RefCell<HashMap<(usize, usize), Rc<Vec<f64>>>> =
        RefCell::new(HashMap::new());
    static INTERVAL_CONSTANTS: RefCell<HashMap<(usize, u64, u64), (usize, usize, f64)>> =
        RefCell::new(HashMap::new());
}

/// Weights P_j = Bin(n, (j-1)/n)((-inf, t]) - Bin(n, j/n)((-inf, t]) for
/// j = 1..n; they telescope to 1.
fn bootstrap_weights(n: usize, t: i64) -> Rc<Vec<f64>> {
    BOOT_WEIGHTS.with(|cache| {
        let mut cache = cache.borrow_mut();
        if let Some(w) = cache.get(&(n, t as usize)) {
            return Rc::clone(w);
        }
        let nu = n as u64;
        let mut cdfs = Vec::with_capacity(n + 1);
        for j in 0..=n {
            cdfs.push(binomial_cdf(nu, j as f64 / n as f64, t));
        }
        let weights: Vec<f64> = (1..=n).map(|j| (cdfs[j - 1] - cdfs[j]).max(0.0)).collect();
        let rc = Rc::new(weights);
        cache.insert((n, t as usize), Rc::clone(&rc));
        rc
    })
}

/// Bootstrap estimator: sigma_i*(p_r) is the standard deviation of the
/// bootstrapped empirical quantile computed in closed form from binomial
/// weights over the order statistics.
pub fn bootstrap_estimate(
    data: &GroupedSample,
    grid: &ProbabilityGrid,
) -> Result<CovarianceEstimate> {
    let n = data.total_n() as f64;
    let m = grid.m();
    let mut blocks = Vec::with_capacity(data.k());
    for sorted in data.sorted_groups() {
        let ni = sorted.len();
        let mut sigma = Vec::with_capacity(m);
        for &p in grid.probs() {
            let t = ceil_index(ni, p) as i64 - 1;
            let q = sorted[t as usize];
            let weights = bootstrap_weights(ni, t);
            let mut s2 = 0.0;
            for (j, &x) in sorted.iter().enumerate() {
                let d = x - q;
                s2 += d * d * weights[j];
            }
            sigma.push((ni as f64 * s2).sqrt());
        }
        blocks.push(scaled_block(&sigma, grid, n / ni as f64));
    }
    Ok(CovarianceEstimate {
        blocks,
        m,
        estimator: EstimatorKind::Bootstrap,
        alpha_used: None,
    })
}

/// Interval-based estimator: sigma_i^PB(p) from the length of the
/// binomial-calibrated order-statistic confidence interval.
pub fn interval_estimate(
    data: &GroupedSample,
    grid: &ProbabilityGrid,
    alpha: f64,
) -> Result<CovarianceEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "interval estimator needs 0 < alpha < 1, got {alpha}"
        )));
    }
    let n = data.total_n() as f64;
    let m = grid.m();
    let mut blocks = Vec::with_capacity(data.k());
    for (i, sorted) in data.sorted_groups().iter().enumerate() {
        let ni = sorted.len();
        let mut sigma = Vec::with_capacity(m);
        for &p in grid.probs() {
            let (l, u, denom) = interval_constants(ni, p, alpha).ok_or(
                Error::DegenerateInterval {
                    group: i + 1,
                    prob: p,
                },
            )?;
            sigma.push((ni as f64).sqrt() * (sorted[u - 1] - sorted[l - 1]) / denom);
        }
        blocks.push(scaled_block(&sigma, grid, n / ni as f64));
    }
    Ok(CovarianceEstimate {
        blocks,
        m,
        estimator: EstimatorKind::IntervalBased,
        alpha_used: Some(alpha),
    })
}

/// (l, u, 2 z_{1-alpha*/2} + 2 n^{-1/2}) for the interval estimator, or
/// None when the interval degenerates (l >= u).
fn interval_constants(ni: usize, p: f64, alpha: f64) -> Option<(usize, usize, f64)> {
    INTERVAL_CONSTANTS.with(|cache| {
        let key = (ni, p.to_bits(), alpha.to_bits());
        if let Some(&v) = cache.borrow().get(&key) {
            return if v.0 == 0 { None } else { Some(v) };
        }
        let nf = ni as f64;
        let z = normal_quantile(1.0 - alpha / 2.0).expect("alpha checked by caller");
        let half = z * (nf * p * (1.0 - p)).sqrt();
        let l = ((nf * p - half + 1e-9).floor().max(1.0)) as usize;
        let u = ((nf * p + half + 1e-9).floor()).min(nf) as usize;
        let result = if l >= u {
            None
        } else {
            // alpha* = 1 - sum_{j=l+1}^{u-1} C(n,j) p^j (1-p)^(n-j)
            let inner = binomial_cdf(ni as u64, p, u as i64 - 1) - binomial_cdf(ni as u64, p, l as i64);
            let alpha_star = (1.0 - inner).clamp(1e-12, 1.0 - 1e-12);
            let z_star = normal_quantile(1.0 - alpha_star / 2.0).expect("clamped");
            Some((l, u, 2.0 * z_star + 2.0 / nf.sqrt()))
        };
        cache
            .borrow_mut()
            .insert(key, result.unwrap_or((0, 0, 0.0)));
        result
    })
}

/// Assemble an m x m block from per-probability scales:
/// scale * sigma(pa) * sigma(pb) * (min(pa,pb) - pa*pb)
///       / sqrt((pa - pa^2)(pb - pb^2)).
fn scaled_block(sigma: &[f64], grid: &ProbabilityGrid, scale: f64) -> Vec<f64> {
    let m = grid.m();
    let probs = grid.probs();
    let mut block = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            let pa = probs[a];
            let pb = probs[b];
            let denom = ((pa - pa * pa) * (pb - pb * pb)).sqrt();
            block[a * m + b] = scale * sigma[a] * sigma[b] * bridge_cov(pa, pb) / denom;
        }
    }
    block
}

/// Estimator selection carrying its configuration; dispatches to the
/// three concrete estimators.
#[derive(Debug, Clone, PartialEq)]
pub enum CovEstimator {
    Kernel(KernelConfig),
    Bootstrap,
    IntervalBased { alpha: f64 },
}

impl CovEstimator {
    pub fn kernel() -> Self {
        CovEstimator::Kernel(KernelConfig::default())
    }

    pub fn interval(alpha: f64) -> Self {
        CovEstimator::IntervalBased { alpha }
    }

    pub fn kind(&self) -> EstimatorKind {
        match self {
            CovEstimator::Kernel(_) => EstimatorKind::Kernel,
            CovEstimator::Bootstrap => EstimatorKind::Bootstrap,
            CovEstimator::IntervalBased { .. } => EstimatorKind::IntervalBased,
        }
    }

    pub fn estimate(
        &self,
        data: &GroupedSample,
        grid: &ProbabilityGrid,
    ) -> Result<CovarianceEstimate> {
        match self {
            CovEstimator::Kernel(cfg) => kernel_estimate(data, grid, cfg),
            CovEstimator::Bootstrap => bootstrap_estimate(data, grid),
            CovEstimator::IntervalBased { alpha } => interval_estimate(data, grid, *alpha),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statdist::{DistKind, RngStream, StudyDistribution};

    fn normal_group(n: usize, seed_stream: u64) -> Vec<f64> {
        StudyDistribution::new(DistKind::StdNormal).sample(RngStream::new(99, seed_stream), n)
    }

    #[test]
    fn kernel_rejects_constant_group() {
        let data = GroupedSample::from_groups(vec![vec![5.0; 10]]).unwrap();
        let err = kernel_estimate(&data, &ProbabilityGrid::median(), &KernelConfig::default());
        assert!(matches!(err, Err(Error::SingularDensity { group: 1, .. })));
    }

    #[test]
    fn kernel_median_variance_near_asymptotic() {
        // 0.25 / phi(0)^2 = pi/2 for a single standard normal group
        let data = GroupedSample::from_groups(vec![normal_group(10_000, 1)]).unwrap();
        let est =
            kernel_estimate(&data, &ProbabilityGrid::median(), &KernelConfig::default()).unwrap();
        let v = est.entry(0, 0, 0);
        let target = std::f64::consts::FRAC_PI_2;
        assert!((v - target).abs() < 0.1 * target, "got {v}");
    }

    #[test]
    fn bridge_numerator_example() {
        assert_eq!(bridge_cov(0.25, 0.75), 0.0625);
    }

    #[test]
    fn bootstrap_weights_example_and_telescoping() {
        // n_i = 4, p = 0.5: threshold ceil(2) - 1 = 1,
        // P_1 = 1 - Bin(4, 0.25)((-inf, 1]) = 0.26171875
        let w = bootstrap_weights(4, 1);
        assert!((w[0] - 0.26171875).abs() < 1e-12);
        for ni in 2..=50usize {
            for &p in &[0.25, 0.5, 0.75] {
                let t = ceil_index(ni, p) as i64 - 1;
                let w = bootstrap_weights(ni, t);
                let total: f64 = w.iter().sum();
                assert!((total - 1.0).abs() < 1e-10, "n={ni} p={p}: {total}");
            }
        }
    }

    #[test]
    fn bootstrap_constant_sample_gives_zero() {
        let data = GroupedSample::from_groups(vec![vec![3.0; 8], vec![1.0, 2.0, 3.0]]).unwrap();
        let est = bootstrap_estimate(&data, &ProbabilityGrid::median()).unwrap();
        assert_eq!(est.entry(0, 0, 0), 0.0);
        assert!(est.entry(1, 0, 0) > 0.0);
    }

    #[test]
    fn interval_bounds_example() {
        // n_i = 15, p = 0.5, alpha = 0.05: l = 3, u = 11
        let (l, u, _) = interval_constants(15, 0.5, 0.05).unwrap();
        assert_eq!((l, u), (3, 11));
    }

    #[test]
    fn interval_degenerates_for_tiny_groups() {
        let data = GroupedSample::from_groups(vec![vec![1.0, 2.0, 3.0]]).unwrap();
        let grid = ProbabilityGrid::new(vec![0.1]).unwrap();
        let err = interval_estimate(&data, &grid, 0.05);
        assert!(matches!(
            err,
            Err(Error::DegenerateInterval { group: 1, .. })
        ));
    }

    #[test]
    fn interval_ties_give_zero_sigma() {
        let data = GroupedSample::from_groups(vec![vec![2.0; 20]]).unwrap();
        let est = interval_estimate(&data, &ProbabilityGrid::median(), 0.05).unwrap();
        assert_eq!(est.entry(0, 0, 0), 0.0);
    }

    #[test]
    fn blocks_are_symmetric_with_nonnegative_diagonal() {
        let data = GroupedSample::from_groups(vec![normal_group(40, 2), normal_group(25, 3)])
            .unwrap();
        let grid = ProbabilityGrid::quartiles();
        for est in [
            kernel_estimate(&data, &grid, &KernelConfig::default()).unwrap(),
            bootstrap_estimate(&data, &grid).unwrap(),
            interval_estimate(&data, &grid, 0.05).unwrap(),
        ] {
            for i in 0..est.k() {
                for a in 0..est.m() {
                    assert!(est.entry(i, a, a) >= 0.0);
                    for b in 0..est.m() {
                        assert!((est.entry(i, a, b) - est.entry(i, b, a)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn scale_equivariance() {
        let base = vec![normal_group(60, 4), normal_group(45, 5)];
        let scaled: Vec<Vec<f64>> = base
            .iter()
            .map(|g| g.iter().map(|x| 3.0 * x).collect())
            .collect();
        let d1 = GroupedSample::from_groups(base).unwrap();
        let d2 = GroupedSample::from_groups(scaled).unwrap();
        let grid = ProbabilityGrid::quartiles();
        let pairs = [
            (
                kernel_estimate(&d1, &grid, &KernelConfig::default()).unwrap(),
                kernel_estimate(&d2, &grid, &KernelConfig::default()).unwrap(),
            ),
            (
                bootstrap_estimate(&d1, &grid).unwrap(),
                bootstrap_estimate(&d2, &grid).unwrap(),
            ),
            (
                interval_estimate(&d1, &grid, 0.05).unwrap(),
                interval_estimate(&d2, &grid, 0.05).unwrap(),
            ),
        ];
        for (e1, e2) in pairs {
            for i in 0..e1.k() {
                for a in 0..e1.m() {
                    for b in 0..e1.m() {
                        let lhs = e2.entry(i, a, b);
                        let rhs = 9.0 * e1.entry(i, a, b);
                        assert!(
                            (lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0),
                            "{:?}: {lhs} vs {rhs}",
                            e1.estimator()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn estimators_agree_in_order_of_magnitude() {
        let data = GroupedSample::from_groups(vec![normal_group(1000, 6)]).unwrap();
        let grid = ProbabilityGrid::median();
        let k = kernel_estimate(&data, &grid, &KernelConfig::default())
            .unwrap()
            .entry(0, 0, 0);
        let b = bootstrap_estimate(&data, &grid).unwrap().entry(0, 0, 0);
        let i = interval_estimate(&data, &grid, 0.05).unwrap().entry(0, 0, 0);
        for (x, y) in [(k, b), (k, i), (b, i)] {
            let ratio = x / y;
            assert!(ratio > 1.0 / 3.0 && ratio < 3.0, "ratio {ratio}");
        }
    }

    #[test]
    fn quad_form_matches_dense_computation() {
        let data = GroupedSample::from_groups(vec![normal_group(30, 7), normal_group(30, 8)])
            .unwrap();
        let grid = ProbabilityGrid::quartiles();
        let est = bootstrap_estimate(&data, &grid).unwrap();
        let h = vec![0.0, 1.0, 0.0, 0.0, -1.0, 0.0];
        // dense: h' Sigma h with explicit block placement
        let mut dense = 0.0;
        for i in 0..est.k() {
            for a in 0..est.m() {
                for b in 0..est.m() {
                    dense += h[i * 3 + a] * est.entry(i, a, b) * h[i * 3 + b];
                }
            }
        }
        assert!((est.quad_form(&h) - dense).abs() < 1e-12);
    }
}
