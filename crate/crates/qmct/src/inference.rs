//! Studentized contrast statistics and the four decision procedures:
//! Bonferroni-adjusted asymptotic and permutation tests, and the
//! asymptotic and groupwise-bootstrap multiple contrast test procedures
//! (MCTPs). Equivalence hypotheses run as two one-sided tests.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::contrasts::{ContrastMatrix, Direction, HypothesisFamily};
use crate::covest::{CovEstimator, CovarianceEstimate};
use crate::critvals::{self, CorrelationModel};
use crate::error::{Error, Result};
use crate::quantiles::{ceil_index, pool, quantile_vector, GroupedSample, ProbabilityGrid};
use crate::statdist::{normal_cdf, normal_quantile, RngStream};

/// The four decision procedures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    BonferroniAsymptotic,
    BonferroniPermutation,
    AsymptoticMctp,
    BootstrapMctp,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::BonferroniAsymptotic,
        Method::BonferroniPermutation,
        Method::AsymptoticMctp,
        Method::BootstrapMctp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::BonferroniAsymptotic => "asymp-bonferroni",
            Method::BonferroniPermutation => "perm-bonferroni",
            Method::AsymptoticMctp => "asymp-mctp",
            Method::BootstrapMctp => "boot-mctp",
        }
    }
}

/// How a statistic entry was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatFlag {
    Regular,
    /// Numerator and denominator both vanished; the statistic is set to 0.
    ZeroOverZero,
    /// Denominator vanished with nonzero numerator; the statistic is a
    /// signed infinity.
    InfiniteDeviation,
}

/// The vector of studentized statistics T_n(h_l, eps_l).
#[derive(Debug, Clone, PartialEq)]
pub struct TestStatistics {
    pub values: Vec<f64>,
    pub flags: Vec<StatFlag>,
    /// Total sample size n entering the sqrt(n) scaling.
    pub n_total: usize,
    /// The covariance estimate the statistics were studentized with.
    pub covariance: CovarianceEstimate,
}

/// Per-contrast and global decisions of one procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionSet {
    pub method: Method,
    pub direction: Direction,
    pub local_reject: Vec<bool>,
    pub global_reject: bool,
    pub statistics: TestStatistics,
    /// Thresholds on the comparison scale (|T| for two-sided tests):
    /// per-contrast for the permutation test, one shared value replicated
    /// for the other procedures.
    pub critical_values: Vec<f64>,
    pub adjusted_p: Vec<f64>,
    /// Requested and effective resampling iterations, when resampling was
    /// involved. Failed replicates shrink the effective count.
    pub b_requested: Option<usize>,
    pub b_effective: Option<usize>,
}

/// Scalar knobs of the procedures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOpts {
    pub alpha: f64,
    pub b_resamples: usize,
    pub mc_samples: usize,
}

impl Default for TestOpts {
    fn default() -> Self {
        TestOpts {
            alpha: 0.05,
            b_resamples: 2000,
            mc_samples: 100_000,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "significance level {alpha} outside (0, 1)"
        )));
    }
    Ok(())
}

fn check_dims(
    data: &GroupedSample,
    family: &HypothesisFamily,
    cov: Option<&CovarianceEstimate>,
) -> Result<()> {
    if data.k() < 2 {
        return Err(Error::Domain(format!(
            "contrast tests need at least 2 groups, got {}",
            data.k()
        )));
    }
    let expect = data.k() * family.grid().m();
    if family.matrix().cols() != expect {
        return Err(Error::Domain(format!(
            "contrast matrix has {} columns but k*m = {expect}",
            family.matrix().cols()
        )));
    }
    if let Some(cov) = cov {
        if cov.k() != data.k() || cov.m() != family.grid().m() {
            return Err(Error::Domain(
                "covariance estimate does not match data and grid".into(),
            ));
        }
    }
    Ok(())
}

/// Studentized statistics for a quantile vector against per-contrast
/// offsets: sqrt(n) (h_l'q - c_l) / sqrt(h_l' Sigma h_l), with the
/// conventions 0/0 := 0 and nonzero/0 := signed infinity.
fn studentize(
    qvec: &[f64],
    offsets: &[f64],
    matrix: &ContrastMatrix,
    cov: &CovarianceEstimate,
    n_total: usize,
) -> (Vec<f64>, Vec<StatFlag>) {
    let sqrt_n = (n_total as f64).sqrt();
    let mut values = Vec::with_capacity(matrix.r());
    let mut flags = Vec::with_capacity(matrix.r());
    for (l, row) in matrix.rows().iter().enumerate() {
        let mut num = -offsets[l];
        let mut mag = offsets[l].abs();
        for (h, q) in row.iter().zip(qvec) {
            num += h * q;
            mag += (h * q).abs();
        }
        let s2 = cov.quad_form(row);
        if s2 > 0.0 {
            values.push(sqrt_n * num / s2.sqrt());
            flags.push(StatFlag::Regular);
        } else if num.abs() <= mag * 1e-12 {
            values.push(0.0);
            flags.push(StatFlag::ZeroOverZero);
        } else {
            values.push(num.signum() * f64::INFINITY);
            flags.push(StatFlag::InfiniteDeviation);
        }
    }
    (values, flags)
}

/// The observed test statistics T_n(h_l, eps_l) of a hypothesis family.
pub fn test_statistics(
    data: &GroupedSample,
    family: &HypothesisFamily,
    cov: &CovarianceEstimate,
) -> Result<TestStatistics> {
    check_dims(data, family, Some(cov))?;
    let qvec = quantile_vector(data, family.grid())?;
    let (values, flags) = studentize(
        qvec.values(),
        family.margins(),
        family.matrix(),
        cov,
        data.total_n(),
    );
    Ok(TestStatistics {
        values,
        flags,
        n_total: data.total_n(),
        covariance: cov.clone(),
    })
}

/// Comparison-scale value of a statistic: |T| for two-sided tests, T
/// itself for one-sided tests.
fn comparison_scale(values: &[f64], direction: Direction) -> Vec<f64> {
    match direction {
        Direction::TwoSided => values.iter().map(|t| t.abs()).collect(),
        _ => values.to_vec(),
    }
}

fn assemble(
    method: Method,
    family: &HypothesisFamily,
    stats: TestStatistics,
    criticals: Vec<f64>,
    adjusted_p: Vec<f64>,
    b_requested: Option<usize>,
    b_effective: Option<usize>,
) -> DecisionSet {
    let obs = comparison_scale(&stats.values, family.direction());
    let local_reject: Vec<bool> = obs.iter().zip(&criticals).map(|(t, c)| t > c).collect();
    let global_reject = local_reject.iter().any(|&b| b);
    DecisionSet {
        method,
        direction: family.direction(),
        local_reject,
        global_reject,
        statistics: stats,
        critical_values: criticals,
        adjusted_p,
        b_requested,
        b_effective,
    }
}

/// The global decision recomputed through the maximum-statistic rule
/// (max_l of T_l over its critical value, with 0/0 := 0) instead of
/// "any local rejected". The two agree on every call; this form exists
/// so the equivalence can be asserted.
pub fn global_by_max_rule(decisions: &DecisionSet) -> bool {
    let obs = comparison_scale(&decisions.statistics.values, decisions.direction);
    let mut best = f64::NEG_INFINITY;
    for (&t, &c) in obs.iter().zip(&decisions.critical_values) {
        let ratio = if t == 0.0 && c == 0.0 {
            0.0
        } else if c > 0.0 {
            t / c
        } else if c == 0.0 {
            t.signum() * f64::INFINITY
        } else {
            // negative critical value: fall back to the direct comparison
            if t > c {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        };
        best = best.max(ratio);
    }
    best > 1.0
}

/// Bonferroni-adjusted asymptotic test: each contrast at local level
/// alpha/r against standard normal quantiles.
pub fn bonferroni_asymptotic(
    stats: TestStatistics,
    family: &HypothesisFamily,
    alpha: f64,
) -> Result<DecisionSet> {
    check_alpha(alpha)?;
    let r = family.r() as f64;
    let crit = match family.direction() {
        Direction::TwoSided => normal_quantile(1.0 - alpha / (2.0 * r))?,
        Direction::NonInferiority => normal_quantile(1.0 - alpha / r)?,
        Direction::Equivalence => {
            return Err(Error::Domain(
                "equivalence testing runs through tost_equivalence".into(),
            ))
        }
    };
    let adjusted_p = stats
        .values
        .iter()
        .map(|&t| {
            let raw = match family.direction() {
                Direction::TwoSided => 2.0 * (1.0 - normal_cdf(t.abs())),
                _ => 1.0 - normal_cdf(t),
            };
            (r * raw).min(1.0)
        })
        .collect();
    let criticals = vec![crit; family.r()];
    Ok(assemble(
        Method::BonferroniAsymptotic,
        family,
        stats,
        criticals,
        adjusted_p,
        None,
        None,
    ))
}

/// Per-contrast resampled statistics plus the number of replicates whose
/// covariance estimation failed.
pub(crate) struct ResampleDraws {
    pub per_contrast: Vec<Vec<f64>>,
    pub failed: usize,
}

/// Statistic vector of one resampled dataset: offsets are zero for
/// permutations and h'q_hat for the groupwise bootstrap.
pub(crate) fn resample_statistic(
    data: &GroupedSample,
    grid: &ProbabilityGrid,
    matrix: &ContrastMatrix,
    estimator: &CovEstimator,
    offsets: &[f64],
) -> Result<Vec<f64>> {
    let cov = estimator.estimate(data, grid)?;
    let qvec = quantile_vector(data, grid)?;
    let (values, _) = studentize(qvec.values(), offsets, matrix, &cov, data.total_n());
    Ok(values)
}

/// Draw `b` permutation statistic vectors T^pi by reassigning the pooled
/// sample to groups of the original sizes without replacement.
pub(crate) fn permutation_draws(
    data: &GroupedSample,
    grid: &ProbabilityGrid,
    matrix: &ContrastMatrix,
    estimator: &CovEstimator,
    b: usize,
    stream: RngStream,
) -> Result<ResampleDraws> {
    let pooled = pool(data);
    let sizes = data.sizes();
    let labels = data.labels().to_vec();
    let zeros = vec![0.0; matrix.r()];
    let mut per_contrast = vec![Vec::with_capacity(b); matrix.r()];
    let mut failed = 0usize;
    let mut perm = pooled.clone();
    for bi in 0..b {
        let mut rng = stream.substream(bi as u64).rng();
        perm.copy_from_slice(&pooled);
        perm.shuffle(&mut rng);
        let mut groups = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &ni in &sizes {
            groups.push(perm[start..start + ni].to_vec());
            start += ni;
        }
        let gs = GroupedSample::new_unchecked(groups, labels.clone());
        match resample_statistic(&gs, grid, matrix, estimator, &zeros) {
            Ok(values) => {
                for (l, v) in values.into_iter().enumerate() {
                    per_contrast[l].push(v);
                }
            }
            Err(e) if e.is_replicate_failure() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(ResampleDraws {
        per_contrast,
        failed,
    })
}

fn check_failures(failed: usize, b: usize) -> Result<usize> {
    if failed * 20 > b {
        return Err(Error::ResamplingFailed { failed, total: b });
    }
    Ok(b - failed)
}

/// Ceil-rule empirical quantile of resampled values (sorts a copy).
fn resample_quantile(values: &[f64], level: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted[ceil_index(sorted.len(), level) - 1]
}

/// Exceedance count-based p-value (1 + #{draws >= observed}) / (B + 1).
fn exceedance_p(draws: &[f64], observed: f64) -> f64 {
    let count = draws.iter().filter(|&&v| v >= observed).count();
    (count + 1) as f64 / (draws.len() + 1) as f64
}

/// Bonferroni-adjusted permutation test: per-contrast critical values are
/// empirical (1 - alpha/r)-quantiles of the permutation statistics, with
/// the same covariance-estimator kind applied to each permuted dataset.
pub fn bonferroni_permutation(
    data: &GroupedSample,
    family: &HypothesisFamily,
    estimator: &CovEstimator,
    alpha: f64,
    b: usize,
    stream: RngStream,
) -> Result<DecisionSet> {
    check_alpha(alpha)?;
    check_dims(data, family, None)?;
    if b < 1 {
        return Err(Error::Domain("need at least one permutation".into()));
    }
    if family.direction() == Direction::Equivalence {
        return Err(Error::Domain(
            "equivalence testing runs through tost_equivalence".into(),
        ));
    }
    let cov = estimator.estimate(data, family.grid())?;
    let stats = test_statistics(data, family, &cov)?;
    let draws = permutation_draws(
        data,
        family.grid(),
        family.matrix(),
        estimator,
        b,
        stream,
    )?;
    let b_eff = check_failures(draws.failed, b)?;
    let r = family.r();
    let level = 1.0 - alpha / r as f64;
    let obs = comparison_scale(&stats.values, family.direction());
    let mut criticals = Vec::with_capacity(r);
    let mut adjusted_p = Vec::with_capacity(r);
    for l in 0..r {
        let scaled: Vec<f64> = match family.direction() {
            Direction::TwoSided => draws.per_contrast[l].iter().map(|t| t.abs()).collect(),
            _ => draws.per_contrast[l].clone(),
        };
        criticals.push(resample_quantile(&scaled, level));
        adjusted_p.push((r as f64 * exceedance_p(&scaled, obs[l])).min(1.0));
    }
    Ok(assemble(
        Method::BonferroniPermutation,
        family,
        stats,
        criticals,
        adjusted_p,
        Some(b),
        Some(b_eff),
    ))
}

/// Asymptotic MCTP: one shared critical value from the Monte Carlo
/// distribution of the maximum of a Gaussian vector with the estimated
/// contrast correlation matrix D_hat H Sigma_hat H' D_hat.
pub fn asymptotic_mctp(
    stats: TestStatistics,
    family: &HypothesisFamily,
    cov: &CovarianceEstimate,
    alpha: f64,
    mc_samples: usize,
    stream: RngStream,
) -> Result<DecisionSet> {
    check_alpha(alpha)?;
    if family.direction() == Direction::Equivalence {
        return Err(Error::Domain(
            "equivalence testing runs through tost_equivalence".into(),
        ));
    }
    let matrix = family.matrix();
    let r = matrix.r();
    let mut scale = Vec::with_capacity(r);
    for (l, row) in matrix.rows().iter().enumerate() {
        let s2 = cov.quad_form(row);
        if s2 <= 0.0 {
            return Err(Error::SingularContrast { row: l + 1 });
        }
        scale.push(s2.sqrt());
    }
    let mut corr = vec![vec![0.0; r]; r];
    for i in 0..r {
        corr[i][i] = 1.0;
        for j in (i + 1)..r {
            let rho = cov.quad_cross(matrix.row(i), matrix.row(j)) / (scale[i] * scale[j]);
            corr[i][j] = rho;
            corr[j][i] = rho;
        }
    }
    let model = CorrelationModel::new(corr)?;
    let absolute = family.direction() == Direction::TwoSided;
    let maxima = critvals::sample_max(&model, absolute, mc_samples, stream)?;
    let crit = maxima[ceil_index(maxima.len(), 1.0 - alpha) - 1];
    let obs = comparison_scale(&stats.values, family.direction());
    let adjusted_p = obs
        .iter()
        .map(|&t| {
            // maxima are sorted: count of draws >= t by binary search
            let idx = maxima.partition_point(|&v| v < t);
            (maxima.len() - idx + 1) as f64 / (maxima.len() + 1) as f64
        })
        .collect();
    Ok(assemble(
        Method::AsymptoticMctp,
        family,
        stats,
        vec![crit; r],
        adjusted_p,
        None,
        None,
    ))
}

/// Groupwise bootstrap MCTP: each group is resampled with replacement at
/// its own size; the shared critical value is the empirical
/// (1 - alpha)-quantile of max_l T*_l (or max_l |T*_l|), with statistics
/// centered at the observed quantile vector.
pub fn bootstrap_mctp(
    data: &GroupedSample,
    family: &HypothesisFamily,
    estimator: &CovEstimator,
    alpha: f64,
    b: usize,
    stream: RngStream,
) -> Result<DecisionSet> {
    check_alpha(alpha)?;
    check_dims(data, family, None)?;
    if b < 1 {
        return Err(Error::Domain("need at least one bootstrap iteration".into()));
    }
    if family.direction() == Direction::Equivalence {
        return Err(Error::Domain(
            "equivalence testing runs through tost_equivalence".into(),
        ));
    }
    let cov = estimator.estimate(data, family.grid())?;
    let stats = test_statistics(data, family, &cov)?;
    let matrix = family.matrix();
    let grid = family.grid();
    let qhat = quantile_vector(data, grid)?;
    // offsets h_l' q_hat center the bootstrap statistics at the estimate
    let offsets: Vec<f64> = matrix
        .rows()
        .iter()
        .map(|row| row.iter().zip(qhat.values()).map(|(h, q)| h * q).sum())
        .collect();
    let labels = data.labels().to_vec();
    let absolute = family.direction() == Direction::TwoSided;
    let mut maxima = Vec::with_capacity(b);
    let mut failed = 0usize;
    for bi in 0..b {
        let mut rng = stream.substream(bi as u64).rng();
        let groups: Vec<Vec<f64>> = data
            .groups()
            .iter()
            .map(|g| {
                (0..g.len())
                    .map(|_| g[rng.random_range(0..g.len())])
                    .collect()
            })
            .collect();
        let gs = GroupedSample::new_unchecked(groups, labels.clone());
        match resample_statistic(&gs, grid, matrix, estimator, &offsets) {
            Ok(values) => {
                let best = values
                    .iter()
                    .map(|&t| if absolute { t.abs() } else { t })
                    .fold(f64::NEG_INFINITY, f64::max);
                maxima.push(best);
            }
            Err(e) if e.is_replicate_failure() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    let b_eff = check_failures(failed, b)?;
    let crit = resample_quantile(&maxima, 1.0 - alpha);
    let obs = comparison_scale(&stats.values, family.direction());
    let adjusted_p = obs.iter().map(|&t| exceedance_p(&maxima, t)).collect();
    Ok(assemble(
        Method::BootstrapMctp,
        family,
        stats,
        vec![crit; family.r()],
        adjusted_p,
        Some(b),
        Some(b_eff),
    ))
}

fn run_directional(
    method: Method,
    data: &GroupedSample,
    family: &HypothesisFamily,
    estimator: &CovEstimator,
    opts: &TestOpts,
    stream: RngStream,
) -> Result<DecisionSet> {
    match method {
        Method::BonferroniAsymptotic => {
            let cov = estimator.estimate(data, family.grid())?;
            let stats = test_statistics(data, family, &cov)?;
            bonferroni_asymptotic(stats, family, opts.alpha)
        }
        Method::BonferroniPermutation => {
            bonferroni_permutation(data, family, estimator, opts.alpha, opts.b_resamples, stream)
        }
        Method::AsymptoticMctp => {
            let cov = estimator.estimate(data, family.grid())?;
            let stats = test_statistics(data, family, &cov)?;
            asymptotic_mctp(stats, family, &cov, opts.alpha, opts.mc_samples, stream)
        }
        Method::BootstrapMctp => {
            bootstrap_mctp(data, family, estimator, opts.alpha, opts.b_resamples, stream)
        }
    }
}

/// TOST equivalence: two one-sided non-inferiority tests at level
/// alpha/2, one on (H, -delta) and one on (-H, -delta), sharing the same
/// resampling draws. A contrast is declared equivalent when both reject.
pub fn tost_equivalence(
    data: &GroupedSample,
    family: &HypothesisFamily,
    method: Method,
    estimator: &CovEstimator,
    opts: &TestOpts,
    stream: RngStream,
) -> Result<DecisionSet> {
    if family.direction() != Direction::Equivalence {
        return Err(Error::Domain(
            "tost_equivalence needs an equivalence family".into(),
        ));
    }
    if family.margins().iter().any(|&d| d <= 0.0) {
        return Err(Error::Domain(
            "equivalence margins must be strictly positive".into(),
        ));
    }
    let margins_low: Vec<f64> = family.margins().iter().map(|d| -d).collect();
    let lower = family.reshaped(
        family.matrix().clone(),
        margins_low.clone(),
        Direction::NonInferiority,
    );
    let upper = family.reshaped(
        family.matrix().negated(),
        margins_low,
        Direction::NonInferiority,
    );
    let half = TestOpts {
        alpha: opts.alpha / 2.0,
        ..*opts
    };
    let d_low = run_directional(method, data, &lower, estimator, &half, stream)?;
    let d_high = run_directional(method, data, &upper, estimator, &half, stream)?;
    let local_reject: Vec<bool> = d_low
        .local_reject
        .iter()
        .zip(&d_high.local_reject)
        .map(|(a, b)| *a && *b)
        .collect();
    let global_reject = local_reject.iter().any(|&b| b);
    let adjusted_p: Vec<f64> = d_low
        .adjusted_p
        .iter()
        .zip(&d_high.adjusted_p)
        .map(|(a, b)| (2.0 * a.max(*b)).min(1.0))
        .collect();
    let b_effective = match (d_low.b_effective, d_high.b_effective) {
        (Some(a), Some(b)) => Some(a.min(b)),
        _ => None,
    };
    Ok(DecisionSet {
        method,
        direction: Direction::Equivalence,
        local_reject,
        global_reject,
        statistics: d_low.statistics,
        critical_values: d_low.critical_values,
        adjusted_p,
        b_requested: d_low.b_requested,
        b_effective,
    })
}

/// Dispatch a hypothesis family to the chosen procedure; equivalence
/// families run through the TOST decomposition.
pub fn run_test(
    method: Method,
    data: &GroupedSample,
    family: &HypothesisFamily,
    estimator: &CovEstimator,
    opts: &TestOpts,
    stream: RngStream,
) -> Result<DecisionSet> {
    match family.direction() {
        Direction::Equivalence => tost_equivalence(data, family, method, estimator, opts, stream),
        _ => run_directional(method, data, family, estimator, opts, stream),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrasts::{dunnett, grand_mean, tukey};
    use crate::covest::CovarianceEstimate;
    use crate::statdist::{DistKind, StudyDistribution};

    fn median_family(
        matrix: ContrastMatrix,
        margin: f64,
        direction: Direction,
    ) -> HypothesisFamily {
        HypothesisFamily::with_scalar_margin(matrix, margin, direction, ProbabilityGrid::median())
            .unwrap()
    }

    fn normal_data(sizes: &[usize], seed: u64) -> GroupedSample {
        let dist = StudyDistribution::new(DistKind::StdNormal);
        let groups = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| dist.sample(RngStream::new(seed, i as u64 + 1), n))
            .collect();
        GroupedSample::from_groups(groups).unwrap()
    }

    #[test]
    fn statistic_direct_arithmetic() {
        // q_hat = (0, 1), eps = 0, n = 20, h'Sigma h = 4 => T = sqrt(20)/2
        let data =
            GroupedSample::from_groups(vec![vec![0.0; 10], vec![1.0; 10]]).unwrap();
        let cov = CovarianceEstimate::from_blocks(vec![vec![2.0], vec![2.0]], 1);
        let family = median_family(dunnett(2).unwrap(), 0.0, Direction::TwoSided);
        let stats = test_statistics(&data, &family, &cov).unwrap();
        assert!((stats.values[0] - 20f64.sqrt() / 2.0).abs() < 1e-12);

        // margin centered at the observed contrast gives T = 0
        let centered = median_family(dunnett(2).unwrap(), 1.0, Direction::TwoSided);
        let stats = test_statistics(&data, &centered, &cov).unwrap();
        assert_eq!(stats.values[0], 0.0);
        assert_eq!(stats.flags[0], StatFlag::Regular);
    }

    #[test]
    fn statistic_zero_over_zero_and_infinity() {
        let data =
            GroupedSample::from_groups(vec![vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]]).unwrap();
        let cov = CovarianceEstimate::from_blocks(vec![vec![0.0], vec![0.0]], 1);
        let family = median_family(dunnett(2).unwrap(), 0.0, Direction::TwoSided);
        let stats = test_statistics(&data, &family, &cov).unwrap();
        assert_eq!(stats.values[0], 0.0);
        assert_eq!(stats.flags[0], StatFlag::ZeroOverZero);

        let shifted =
            GroupedSample::from_groups(vec![vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0]]).unwrap();
        let stats = test_statistics(&shifted, &family, &cov).unwrap();
        assert_eq!(stats.values[0], f64::INFINITY);
        assert_eq!(stats.flags[0], StatFlag::InfiniteDeviation);
    }

    #[test]
    fn statistic_scale_and_shift_invariance() {
        let data = normal_data(&[20, 25, 20], 11);
        let family = median_family(tukey(3).unwrap(), 0.0, Direction::TwoSided);
        let est = CovEstimator::Bootstrap;
        let base = test_statistics(&data, &family, &est.estimate(&data, family.grid()).unwrap())
            .unwrap();

        let doubled = GroupedSample::from_groups(
            data.groups()
                .iter()
                .map(|g| g.iter().map(|x| 2.0 * x).collect())
                .collect(),
        )
        .unwrap();
        let scaled =
            test_statistics(&doubled, &family, &est.estimate(&doubled, family.grid()).unwrap())
                .unwrap();
        let shifted_groups = GroupedSample::from_groups(
            data.groups()
                .iter()
                .map(|g| g.iter().map(|x| x + 17.5).collect())
                .collect(),
        )
        .unwrap();
        let shifted = test_statistics(
            &shifted_groups,
            &family,
            &est.estimate(&shifted_groups, family.grid()).unwrap(),
        )
        .unwrap();
        for l in 0..family.r() {
            assert!((scaled.values[l] - base.values[l]).abs() < 1e-9);
            assert!((shifted.values[l] - base.values[l]).abs() < 1e-9);
        }
    }

    #[test]
    fn bonferroni_asymptotic_criticals_and_trivial_cases() {
        let data = normal_data(&[15, 15, 15, 15], 3);
        let family = median_family(dunnett(4).unwrap(), 0.0, Direction::TwoSided);
        let est = CovEstimator::Bootstrap;
        let cov = est.estimate(&data, family.grid()).unwrap();
        let stats = test_statistics(&data, &family, &cov).unwrap();
        let d = bonferroni_asymptotic(stats, &family, 0.05).unwrap();
        // two-sided, r = 3: z_{1 - 0.05/6}
        assert!((d.critical_values[0] - 2.39398).abs() < 1e-4);
        assert_eq!(d.global_reject, d.local_reject.iter().any(|&b| b));

        // r = 1 reduces to a plain z-test threshold
        let fam1 = median_family(dunnett(2).unwrap(), 0.0, Direction::NonInferiority);
        let data2 = normal_data(&[20, 20], 4);
        let cov2 = est.estimate(&data2, fam1.grid()).unwrap();
        let stats2 = test_statistics(&data2, &fam1, &cov2).unwrap();
        let d2 = bonferroni_asymptotic(stats2, &fam1, 0.05).unwrap();
        assert!((d2.critical_values[0] - normal_quantile(0.95).unwrap()).abs() < 1e-12);

        // all-zero statistics reject nothing
        let flat = GroupedSample::from_groups(vec![vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]])
            .unwrap();
        let famf = median_family(dunnett(2).unwrap(), 0.0, Direction::TwoSided);
        let covf = est.estimate(&flat, famf.grid()).unwrap();
        let statsf = test_statistics(&flat, &famf, &covf).unwrap();
        let df = bonferroni_asymptotic(statsf, &famf, 0.05).unwrap();
        assert!(!df.global_reject);
    }

    #[test]
    fn permutation_on_degenerate_data_rejects_nothing() {
        let data = GroupedSample::from_groups(vec![vec![4.0; 6], vec![4.0; 6]]).unwrap();
        let family = median_family(dunnett(2).unwrap(), 0.0, Direction::TwoSided);
        let d = bonferroni_permutation(
            &data,
            &family,
            &CovEstimator::Bootstrap,
            0.05,
            200,
            RngStream::new(1, 1),
        )
        .unwrap();
        assert_eq!(d.statistics.values[0], 0.0);
        assert_eq!(d.critical_values[0], 0.0);
        assert!(!d.global_reject);
        assert_eq!(d.b_effective, Some(200));
    }

    #[test]
    fn permutation_is_deterministic_and_validates_b() {
        let data = normal_data(&[10, 12], 5);
        let family = median_family(dunnett(2).unwrap(), 0.0, Direction::TwoSided);
        let est = CovEstimator::kernel();
        let a = bonferroni_permutation(&data, &family, &est, 0.05, 100, RngStream::new(2, 9))
            .unwrap();
        let b = bonferroni_permutation(&data, &family, &est, 0.05, 100, RngStream::new(2, 9))
            .unwrap();
        assert_eq!(a, b);
        assert!(
            bonferroni_permutation(&data, &family, &est, 0.05, 0, RngStream::new(2, 9)).is_err()
        );
    }

    #[test]
    fn mctp_r1_matches_z_quantiles() {
        let data = normal_data(&[30, 30], 6);
        let est = CovEstimator::Bootstrap;
        for (direction, level) in [
            (Direction::NonInferiority, 0.95),
            (Direction::TwoSided, 0.975),
        ] {
            let family = median_family(dunnett(2).unwrap(), 0.0, direction);
            let cov = est.estimate(&data, family.grid()).unwrap();
            let stats = test_statistics(&data, &family, &cov).unwrap();
            let d =
                asymptotic_mctp(stats, &family, &cov, 0.05, 400_000, RngStream::new(3, 1))
                    .unwrap();
            let z = normal_quantile(level).unwrap();
            assert!(
                (d.critical_values[0] - z).abs() < 0.01,
                "{direction:?}: {} vs {z}",
                d.critical_values[0]
            );
        }
    }

    #[test]
    fn mctp_correlation_is_unit_diagonal_even_for_rank_deficient_families() {
        // Tukey(4) has r = 6 contrasts of rank 3; must not error.
        let data = normal_data(&[15, 15, 15, 15], 7);
        let family = median_family(tukey(4).unwrap(), 0.0, Direction::TwoSided);
        let est = CovEstimator::kernel();
        let cov = est.estimate(&data, family.grid()).unwrap();
        let stats = test_statistics(&data, &family, &cov).unwrap();
        let d = asymptotic_mctp(stats, &family, &cov, 0.05, 20_000, RngStream::new(3, 2)).unwrap();
        assert!(d.critical_values[0].is_finite());
    }

    #[test]
    fn bootstrap_mctp_centering_degenerate_case() {
        // two-point groups with ties: every resample equals the original
        let data = GroupedSample::from_groups(vec![vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let family = median_family(dunnett(2).unwrap(), 0.0, Direction::TwoSided);
        let d = bootstrap_mctp(
            &data,
            &family,
            &CovEstimator::Bootstrap,
            0.05,
            50,
            RngStream::new(4, 1),
        )
        .unwrap();
        assert_eq!(d.critical_values[0], 0.0);
        // observed contrast is 1 with zero variance: infinite deviation
        assert_eq!(d.statistics.flags[0], StatFlag::InfiniteDeviation);
        assert!(d.local_reject[0]);
    }

    #[test]
    fn bootstrap_mctp_row_order_exchangeable() {
        let data = normal_data(&[12, 14, 16], 8);
        let est = CovEstimator::Bootstrap;
        let stream = RngStream::new(4, 2);
        let fam = median_family(tukey(3).unwrap(), 0.0, Direction::TwoSided);
        let d = bootstrap_mctp(&data, &fam, &est, 0.05, 300, stream).unwrap();

        // reverse the contrast rows
        let rev_rows: Vec<Vec<f64>> = fam.matrix().rows().iter().rev().cloned().collect();
        let rev = median_family(
            ContrastMatrix::custom(rev_rows, 1).unwrap(),
            0.0,
            Direction::TwoSided,
        );
        let d_rev = bootstrap_mctp(&data, &rev, &est, 0.05, 300, stream).unwrap();
        assert_eq!(d.critical_values[0], d_rev.critical_values[0]);
        let mut swapped = d_rev.local_reject.clone();
        swapped.reverse();
        assert_eq!(d.local_reject, swapped);
    }

    #[test]
    fn tost_margin_limits() {
        let data = normal_data(&[15, 15], 9);
        let matrix = dunnett(2).unwrap();
        let grid = ProbabilityGrid::median();
        let est = CovEstimator::Bootstrap;
        let opts = TestOpts {
            b_resamples: 300,
            ..TestOpts::default()
        };

        let wide = HypothesisFamily::with_scalar_margin(
            matrix.clone(),
            100.0,
            Direction::Equivalence,
            grid.clone(),
        )
        .unwrap();
        let d = run_test(
            Method::BonferroniAsymptotic,
            &data,
            &wide,
            &est,
            &opts,
            RngStream::new(5, 1),
        )
        .unwrap();
        assert!(d.local_reject.iter().all(|&b| b), "huge delta must reject");

        let narrow = HypothesisFamily::with_scalar_margin(
            matrix.clone(),
            1e-9,
            Direction::Equivalence,
            grid.clone(),
        )
        .unwrap();
        for method in Method::ALL {
            let d = run_test(method, &data, &narrow, &est, &opts, RngStream::new(5, 2)).unwrap();
            assert!(
                !d.global_reject,
                "{method:?} rejected with vanishing delta"
            );
        }

        let zero = HypothesisFamily::with_scalar_margin(
            matrix,
            0.0,
            Direction::Equivalence,
            grid,
        );
        assert!(zero.is_err());
    }

    #[test]
    fn tost_negation_symmetry() {
        let data = normal_data(&[18, 18], 10);
        let negated = GroupedSample::from_groups(
            data.groups()
                .iter()
                .map(|g| g.iter().map(|x| -x).collect())
                .collect(),
        )
        .unwrap();
        let family = HypothesisFamily::with_scalar_margin(
            dunnett(2).unwrap(),
            0.4,
            Direction::Equivalence,
            ProbabilityGrid::median(),
        )
        .unwrap();
        let opts = TestOpts {
            b_resamples: 400,
            ..TestOpts::default()
        };
        let d1 = run_test(
            Method::BonferroniPermutation,
            &data,
            &family,
            &CovEstimator::Bootstrap,
            &opts,
            RngStream::new(5, 3),
        )
        .unwrap();
        let d2 = run_test(
            Method::BonferroniPermutation,
            &negated,
            &family,
            &CovEstimator::Bootstrap,
            &opts,
            RngStream::new(5, 3),
        )
        .unwrap();
        assert_eq!(d1.local_reject, d2.local_reject);
    }

    #[test]
    fn decisions_monotone_in_alpha_with_shared_draws() {
        let data = normal_data(&[15, 15, 15], 12);
        let stream = RngStream::new(6, 1);
        for direction in [Direction::TwoSided, Direction::NonInferiority] {
            let family = median_family(grand_mean(3).unwrap(), 0.0, direction);
            for method in Method::ALL {
                let mut prev: Option<Vec<bool>> = None;
                for &alpha in &[0.01, 0.05, 0.1, 0.2] {
                    let opts = TestOpts {
                        alpha,
                        b_resamples: 400,
                        mc_samples: 20_000,
                    };
                    let d = run_test(method, &data, &family, &CovEstimator::Bootstrap, &opts, stream)
                        .unwrap();
                    if let Some(prev) = &prev {
                        for (was, now) in prev.iter().zip(&d.local_reject) {
                            assert!(!(*was && !*now), "{method:?} lost a rejection as alpha grew");
                        }
                    }
                    prev = Some(d.local_reject);
                }
            }
        }
    }

    #[test]
    fn global_rule_equivalence() {
        let datasets = [
            normal_data(&[15, 15, 15, 15], 13),
            normal_data(&[10, 10, 20, 20], 14),
            GroupedSample::from_groups(vec![vec![5.0; 8], vec![5.0; 8]]).unwrap(),
        ];
        for data in &datasets {
            let k = data.k();
            let degenerate = data.group(0).windows(2).all(|w| w[0] == w[1]);
            for direction in [Direction::TwoSided, Direction::NonInferiority] {
                let family = median_family(dunnett(k).unwrap(), 0.0, direction);
                for method in Method::ALL {
                    let opts = TestOpts {
                        b_resamples: 200,
                        mc_samples: 10_000,
                        ..TestOpts::default()
                    };
                    let result = run_test(
                        method,
                        data,
                        &family,
                        &CovEstimator::Bootstrap,
                        &opts,
                        RngStream::new(7, 1),
                    );
                    if method == Method::AsymptoticMctp && degenerate {
                        // zero contrast variance: no correlation matrix exists
                        assert!(matches!(result, Err(Error::SingularContrast { row: 1 })));
                        continue;
                    }
                    let d = result.unwrap();
                    assert_eq!(
                        d.global_reject,
                        global_by_max_rule(&d),
                        "{method:?} {direction:?}"
                    );
                    assert_eq!(d.global_reject, d.local_reject.iter().any(|&b| b));
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_domain_error() {
        let data = normal_data(&[10, 10], 15);
        let family = median_family(dunnett(3).unwrap(), 0.0, Direction::TwoSided);
        let est = CovEstimator::Bootstrap;
        let cov = est.estimate(&data, family.grid()).unwrap();
        assert!(test_statistics(&data, &family, &cov).is_err());
    }
}
