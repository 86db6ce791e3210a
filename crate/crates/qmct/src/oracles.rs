//! Independent brute-force references used by the test suite and the
//! `selftest` command: exhaustive permutation enumeration on tiny
//! samples, bisection inverses of CDFs, an alternating-series erf, and
//! closed-form independent-max Gaussian quantiles.
//!
//! These deliberately take different computational routes than the main
//! implementation so that agreement is evidence, not tautology.

use crate::contrasts::{dunnett, Direction, HypothesisFamily};
use crate::covest::CovEstimator;
use crate::error::{Error, Result};
use crate::inference;
use crate::quantiles::{ceil_index, pool, GroupedSample, ProbabilityGrid};
use crate::statdist::{normal_cdf, normal_quantile, RngStream, StudyDistribution};
use crate::statdist::{binomial_cdf, DistKind, CHI_SQ3_MEDIAN};

/// Bisection inverse of a monotone CDF on a bracket. Converges to the
/// smallest point reaching `beta` (left-continuous convention), with the
/// bracket narrowed below 1e-12.
pub fn cdf_inverse_bisect(
    cdf: impl Fn(f64) -> f64,
    beta: f64,
    mut lo: f64,
    mut hi: f64,
) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::BracketViolation(format!("empty bracket [{lo}, {hi}]")));
    }
    if !(cdf(lo) < beta) || !(cdf(hi) >= beta) {
        return Err(Error::BracketViolation(format!(
            "cdf({lo}) = {}, cdf({hi}) = {} do not bracket {beta}",
            cdf(lo),
            cdf(hi)
        )));
    }
    let mut iter = 0;
    while hi - lo > 1e-12 && iter < 200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) >= beta {
            hi = mid;
        } else {
            lo = mid;
        }
        iter += 1;
    }
    Ok(hi)
}

/// erf via the alternating Maclaurin series; a different route than the
/// confluent series and continued fraction behind [`normal_cdf`].
/// Accurate to roughly 1e-12 for |x| <= 3.5.
pub fn erf_maclaurin(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        let nf = n as f64;
        term *= -x * x / nf;
        let contrib = term / (2.0 * nf + 1.0);
        sum += contrib;
        if contrib.abs() < 1e-18 * sum.abs().max(1e-10) {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

/// Closed-form quantile of the maximum of r independent standard
/// normals: solves Phi(q)^r = level (one-sided) or
/// (2 Phi(q) - 1)^r = level (two-sided) by bisection on the normal CDF.
pub fn independent_max_gaussian_quantile(r: usize, level: f64, absolute: bool) -> Result<f64> {
    if r == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain("need r >= 1 and level in (0, 1)".into()));
    }
    let g = |q: f64| {
        if absolute {
            (2.0 * normal_cdf(q) - 1.0).max(0.0).powi(r as i32)
        } else {
            normal_cdf(q).powi(r as i32)
        }
    };
    cdf_inverse_bisect(g, level, if absolute { 0.0 } else { -40.0 }, 40.0)
}

/// Every permutation statistic vector over all distinct assignments of
/// the pooled observations to groups of the original sizes.
#[derive(Debug, Clone)]
pub struct EnumeratedPermutationLaw {
    /// One full T^pi vector per assignment;
    /// length = multinomial(n; n_1, ..., n_k).
    pub statistics: Vec<Vec<f64>>,
}

fn multinomial(sizes: &[usize]) -> usize {
    let n: usize = sizes.iter().sum();
    let mut num = 1usize;
    let mut remaining = n;
    for &s in sizes {
        // C(remaining, s)
        let mut c = 1usize;
        for i in 0..s {
            c = c * (remaining - i) / (i + 1);
        }
        num *= c;
        remaining -= s;
    }
    num
}

fn for_each_assignment(
    pooled: &[f64],
    sizes: &[usize],
    visit: &mut impl FnMut(&[Vec<f64>]) -> Result<()>,
) -> Result<()> {
    fn recurse(
        pooled: &[f64],
        sizes: &[usize],
        level: usize,
        remaining: &mut Vec<usize>,
        groups: &mut Vec<Vec<f64>>,
        visit: &mut impl FnMut(&[Vec<f64>]) -> Result<()>,
    ) -> Result<()> {
        if level == sizes.len() {
            return visit(groups);
        }
        if level == sizes.len() - 1 {
            // last group takes all remaining indices
            groups.push(remaining.iter().map(|&i| pooled[i]).collect());
            let res = visit(groups);
            groups.pop();
            return res;
        }
        let take = sizes[level];
        let pool_now = remaining.clone();
        let mut chosen = vec![0usize; take];
        fn combos(
            pool_now: &[usize],
            start: usize,
            depth: usize,
            take: usize,
            chosen: &mut Vec<usize>,
            pooled: &[f64],
            sizes: &[usize],
            level: usize,
            remaining: &mut Vec<usize>,
            groups: &mut Vec<Vec<f64>>,
            visit: &mut impl FnMut(&[Vec<f64>]) -> Result<()>,
        ) -> Result<()> {
            if depth == take {
                let picked: Vec<usize> = chosen.iter().map(|&c| pool_now[c]).collect();
                groups.push(picked.iter().map(|&i| pooled[i]).collect());
                *remaining = pool_now
                    .iter()
                    .copied()
                    .filter(|i| !picked.contains(i))
                    .collect();
                recurse(pooled, sizes, level + 1, remaining, groups, visit)?;
                groups.pop();
                return Ok(());
            }
            for c in start..=(pool_now.len() - (take - depth)) {
                chosen[depth] = c;
                combos(
                    pool_now, c + 1, depth + 1, take, chosen, pooled, sizes, level, remaining,
                    groups, visit,
                )?;
            }
            Ok(())
        }
        combos(
            &pool_now, 0, 0, take, &mut chosen, pooled, sizes, level, remaining, groups, visit,
        )
    }

    let n: usize = sizes.iter().sum();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut groups = Vec::with_capacity(sizes.len());
    recurse(pooled, sizes, 0, &mut remaining, &mut groups, visit)
}

/// Enumerate the exact conditional law of the permutation statistics for
/// a tiny sample (total n <= 12).
pub fn enumerate_permutation_law(
    data: &GroupedSample,
    family: &HypothesisFamily,
    estimator: &CovEstimator,
) -> Result<EnumeratedPermutationLaw> {
    let n = data.total_n();
    if n > 12 {
        return Err(Error::Domain(format!(
            "exhaustive enumeration is limited to n <= 12, got {n}"
        )));
    }
    let pooled = pool(data);
    let sizes = data.sizes();
    let labels = data.labels().to_vec();
    let zeros = vec![0.0; family.r()];
    let mut statistics = Vec::with_capacity(multinomial(&sizes));
    for_each_assignment(&pooled, &sizes, &mut |groups| {
        let gs = GroupedSample::new_unchecked(groups.to_vec(), labels.clone());
        let values =
            inference::resample_statistic(&gs, family.grid(), family.matrix(), estimator, &zeros)?;
        statistics.push(values);
        Ok(())
    })?;
    debug_assert_eq!(statistics.len(), multinomial(&sizes));
    Ok(EnumeratedPermutationLaw { statistics })
}

/// Exact per-contrast beta-quantiles of T^pi (one-sided) or |T^pi|
/// (two-sided, per the family direction) over the uniform permutation law.
pub fn enumerate_permutation_quantile(
    data: &GroupedSample,
    family: &HypothesisFamily,
    estimator: &CovEstimator,
    beta: f64,
) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("quantile level {beta} outside (0, 1)")));
    }
    let law = enumerate_permutation_law(data, family, estimator)?;
    let absolute = family.direction() == Direction::TwoSided;
    let mut quantiles = Vec::with_capacity(family.r());
    for l in 0..family.r() {
        let mut vals: Vec<f64> = law
            .statistics
            .iter()
            .map(|v| if absolute { v[l].abs() } else { v[l] })
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        quantiles.push(vals[ceil_index(vals.len(), beta) - 1]);
    }
    Ok(quantiles)
}

/// Outcome of one selftest check.
#[derive(Debug, Clone)]
pub struct SelftestCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> SelftestCheck {
    SelftestCheck {
        name,
        passed,
        detail,
    }
}

/// The oracle suite behind the `selftest` command: re-derives the frozen
/// numerical anchors on the current platform.
pub fn selftest() -> Vec<SelftestCheck> {
    let mut out = Vec::new();

    // normal quantile against bisection of the normal CDF
    {
        let mut worst: f64 = 0.0;
        let mut round: f64 = 0.0;
        for i in 1..200 {
            let beta = i as f64 / 200.0;
            let z = normal_quantile(beta).unwrap();
            let by_bisect = cdf_inverse_bisect(normal_cdf, beta, -40.0, 40.0).unwrap();
            worst = worst.max((z - by_bisect).abs());
            round = round.max((normal_cdf(z) - beta).abs());
        }
        out.push(check(
            "normal-quantile-bisection",
            worst < 1e-8 && round < 1e-10,
            format!("max |z - bisect| = {worst:.2e}, max |Phi(z) - beta| = {round:.2e}"),
        ));
    }

    // normal CDF against the alternating-series erf
    {
        let mut worst: f64 = 0.0;
        for i in 0..=140 {
            let x = -3.5 + i as f64 * 0.05;
            let by_series = 0.5 * (1.0 + erf_maclaurin(x / std::f64::consts::SQRT_2));
            worst = worst.max((normal_cdf(x) - by_series).abs());
        }
        out.push(check(
            "normal-cdf-erf-series",
            worst < 1e-11,
            format!("max abs difference on [-3.5, 3.5] = {worst:.2e}"),
        ));
    }

    // stored chi^2_3 median against bisection of its CDF
    {
        let chi = StudyDistribution::new(DistKind::ChiSq3);
        let by_bisect = cdf_inverse_bisect(|x| chi.cdf(x), 0.5, 0.0, 100.0).unwrap();
        let diff = (by_bisect - CHI_SQ3_MEDIAN).abs();
        out.push(check(
            "chisq3-median-bisection",
            diff < 1e-9,
            format!("bisection gives {by_bisect}, stored {CHI_SQ3_MEDIAN}, diff {diff:.2e}"),
        ));
    }

    // binomial weights of the bootstrap estimator telescope to one
    {
        let mut worst: f64 = 0.0;
        for n in 2..=50usize {
            for &p in &[0.1, 0.25, 0.5, 0.75, 0.9] {
                let t = ceil_index(n, p) as i64 - 1;
                let total: f64 = (1..=n)
                    .map(|j| {
                        binomial_cdf(n as u64, (j - 1) as f64 / n as f64, t)
                            - binomial_cdf(n as u64, j as f64 / n as f64, t)
                    })
                    .sum();
                worst = worst.max((total - 1.0).abs());
            }
        }
        out.push(check(
            "binomial-weight-telescoping",
            worst < 1e-10,
            format!("max |sum - 1| over n <= 50 = {worst:.2e}"),
        ));
    }

    // tiny-sample permutation: enumeration vs Monte Carlo
    out.push(tiny_permutation_check());

    out
}

fn tiny_permutation_check() -> SelftestCheck {
    let name = "tiny-permutation-enumeration";
    let data = GroupedSample::from_groups(vec![
        vec![0.31, -1.27, 2.55],
        vec![0.94, -0.42, 1.71],
    ])
    .unwrap();
    let family = HypothesisFamily::with_scalar_margin(
        dunnett(2).unwrap(),
        0.0,
        Direction::TwoSided,
        ProbabilityGrid::median(),
    )
    .unwrap();
    let estimator = CovEstimator::Bootstrap;
    let beta = 0.95;

    let law = match enumerate_permutation_law(&data, &family, &estimator) {
        Ok(law) => law,
        Err(e) => return check(name, false, format!("enumeration failed: {e}")),
    };
    if law.statistics.len() != 20 {
        return check(
            name,
            false,
            format!("expected C(6,3) = 20 assignments, got {}", law.statistics.len()),
        );
    }
    let enum_q = enumerate_permutation_quantile(&data, &family, &estimator, beta).unwrap();

    let b = 20_000;
    let draws = match inference::permutation_draws(
        &data,
        family.grid(),
        family.matrix(),
        &estimator,
        b,
        RngStream::new(0x5e1f, 1),
    ) {
        Ok(d) => d,
        Err(e) => return check(name, false, format!("sampling failed: {e}")),
    };
    let mut mc: Vec<f64> = draws.per_contrast[0].iter().map(|t| t.abs()).collect();
    mc.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mc_q = mc[ceil_index(mc.len(), beta) - 1];

    // The sampled quantile must land on an atom adjacent (in law order)
    // to the enumerated one: tolerance is the discrete grid spacing.
    let mut atoms: Vec<f64> = law.statistics.iter().map(|v| v[0].abs()).collect();
    atoms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ceil_index(atoms.len(), beta) - 1;
    let lo = atoms[idx.saturating_sub(1)] - 1e-9;
    let hi = atoms[(idx + 1).min(atoms.len() - 1)] + 1e-9;
    let passed = mc_q >= lo && mc_q <= hi;
    check(
        name,
        passed,
        format!(
            "enumerated quantile {:.6}, Monte Carlo {:.6}, admissible [{:.6}, {:.6}]",
            enum_q[0], mc_q, lo, hi
        ),
    )
}
