//! Seeded random streams, normal and binomial special functions, and the
//! five study distributions used by the simulation engine.
//!
//! Everything here is deterministic: a [`RngStream`] is a value type, and
//! the same `(seed, stream_id)` pair always reproduces the same draws.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};

/// Median of the chi-squared distribution with 3 degrees of freedom,
/// i.e. the root of its CDF at 1/2. Cross-checked by bisection in the
/// oracle suite (`selftest`).
pub const CHI_SQ3_MEDIAN: f64 = 2.365_973_884_375_337_7;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// splitmix64 finalizer, used to derive well-separated stream ids.
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    z
}

/// A counter-based random stream: a seed plus a stream id.
///
/// Streams are cheap value types. Distinct stream ids select distinct
/// ChaCha8 streams for the same seed, so replicates and resampling blocks
/// can be processed in any order (or in parallel) without affecting each
/// other's draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive a child stream. Distinct salts give (with overwhelming
    /// probability) distinct, independent streams.
    pub fn substream(&self, salt: u64) -> Self {
        RngStream {
            seed: self.seed,
            stream_id: mix64(self.stream_id ^ mix64(salt.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    /// Instantiate the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal distribution function, absolute error below 1e-12.
///
/// Uses the confluent series for `erf` on the central range and a
/// continued fraction for `erfc` in the tails.
pub fn normal_cdf(x: f64) -> f64 {
    let t = x / SQRT_2;
    if t >= 0.0 {
        1.0 - 0.5 * erfc_nonneg(t)
    } else {
        0.5 * erfc_nonneg(-t)
    }
}

/// erfc(t) for t >= 0.
fn erfc_nonneg(t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if t < 2.0 {
        1.0 - erf_confluent(t)
    } else {
        erfc_cf(t)
    }
}

/// erf via the all-positive-terms series
/// erf(t) = 2t/sqrt(pi) * exp(-t^2) * sum_n (2t^2)^n / (2n+1)!!,
/// stable for moderate t.
fn erf_confluent(t: f64) -> f64 {
    let tt2 = 2.0 * t * t;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut n = 0u32;
    while n < 300 {
        n += 1;
        term *= tt2 / (2 * n + 1) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * t * (-t * t).exp() * sum
}

/// erfc via the Lentz-evaluated continued fraction
/// erfc(t) = exp(-t^2)/sqrt(pi) * 1/(t + (1/2)/(t + 1/(t + (3/2)/(t + ...)))).
fn erfc_cf(t: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = t;
    let mut c = f;
    let mut d = 0.0;
    for n in 1..400 {
        let a = n as f64 * 0.5;
        d = t + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = t + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-t * t).exp() / std::f64::consts::PI.sqrt() / f
}

/// Quantile function of the standard normal distribution.
///
/// Rational initial guess refined by one Halley step on [`normal_cdf`];
/// satisfies |Phi(z_beta) - beta| <= 1e-10 on the open unit interval.
pub fn normal_quantile(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) || beta.is_nan() {
        return Err(Error::Domain(format!(
            "normal quantile needs 0 < beta < 1, got {beta}"
        )));
    }
    if beta == 0.5 {
        return Ok(0.0);
    }

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let mut x = if beta < P_LOW {
        let q = (-2.0 * beta.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if beta <= 1.0 - P_LOW {
        let q = beta - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - beta).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // One Halley step; skipped in the extreme tail where exp(x^2/2) would
    // overflow (the rational approximation alone is accurate there).
    if x * x < 1400.0 {
        let e = normal_cdf(x) - beta;
        let u = e * SQRT_2PI * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

/// Binomial probability mass function, computed in log space.
pub fn binomial_pmf(n: u64, p: f64, j: u64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "success probability out of range");
    if j > n {
        return 0.0;
    }
    if p == 0.0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if j == n { 1.0 } else { 0.0 };
    }
    let lp = p.ln();
    let lq = (-p).ln_1p();
    let mut lterm = n as f64 * lq;
    for i in 0..j {
        lterm += ((n - i) as f64 / (i + 1) as f64).ln() + lp - lq;
    }
    lterm.exp()
}

/// Binomial distribution function P(X <= k) for X ~ Bin(n, p).
///
/// Exact forward summation of PMF terms with log-space accumulation;
/// total on k (k < 0 gives 0, k >= n gives 1).
pub fn binomial_cdf(n: u64, p: f64, k: i64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "success probability out of range");
    if k < 0 {
        return 0.0;
    }
    if k as u64 >= n {
        return 1.0;
    }
    if p == 0.0 {
        return 1.0;
    }
    if p == 1.0 {
        return 0.0;
    }
    let k = k as u64;
    let lp = p.ln();
    let lq = (-p).ln_1p();
    let mode = (n as f64 + 1.0) * p;
    let mut lterm = n as f64 * lq;
    let mut acc = lterm.exp();
    for j in 0..k {
        lterm += ((n - j) as f64 / (j + 1) as f64).ln() + lp - lq;
        let term = lterm.exp();
        acc += term;
        // Terms decay geometrically past the mode; the remaining tail is
        // negligible once a term falls this far below the running sum.
        if (j + 1) as f64 > mode && term < acc * 1e-18 {
            break;
        }
    }
    acc.min(1.0)
}

/// The five distributions of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistKind {
    StdNormal,
    LogNormal01,
    ChiSq3,
    T2,
    T3,
}

impl DistKind {
    pub const ALL: [DistKind; 5] = [
        DistKind::StdNormal,
        DistKind::LogNormal01,
        DistKind::ChiSq3,
        DistKind::T2,
        DistKind::T3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DistKind::StdNormal => "normal",
            DistKind::LogNormal01 => "lognormal",
            DistKind::ChiSq3 => "chisq3",
            DistKind::T2 => "t2",
            DistKind::T3 => "t3",
        }
    }
}

/// A study distribution together with its median (the centering constant
/// of the simulation model).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyDistribution {
    kind: DistKind,
    median: f64,
}

impl StudyDistribution {
    pub fn new(kind: DistKind) -> Self {
        let median = match kind {
            DistKind::StdNormal | DistKind::T2 | DistKind::T3 => 0.0,
            DistKind::LogNormal01 => 1.0,
            DistKind::ChiSq3 => CHI_SQ3_MEDIAN,
        };
        StudyDistribution { kind, median }
    }

    pub fn kind(&self) -> DistKind {
        self.kind
    }

    pub fn median(&self) -> f64 {
        self.median
    }

    /// Distribution function, in closed form.
    pub fn cdf(&self, x: f64) -> f64 {
        match self.kind {
            DistKind::StdNormal => normal_cdf(x),
            DistKind::LogNormal01 => {
                if x <= 0.0 {
                    0.0
                } else {
                    normal_cdf(x.ln())
                }
            }
            DistKind::ChiSq3 => {
                if x <= 0.0 {
                    0.0
                } else {
                    // P(3/2, x/2) written through the normal CDF.
                    2.0 * normal_cdf(x.sqrt()) - 1.0
                        - (2.0 * x / std::f64::consts::PI).sqrt() * (-0.5 * x).exp()
                }
            }
            DistKind::T2 => 0.5 + x / (2.0 * (x * x + 2.0).sqrt()),
            DistKind::T3 => {
                let s = x / 3f64.sqrt();
                0.5 + (s / (1.0 + s * s) + s.atan()) / std::f64::consts::PI
            }
        }
    }

    /// Quantile function: closed form where available, otherwise bisection
    /// on the CDF.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) || p.is_nan() {
            return Err(Error::Domain(format!(
                "quantile needs 0 < p < 1, got {p}"
            )));
        }
        match self.kind {
            DistKind::StdNormal => normal_quantile(p),
            DistKind::LogNormal01 => Ok(normal_quantile(p)?.exp()),
            DistKind::ChiSq3 => Ok(bisect_cdf(|x| self.cdf(x), p, 0.0, 1e6)),
            DistKind::T2 | DistKind::T3 => Ok(bisect_cdf(|x| self.cdf(x), p, -1e12, 1e12)),
        }
    }

    /// Draw `n` i.i.d. values using the given stream.
    pub fn sample(&self, stream: RngStream, n: usize) -> Vec<f64> {
        let mut rng = stream.rng();
        self.sample_with(&mut rng, n)
    }

    /// Draw `n` i.i.d. values from an existing generator.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            DistKind::StdNormal => rng.sample(StandardNormal),
            DistKind::LogNormal01 => {
                let z: f64 = rng.sample(StandardNormal);
                z.exp()
            }
            DistKind::ChiSq3 => chisq3_draw(rng),
            DistKind::T2 => {
                let z: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(Exp1);
                // chi^2_2 is exponential with mean 2
                z / (e).sqrt().max(f64::MIN_POSITIVE)
            }
            DistKind::T3 => {
                let z: f64 = rng.sample(StandardNormal);
                let c = chisq3_draw(rng);
                z / (c / 3.0).sqrt().max(f64::MIN_POSITIVE)
            }
        }
    }
}

fn chisq3_draw<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let mut s = 0.0;
    for _ in 0..3 {
        let z: f64 = rng.sample(StandardNormal);
        s += z * z;
    }
    s
}

/// Plain bisection of a monotone CDF; internal helper for the study
/// distribution quantiles.
fn bisect_cdf(cdf: impl Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) >= p {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    0.5 * (lo + hi)
}
