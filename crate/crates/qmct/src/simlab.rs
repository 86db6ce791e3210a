//! Monte Carlo simulation engine: location-scale data generation over the
//! five study distributions, truth classification of each local
//! hypothesis, and empirical FWER / power aggregation per scenario cell.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::contrasts::{Direction, HypothesisFamily};
use crate::covest::CovEstimator;
use crate::error::{Error, Result};
use crate::inference::{run_test, Method, TestOpts};
use crate::quantiles::GroupedSample;
use crate::statdist::{RngStream, StudyDistribution};

// Domain separation tags: replicate data streams must not depend on the
// method or estimator, so that every method sees the same generated data.
const TAG_DATA: u64 = 0x0da7a;
const TAG_RESAMPLE: u64 = 0x4e5a;

/// One simulation cell: data-generating configuration plus the procedure
/// under evaluation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub distribution: StudyDistribution,
    pub sigmas: Vec<f64>,
    pub sample_sizes: Vec<usize>,
    pub mus: Vec<f64>,
    pub family: HypothesisFamily,
    pub method: Method,
    pub estimator: CovEstimator,
    pub alpha: f64,
    pub b_resamples: usize,
    pub mc_samples: usize,
    pub n_sim: usize,
    pub seed: u64,
}

impl Scenario {
    fn validate(&self) -> Result<()> {
        let k = self.family.k();
        if self.sigmas.len() != k || self.sample_sizes.len() != k || self.mus.len() != k {
            return Err(Error::Domain(format!(
                "scenario has {} sigmas, {} sizes, {} mus for k = {k} groups",
                self.sigmas.len(),
                self.sample_sizes.len(),
                self.mus.len()
            )));
        }
        if self.sigmas.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Domain("all sigmas must be positive".into()));
        }
        if self.sample_sizes.iter().any(|&n| n < 2) {
            return Err(Error::Domain("all group sizes must be at least 2".into()));
        }
        if self.n_sim < 1 {
            return Err(Error::Domain("need at least one simulation run".into()));
        }
        Ok(())
    }

    fn opts(&self) -> TestOpts {
        TestOpts {
            alpha: self.alpha,
            b_resamples: self.b_resamples,
            mc_samples: self.mc_samples,
        }
    }
}

/// Aggregated rejection rates of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    /// Empirical FWER when every local null is true, empirical global
    /// power otherwise (the global null is then false).
    pub global_rate: f64,
    /// Rate of rejecting at least one TRUE local null; `None` when the
    /// scenario leaves no local null true.
    pub true_null_rate: Option<f64>,
    /// Per-contrast rejection rates.
    pub local_rates: Vec<f64>,
    /// Replicates that produced a decision (failures shrink this).
    pub n_effective: usize,
    /// Whether every local null is true under the scenario.
    pub all_null: bool,
    pub wall_time: Duration,
}

/// Generate the grouped data of one replicate:
/// X_is = sigma_i * (eta_is - median) + mu_i.
///
/// Deterministic in (scenario.seed, replicate) and independent of the
/// method and estimator, so all procedures can be scored on identical
/// datasets.
pub fn generate(scenario: &Scenario, replicate: usize) -> GroupedSample {
    let stream = RngStream::new(scenario.seed, TAG_DATA).substream(replicate as u64);
    let mut rng = stream.rng();
    let med = scenario.distribution.median();
    let groups: Vec<Vec<f64>> = (0..scenario.family.k())
        .map(|i| {
            scenario
                .distribution
                .sample_with(&mut rng, scenario.sample_sizes[i])
                .into_iter()
                .map(|eta| scenario.sigmas[i] * (eta - med) + scenario.mus[i])
                .collect()
        })
        .collect();
    let labels = (1..=groups.len()).map(|i| format!("g{i}")).collect();
    GroupedSample::new_unchecked(groups, labels)
}

fn resample_stream(scenario: &Scenario, replicate: usize) -> RngStream {
    RngStream::new(scenario.seed, TAG_RESAMPLE).substream(replicate as u64)
}

/// Classify each local hypothesis: `true` means the null holds under the
/// scenario's population quantiles. Supports the median grid {0.5} and
/// the quartile grid {0.25, 0.5, 0.75}.
pub fn truth_oracle(scenario: &Scenario) -> Result<Vec<bool>> {
    let grid = scenario.family.grid();
    let supported = grid.probs() == [0.5] || grid.probs() == [0.25, 0.5, 0.75];
    if !supported {
        return Err(Error::Domain(format!(
            "truth oracle supports the grids {{0.5}} and {{0.25, 0.5, 0.75}}, got {:?}",
            grid.probs()
        )));
    }
    scenario.validate()?;
    let k = scenario.family.k();
    let m = grid.m();
    let mut pop_q = Vec::with_capacity(k * m);
    for i in 0..k {
        for &p in grid.probs() {
            let eta_q = scenario.distribution.quantile(p)?;
            pop_q.push(
                scenario.sigmas[i] * (eta_q - scenario.distribution.median()) + scenario.mus[i],
            );
        }
    }
    const TOL: f64 = 1e-9;
    let mut truths = Vec::with_capacity(scenario.family.r());
    for (row, &eps) in scenario
        .family
        .matrix()
        .rows()
        .iter()
        .zip(scenario.family.margins())
    {
        let value: f64 = row.iter().zip(&pop_q).map(|(h, q)| h * q).sum();
        let is_null = match scenario.family.direction() {
            Direction::TwoSided => (value - eps).abs() <= TOL,
            Direction::NonInferiority => value - eps <= TOL,
            Direction::Equivalence => value.abs() >= eps - TOL,
        };
        truths.push(is_null);
    }
    Ok(truths)
}

struct RepOutcome {
    failed: bool,
    global: bool,
    any_true_null: bool,
    locals: Vec<bool>,
}

/// Run every replicate of a cell and aggregate rejection rates.
///
/// `parallelism` = 0 uses the global rayon pool; any other value pins a
/// dedicated pool of that many workers. Results are identical for every
/// worker count: each replicate derives its own streams and the
/// aggregation is count-based.
pub fn run_cell(scenario: &Scenario, parallelism: usize) -> Result<ScenarioResult> {
    scenario.validate()?;
    let truth = truth_oracle(scenario)?;
    let opts = scenario.opts();
    let start = Instant::now();

    let one = |rep: usize| -> Result<RepOutcome> {
        let data = generate(scenario, rep);
        match run_test(
            scenario.method,
            &data,
            &scenario.family,
            &scenario.estimator,
            &opts,
            resample_stream(scenario, rep),
        ) {
            Ok(d) => Ok(RepOutcome {
                failed: false,
                global: d.global_reject,
                any_true_null: d
                    .local_reject
                    .iter()
                    .zip(&truth)
                    .any(|(rej, null)| *rej && *null),
                locals: d.local_reject,
            }),
            Err(e) if e.is_replicate_failure() => Ok(RepOutcome {
                failed: true,
                global: false,
                any_true_null: false,
                locals: vec![false; truth.len()],
            }),
            Err(e) => Err(e),
        }
    };

    let outcomes: Vec<RepOutcome> = if parallelism == 0 {
        (0..scenario.n_sim)
            .into_par_iter()
            .map(one)
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::Domain(format!("cannot build thread pool: {e}")))?;
        pool.install(|| {
            (0..scenario.n_sim)
                .into_par_iter()
                .map(one)
                .collect::<Result<_>>()
        })?
    };

    let r = scenario.family.r();
    let mut failed = 0usize;
    let mut global = 0usize;
    let mut true_null = 0usize;
    let mut locals = vec![0usize; r];
    for o in &outcomes {
        if o.failed {
            failed += 1;
            continue;
        }
        global += o.global as usize;
        true_null += o.any_true_null as usize;
        for (c, rej) in locals.iter_mut().zip(&o.locals) {
            *c += *rej as usize;
        }
    }
    if failed * 20 > scenario.n_sim {
        return Err(Error::ResamplingFailed {
            failed,
            total: scenario.n_sim,
        });
    }
    let n_eff = scenario.n_sim - failed;
    let all_null = truth.iter().all(|&t| t);
    let has_true_null = truth.iter().any(|&t| t);
    Ok(ScenarioResult {
        global_rate: global as f64 / n_eff as f64,
        true_null_rate: has_true_null.then(|| true_null as f64 / n_eff as f64),
        local_rates: locals.iter().map(|&c| c as f64 / n_eff as f64).collect(),
        n_effective: n_eff,
        all_null,
        wall_time: start.elapsed(),
    })
}
