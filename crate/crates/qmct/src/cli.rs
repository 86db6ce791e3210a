//! Configuration, CSV ingestion, result serialization, and the drivers
//! behind the `analyze`, `simulate`, and `matrices` commands.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contrasts::{
    dunnett, grand_mean, kron_with_effect, median_iqr_effect, tukey, ContrastMatrix, Direction,
    HypothesisFamily,
};
use crate::covest::{BandwidthRule, CovEstimator, KernelConfig};
use crate::error::{Error, Result};
use crate::inference::{run_test, Method, StatFlag, TestOpts};
use crate::quantiles::{GroupedSample, ProbabilityGrid};
use crate::simlab::{run_cell, Scenario, ScenarioResult};
use crate::statdist::{DistKind, RngStream, StudyDistribution};

/// Output rendering of `analyze` and `matrices`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Human,
    Csv,
    Json,
}

pub fn parse_format(s: &str) -> Result<OutputFormat> {
    match s {
        "human" => Ok(OutputFormat::Human),
        "csv" => Ok(OutputFormat::Csv),
        "json" => Ok(OutputFormat::Json),
        other => Err(Error::Domain(format!(
            "unknown output format '{other}' (human, csv, json)"
        ))),
    }
}

pub fn parse_method(s: &str) -> Result<Method> {
    match s {
        "asymp-bonferroni" => Ok(Method::BonferroniAsymptotic),
        "perm-bonferroni" => Ok(Method::BonferroniPermutation),
        "asymp-mctp" => Ok(Method::AsymptoticMctp),
        "boot-mctp" => Ok(Method::BootstrapMctp),
        other => Err(Error::Domain(format!(
            "unknown method '{other}' (asymp-bonferroni, perm-bonferroni, asymp-mctp, boot-mctp)"
        ))),
    }
}

pub fn parse_direction(s: &str) -> Result<Direction> {
    match s {
        "two-sided" => Ok(Direction::TwoSided),
        "noninferiority" => Ok(Direction::NonInferiority),
        "equivalence" => Ok(Direction::Equivalence),
        other => Err(Error::Domain(format!(
            "unknown direction '{other}' (two-sided, noninferiority, equivalence)"
        ))),
    }
}

pub fn parse_distribution(s: &str) -> Result<DistKind> {
    DistKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| {
            Error::Domain(format!(
                "unknown distribution '{s}' (normal, lognormal, chisq3, t2, t3)"
            ))
        })
}

/// Estimator from its name, configured with the test's alpha where the
/// estimator needs one.
pub fn parse_estimator(s: &str, alpha: f64) -> Result<CovEstimator> {
    match s {
        "kernel" => Ok(CovEstimator::Kernel(KernelConfig {
            bandwidth: BandwidthRule::Silverman,
        })),
        "bootstrap" => Ok(CovEstimator::Bootstrap),
        "interval" => Ok(CovEstimator::IntervalBased { alpha }),
        other => Err(Error::Domain(format!(
            "unknown covariance estimator '{other}' (kernel, bootstrap, interval)"
        ))),
    }
}

/// Comma-separated float list from a CLI flag.
pub fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Domain(format!("cannot parse {what} entry '{t}'")))
        })
        .collect()
}

/// Which contrast family to build.
#[derive(Debug, Clone, PartialEq)]
pub enum FamilySpec {
    Dunnett,
    Tukey,
    GrandMean,
    /// Rows loaded from a TOML file (`rows = [[...], ...]`).
    Custom(Vec<Vec<f64>>),
}

pub fn parse_family_spec(name: &str, matrix_file: Option<&Path>) -> Result<FamilySpec> {
    match name {
        "dunnett" => Ok(FamilySpec::Dunnett),
        "tukey" => Ok(FamilySpec::Tukey),
        "grand-mean" => Ok(FamilySpec::GrandMean),
        "custom" => {
            let path = matrix_file.ok_or_else(|| {
                Error::Domain("--family custom requires --matrix FILE".into())
            })?;
            #[derive(Deserialize)]
            struct MatrixFile {
                rows: Vec<Vec<f64>>,
            }
            let text = std::fs::read_to_string(path)?;
            let parsed: MatrixFile = toml::from_str(&text)
                .map_err(|e| Error::Domain(format!("bad matrix file: {e}")))?;
            Ok(FamilySpec::Custom(parsed.rows))
        }
        other => Err(Error::Domain(format!(
            "unknown family '{other}' (dunnett, tukey, grand-mean, custom)"
        ))),
    }
}

/// Quantile effect applied on top of a builder family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectSpec {
    None,
    MedianIqr,
}

pub fn parse_effect(s: &str) -> Result<EffectSpec> {
    match s {
        "none" => Ok(EffectSpec::None),
        "median-iqr" => Ok(EffectSpec::MedianIqr),
        other => Err(Error::Domain(format!(
            "unknown effect '{other}' (none, median-iqr)"
        ))),
    }
}

/// Build the contrast matrix for `k` groups, applying the optional
/// Kronecker effect.
pub fn build_matrix(spec: &FamilySpec, k: usize, effect: EffectSpec, m: usize) -> Result<ContrastMatrix> {
    let base = match spec {
        FamilySpec::Dunnett => dunnett(k)?,
        FamilySpec::Tukey => tukey(k)?,
        FamilySpec::GrandMean => grand_mean(k)?,
        FamilySpec::Custom(rows) => {
            if effect != EffectSpec::None {
                return Err(Error::Domain(
                    "effects cannot be combined with a custom matrix; encode them in the rows"
                        .into(),
                ));
            }
            return ContrastMatrix::custom(rows.clone(), m);
        }
    };
    match effect {
        EffectSpec::None => Ok(base),
        EffectSpec::MedianIqr => {
            let (rows, names) = median_iqr_effect();
            kron_with_effect(&base, &rows, &names)
        }
    }
}

/// Resolve the probability grid for an effect: the median/IQR effect
/// needs the quartile grid and will upgrade the default median grid.
pub fn resolve_grid(probs: &[f64], effect: EffectSpec) -> Result<ProbabilityGrid> {
    match effect {
        EffectSpec::None => ProbabilityGrid::new(probs.to_vec()),
        EffectSpec::MedianIqr => {
            if probs == [0.5] || probs == [0.25, 0.5, 0.75] {
                Ok(ProbabilityGrid::quartiles())
            } else {
                Err(Error::Domain(
                    "effect median-iqr requires the quantile grid 0.25,0.5,0.75".into(),
                ))
            }
        }
    }
}

/// Ingestion side channel: how many cells were skipped for being empty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub skipped_missing: usize,
}

/// Read a grouped sample from a CSV file with a header row. Groups are
/// ordered by first appearance of their label; empty cells are skipped
/// and counted; non-numeric values are an error naming the line.
pub fn read_grouped_csv(
    path: &Path,
    group_col: &str,
    value_col: &str,
) -> Result<(GroupedSample, IngestStats)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?;
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' not found in {:?}", headers)))
    };
    let gi = find(group_col)?;
    let vi = find(value_col)?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    let mut stats = IngestStats::default();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("malformed CSV: {e}")))?;
        let line = record
            .position()
            .map(|p| p.line().to_string())
            .unwrap_or_else(|| "?".into());
        let label = record
            .get(gi)
            .ok_or_else(|| Error::Data(format!("line {line}: missing group cell")))?;
        let raw = record.get(vi).unwrap_or("");
        if raw.is_empty() {
            stats.skipped_missing += 1;
            continue;
        }
        let value: f64 = raw
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: '{raw}' is not a number")))?;
        let idx = match order.iter().position(|l| l == label) {
            Some(i) => i,
            None => {
                order.push(label.to_string());
                groups.push(Vec::new());
                order.len() - 1
            }
        };
        groups[idx].push(value);
    }
    if groups.is_empty() {
        return Err(Error::Data("no usable rows in input".into()));
    }
    let sample = GroupedSample::new(groups, order).map_err(|e| Error::Data(e.to_string()))?;
    Ok((sample, stats))
}

/// Everything `analyze` needs, assembled by the binary from flags.
#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub input: std::path::PathBuf,
    pub group_col: String,
    pub value_col: String,
    pub family: FamilySpec,
    pub reference: Option<String>,
    pub direction: Direction,
    /// Scalar margin broadcast over contrasts unless `margins` is given.
    pub margin: f64,
    pub margins: Option<Vec<f64>>,
    pub probs: Vec<f64>,
    pub effect: EffectSpec,
    /// Negate all contrast rows and margins: tests hypotheses stated as
    /// H0: h'q >= margin by mapping them onto the supported form.
    pub flip: bool,
    pub method: Method,
    pub estimator_name: String,
    pub alpha: f64,
    pub b_resamples: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

/// One row of the analysis report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub contrast: String,
    pub statistic: f64,
    pub critical_value: f64,
    pub adjusted_p: f64,
    pub reject: bool,
    pub flag: String,
}

/// Full result of one `analyze` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub rows: Vec<ContrastRow>,
    pub global_reject: bool,
    pub method: String,
    pub estimator: String,
    pub direction: String,
    pub alpha: f64,
    pub b_requested: Option<usize>,
    pub b_effective: Option<usize>,
    pub seed: u64,
    pub n_total: usize,
    pub k: usize,
    /// Group labels in the internal column order (the reference group,
    /// when one was named, comes first).
    pub groups: Vec<String>,
}

fn flag_name(flag: StatFlag) -> &'static str {
    match flag {
        StatFlag::Regular => "ok",
        StatFlag::ZeroOverZero => "zero-over-zero",
        StatFlag::InfiniteDeviation => "infinite",
    }
}

/// Reorder groups so the named reference label comes first.
fn reorder_reference(data: GroupedSample, reference: &str) -> Result<GroupedSample> {
    let pos = data
        .labels()
        .iter()
        .position(|l| l == reference)
        .ok_or_else(|| Error::Data(format!("reference group '{reference}' not in data")))?;
    if pos == 0 {
        return Ok(data);
    }
    let mut groups = data.groups().to_vec();
    let mut labels = data.labels().to_vec();
    let g = groups.remove(pos);
    let l = labels.remove(pos);
    groups.insert(0, g);
    labels.insert(0, l);
    GroupedSample::new(groups, labels)
}

/// The full analysis pipeline: ingest, build the family, run the chosen
/// procedure, and assemble the report.
pub fn analyze(cfg: &AnalysisConfig) -> Result<(AnalysisReport, IngestStats)> {
    let (data, stats) = read_grouped_csv(&cfg.input, &cfg.group_col, &cfg.value_col)?;
    let data = match &cfg.reference {
        Some(label) => reorder_reference(data, label)?,
        None => data,
    };
    let grid = resolve_grid(&cfg.probs, cfg.effect)?;
    let matrix = build_matrix(&cfg.family, data.k(), cfg.effect, grid.m())?;
    let margins = match &cfg.margins {
        Some(v) => v.clone(),
        None => vec![cfg.margin; matrix.r()],
    };
    let mut family = HypothesisFamily::new(matrix, margins, cfg.direction, grid)?;
    if cfg.flip {
        family = family.flipped();
    }
    let estimator = parse_estimator(&cfg.estimator_name, cfg.alpha)?;
    let opts = TestOpts {
        alpha: cfg.alpha,
        b_resamples: cfg.b_resamples,
        mc_samples: cfg.mc_samples,
    };
    let decisions = run_test(
        cfg.method,
        &data,
        &family,
        &estimator,
        &opts,
        RngStream::new(cfg.seed, 0),
    )?;
    let rows = family
        .matrix()
        .row_names()
        .iter()
        .enumerate()
        .map(|(l, name)| ContrastRow {
            contrast: name.clone(),
            statistic: decisions.statistics.values[l],
            critical_value: decisions.critical_values[l],
            adjusted_p: decisions.adjusted_p[l],
            reject: decisions.local_reject[l],
            flag: flag_name(decisions.statistics.flags[l]).into(),
        })
        .collect();
    let report = AnalysisReport {
        rows,
        global_reject: decisions.global_reject,
        method: cfg.method.name().into(),
        estimator: estimator.kind().name().into(),
        direction: cfg.direction.name().into(),
        alpha: cfg.alpha,
        b_requested: decisions.b_requested,
        b_effective: decisions.b_effective,
        seed: cfg.seed,
        n_total: data.total_n(),
        k: data.k(),
        groups: data.labels().to_vec(),
    };
    Ok((report, stats))
}

/// 17 significant digits: enough to reparse every f64 bit-exactly.
fn fmt_full(x: f64) -> String {
    format!("{:.16e}", x)
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("bad report JSON: {e}")))
    }

    /// Delimited form: `# key=value` header lines, then one CSV row per
    /// contrast with full-precision numbers.
    pub fn to_delimited(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# method={} estimator={} direction={} alpha={} seed={} n_total={} k={} \
             b_requested={} b_effective={} global_reject={}\n",
            self.method,
            self.estimator,
            self.direction,
            fmt_full(self.alpha),
            self.seed,
            self.n_total,
            self.k,
            self.b_requested.map_or("-".into(), |b| b.to_string()),
            self.b_effective.map_or("-".into(), |b| b.to_string()),
            self.global_reject
        ));
        out.push_str(&format!("# groups={}\n", self.groups.join("|")));
        out.push_str("contrast,statistic,critical_value,adjusted_p,reject,flag\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.contrast,
                fmt_full(row.statistic),
                fmt_full(row.critical_value),
                fmt_full(row.adjusted_p),
                row.reject,
                row.flag
            ));
        }
        out
    }

    /// Parse the delimited form back; inverse of [`Self::to_delimited`].
    pub fn from_delimited(text: &str) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut groups = Vec::new();
        let mut rows = Vec::new();
        let mut seen_header = false;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# groups=") {
                groups = rest.split('|').map(str::to_string).collect();
                continue;
            }
            if let Some(rest) = line.strip_prefix("# ") {
                for pair in rest.split_whitespace() {
                    if let Some((k, v)) = pair.split_once('=') {
                        meta.insert(k.to_string(), v.to_string());
                    }
                }
                continue;
            }
            if !seen_header {
                seen_header = true; // column header line
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Data(format!("bad report row: {line}")));
            }
            let num = |s: &str, what: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Data(format!("bad {what} '{s}'")))
            };
            rows.push(ContrastRow {
                contrast: fields[0].to_string(),
                statistic: num(fields[1], "statistic")?,
                critical_value: num(fields[2], "critical value")?,
                adjusted_p: num(fields[3], "adjusted p")?,
                reject: fields[4] == "true",
                flag: fields[5].to_string(),
            });
        }
        let get = |k: &str| -> Result<String> {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Data(format!("report header missing '{k}'")))
        };
        let opt_usize = |k: &str| -> Result<Option<usize>> {
            let v = get(k)?;
            if v == "-" {
                Ok(None)
            } else {
                v.parse()
                    .map(Some)
                    .map_err(|_| Error::Data(format!("bad {k} '{v}'")))
            }
        };
        Ok(AnalysisReport {
            rows,
            global_reject: get("global_reject")? == "true",
            method: get("method")?,
            estimator: get("estimator")?,
            direction: get("direction")?,
            alpha: get("alpha")?
                .parse()
                .map_err(|_| Error::Data("bad alpha".into()))?,
            b_requested: opt_usize("b_requested")?,
            b_effective: opt_usize("b_effective")?,
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::Data("bad seed".into()))?,
            n_total: get("n_total")?
                .parse()
                .map_err(|_| Error::Data("bad n_total".into()))?,
            k: get("k")?.parse().map_err(|_| Error::Data("bad k".into()))?,
            groups,
        })
    }

    pub fn to_human(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "method: {}   estimator: {}   direction: {}   alpha: {}\n",
            self.method, self.estimator, self.direction, self.alpha
        ));
        if let (Some(req), Some(eff)) = (self.b_requested, self.b_effective) {
            out.push_str(&format!("resamples: {req} requested, {eff} effective\n"));
        }
        out.push_str(&format!(
            "groups ({}): {}\n",
            self.k,
            self.groups
                .iter()
                .enumerate()
                .map(|(i, l)| format!("{}={l}", i + 1))
                .collect::<Vec<_>>()
                .join(" ")
        ));
        out.push_str(&format!(
            "{:<14} {:>12} {:>12} {:>12}  {:<7} {}\n",
            "contrast", "statistic", "critical", "adj. p", "reject", "flag"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>12.5} {:>12.5} {:>12.5}  {:<7} {}\n",
                row.contrast,
                row.statistic,
                row.critical_value,
                row.adjusted_p,
                row.reject,
                if row.flag == "ok" { "" } else { &row.flag }
            ));
        }
        out.push_str(&format!(
            "global: {} (seed {})\n",
            if self.global_reject {
                "REJECT"
            } else {
                "no rejection"
            },
            self.seed
        ));
        out
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Human => self.to_human(),
            OutputFormat::Csv => self.to_delimited(),
            OutputFormat::Json => self.to_json(),
        }
    }
}

// ---------------------------------------------------------------------
// simulate

/// TOML simulation configuration: global knobs plus one or more cell
/// blocks whose list fields are crossed into scenario cells.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_sim")]
    pub n_sim: usize,
    #[serde(default = "default_b")]
    pub b_resamples: usize,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default)]
    pub cells: Vec<CellBlock>,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_n_sim() -> usize {
    1000
}
fn default_b() -> usize {
    500
}
fn default_mc() -> usize {
    100_000
}

/// One grid block: the cross product of every list is one cell each.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellBlock {
    pub distributions: Vec<String>,
    pub families: Vec<String>,
    pub directions: Vec<String>,
    pub methods: Vec<String>,
    pub estimators: Vec<String>,
    pub sigmas: Vec<Vec<f64>>,
    pub sizes: Vec<Vec<usize>>,
    pub mus: Vec<Vec<f64>>,
    #[serde(default = "default_probs")]
    pub probs: Vec<f64>,
    #[serde(default = "default_effect")]
    pub effect: String,
    #[serde(default)]
    pub margin: f64,
}

fn default_probs() -> Vec<f64> {
    vec![0.5]
}
fn default_effect() -> String {
    "none".into()
}

pub fn load_sim_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Domain(format!("bad simulation config: {e}")))
}

/// Descriptive labels of one cell, echoed into the output table.
#[derive(Debug, Clone)]
pub struct CellMeta {
    pub distribution: String,
    pub family: String,
    pub direction: String,
    pub effect: String,
    pub probs: String,
    pub method: String,
    pub estimator: String,
    pub sigmas: String,
    pub sizes: String,
    pub mus: String,
    pub margin: f64,
}

fn join_display<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(":")
}

/// Cross-multiply every cell block into concrete scenarios, in a fixed
/// deterministic order.
pub fn expand_scenarios(
    cfg: &SimConfig,
    paper_scale: bool,
) -> Result<Vec<(CellMeta, Scenario)>> {
    let n_sim = if paper_scale { 5000 } else { cfg.n_sim };
    let b = if paper_scale { 2000 } else { cfg.b_resamples };
    let mut out = Vec::new();
    for block in &cfg.cells {
        let effect = parse_effect(&block.effect)?;
        let grid = resolve_grid(&block.probs, effect)?;
        for dist_name in &block.distributions {
            let distribution = StudyDistribution::new(parse_distribution(dist_name)?);
            for sigmas in &block.sigmas {
                for sizes in &block.sizes {
                    for mus in &block.mus {
                        let k = sizes.len();
                        if sigmas.len() != k || mus.len() != k {
                            return Err(Error::Domain(format!(
                                "cell lists disagree on k: {} sigmas, {} sizes, {} mus",
                                sigmas.len(),
                                k,
                                mus.len()
                            )));
                        }
                        for family_name in &block.families {
                            let spec = parse_family_spec(family_name, None)?;
                            let matrix = build_matrix(&spec, k, effect, grid.m())?;
                            for direction_name in &block.directions {
                                let direction = parse_direction(direction_name)?;
                                let family = HypothesisFamily::with_scalar_margin(
                                    matrix.clone(),
                                    block.margin,
                                    direction,
                                    grid.clone(),
                                )?;
                                for method_name in &block.methods {
                                    let method = parse_method(method_name)?;
                                    for estimator_name in &block.estimators {
                                        let estimator =
                                            parse_estimator(estimator_name, cfg.alpha)?;
                                        out.push((
                                            CellMeta {
                                                distribution: dist_name.clone(),
                                                family: family_name.clone(),
                                                direction: direction_name.clone(),
                                                effect: block.effect.clone(),
                                                probs: join_display(grid.probs()),
                                                method: method_name.clone(),
                                                estimator: estimator_name.clone(),
                                                sigmas: join_display(sigmas),
                                                sizes: join_display(sizes),
                                                mus: join_display(mus),
                                                margin: block.margin,
                                            },
                                            Scenario {
                                                distribution,
                                                sigmas: sigmas.clone(),
                                                sample_sizes: sizes.clone(),
                                                mus: mus.clone(),
                                                family: family.clone(),
                                                method,
                                                estimator,
                                                alpha: cfg.alpha,
                                                b_resamples: b,
                                                mc_samples: cfg.mc_samples,
                                                n_sim,
                                                seed: cfg.seed,
                                            },
                                        ));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub const SIMULATE_COLUMNS: &str = "cell,distribution,family,direction,effect,probs,method,\
estimator,sigmas,sizes,mus,margin,all_null,global_rate,true_null_rate,local_rates,n_effective";

fn write_sim_row(
    out: &mut dyn Write,
    idx: usize,
    meta: &CellMeta,
    result: &ScenarioResult,
) -> std::io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        idx,
        meta.distribution,
        meta.family,
        meta.direction,
        meta.effect,
        meta.probs,
        meta.method,
        meta.estimator,
        meta.sigmas,
        meta.sizes,
        meta.mus,
        meta.margin,
        result.all_null,
        fmt_full(result.global_rate),
        result
            .true_null_rate
            .map_or(String::from("-"), fmt_full),
        result
            .local_rates
            .iter()
            .map(|&r| fmt_full(r))
            .collect::<Vec<_>>()
            .join(":"),
        result.n_effective
    )
}

/// Run every cell of a simulation config and stream the result table.
/// The output is a pure function of (config, paper_scale); wall times go
/// to stderr only.
pub fn simulate_to(
    cfg: &SimConfig,
    paper_scale: bool,
    threads: usize,
    out: &mut dyn Write,
) -> Result<()> {
    let cells = expand_scenarios(cfg, paper_scale)?;
    let n_sim = if paper_scale { 5000 } else { cfg.n_sim };
    let b = if paper_scale { 2000 } else { cfg.b_resamples };
    writeln!(
        out,
        "# n_sim={} b_resamples={} alpha={} mc_samples={} seed={} cells={}",
        n_sim,
        b,
        cfg.alpha,
        cfg.mc_samples,
        cfg.seed,
        cells.len()
    )?;
    writeln!(out, "{SIMULATE_COLUMNS}")?;
    for (idx, (meta, scenario)) in cells.iter().enumerate() {
        let result = run_cell(scenario, threads)?;
        eprintln!(
            "cell {}/{} ({} {} {} {}) done in {:.1}s",
            idx + 1,
            cells.len(),
            meta.distribution,
            meta.method,
            meta.estimator,
            meta.direction,
            result.wall_time.as_secs_f64()
        );
        write_sim_row(out, idx, meta, &result)?;
    }
    Ok(())
}

/// Render a contrast matrix for the `matrices` command.
pub fn render_matrix(matrix: &ContrastMatrix, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct M<'a> {
                rows: &'a [Vec<f64>],
                names: &'a [String],
            }
            serde_json::to_string_pretty(&M {
                rows: matrix.rows(),
                names: matrix.row_names(),
            })
            .expect("matrix serializes")
        }
        OutputFormat::Csv => {
            let mut out = String::from("contrast,coefficients\n");
            for (name, row) in matrix.row_names().iter().zip(matrix.rows()) {
                out.push_str(&format!("{},{}\n", name, join_display(row)));
            }
            out
        }
        OutputFormat::Human => {
            let mut out = String::new();
            for (name, row) in matrix.row_names().iter().zip(matrix.rows()) {
                let coeffs = row
                    .iter()
                    .map(|c| format!("{c:>8.4}"))
                    .collect::<Vec<_>>()
                    .join(" ");
                out.push_str(&format!("{name:<14} {coeffs}\n"));
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;
    use std::path::PathBuf;

    fn temp_file(name: &str, contents: &str) -> PathBuf {
        let path = std::env::temp_dir().join(format!("qmct-test-{}-{name}", std::process::id()));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn csv_ingestion_orders_by_first_appearance() {
        let path = temp_file(
            "order.csv",
            "year,value\n2007,1.5\n2006,2.0\n2007,1.25\n2006,3.0\n2008,0.5\n2008,0.25\n",
        );
        let (data, stats) = read_grouped_csv(&path, "year", "value").unwrap();
        assert_eq!(data.labels(), &["2007", "2006", "2008"]);
        assert_eq!(data.group(0), &[1.5, 1.25]);
        assert_eq!(stats.skipped_missing, 0);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn csv_ingestion_is_row_order_invariant() {
        let a = temp_file("rows-a.csv", "g,v\nx,1\nx,2\ny,3\ny,4\n");
        let b = temp_file("rows-b.csv", "g,v\nx,1\ny,3\nx,2\ny,4\n");
        let (da, _) = read_grouped_csv(&a, "g", "v").unwrap();
        let (db, _) = read_grouped_csv(&b, "g", "v").unwrap();
        assert_eq!(da, db);
        std::fs::remove_file(&a).ok();
        std::fs::remove_file(&b).ok();
    }

    #[test]
    fn csv_ingestion_errors() {
        let bad = temp_file("bad.csv", "g,v\nx,1\nx,oops\ny,3\ny,4\n");
        let err = read_grouped_csv(&bad, "g", "v").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        std::fs::remove_file(&bad).ok();

        let missing = temp_file("missing.csv", "g,v\nx,1\nx,\nx,2\ny,3\ny,4\n");
        let (data, stats) = read_grouped_csv(&missing, "g", "v").unwrap();
        assert_eq!(stats.skipped_missing, 1);
        assert_eq!(data.group(0).len(), 2);
        std::fs::remove_file(&missing).ok();

        let nocol = temp_file("nocol.csv", "g,v\nx,1\n");
        assert!(read_grouped_csv(&nocol, "nope", "v").is_err());
        std::fs::remove_file(&nocol).ok();
    }

    #[test]
    fn single_group_files_fail_downstream_not_at_ingest() {
        let path = temp_file("single.csv", "g,v\nx,1\nx,2\nx,3\n");
        let (data, _) = read_grouped_csv(&path, "g", "v").unwrap();
        assert_eq!(data.k(), 1);
        let cfg = AnalysisConfig {
            input: path.clone(),
            group_col: "g".into(),
            value_col: "v".into(),
            family: FamilySpec::Dunnett,
            reference: None,
            direction: Direction::TwoSided,
            margin: 0.0,
            margins: None,
            probs: vec![0.5],
            effect: EffectSpec::None,
            flip: false,
            method: Method::BonferroniAsymptotic,
            estimator_name: "bootstrap".into(),
            alpha: 0.05,
            b_resamples: 100,
            mc_samples: 10_000,
            seed: 7,
        };
        let err = analyze(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
        std::fs::remove_file(&path).ok();
    }

    fn small_analysis_config(path: PathBuf) -> AnalysisConfig {
        AnalysisConfig {
            input: path,
            group_col: "g".into(),
            value_col: "v".into(),
            family: FamilySpec::Dunnett,
            reference: None,
            direction: Direction::TwoSided,
            margin: 0.0,
            margins: None,
            probs: vec![0.5],
            effect: EffectSpec::None,
            flip: false,
            method: Method::BonferroniPermutation,
            estimator_name: "kernel".into(),
            alpha: 0.05,
            b_resamples: 200,
            mc_samples: 10_000,
            seed: 11,
        }
    }

    fn three_group_csv(name: &str) -> PathBuf {
        let mut body = String::from("g,v\n");
        let dist = StudyDistribution::new(DistKind::StdNormal);
        for (i, label) in ["a", "b", "c"].iter().enumerate() {
            let xs = dist.sample(RngStream::new(5150, i as u64), 12);
            for (j, x) in xs.iter().enumerate() {
                let shift = if i == 2 { 4.0 } else { 0.0 };
                body.push_str(&format!("{label},{}\n", x + shift + j as f64 * 0.0));
            }
        }
        temp_file(name, &body)
    }

    #[test]
    fn analyze_end_to_end_and_reference_reorder() {
        let path = three_group_csv("an.csv");
        let mut cfg = small_analysis_config(path.clone());
        cfg.reference = Some("b".into());
        let (report, _) = analyze(&cfg).unwrap();
        assert_eq!(report.groups[0], "b");
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.k, 3);
        assert_eq!(
            report.global_reject,
            report.rows.iter().any(|r| r.reject)
        );
        // group c is shifted by 4: its contrast must reject
        assert!(report.rows.iter().any(|r| r.reject));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn analyze_alpha_near_one_rejects_everything() {
        let path = three_group_csv("alpha1.csv");
        let mut cfg = small_analysis_config(path.clone());
        cfg.alpha = 0.999;
        let (report, _) = analyze(&cfg).unwrap();
        assert!(report.rows.iter().all(|r| r.reject));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn report_round_trips_through_delimited_and_json() {
        let path = three_group_csv("rt.csv");
        let cfg = small_analysis_config(path.clone());
        let (report, _) = analyze(&cfg).unwrap();

        let parsed = AnalysisReport::from_delimited(&report.to_delimited()).unwrap();
        assert_eq!(parsed, report);

        let parsed = AnalysisReport::from_json(&report.to_json()).unwrap();
        assert_eq!(parsed, report);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn custom_matrix_and_flip() {
        let matrix_path = temp_file("mat.toml", "rows = [[1.0, -1.0, 0.0]]\n");
        let data_path = three_group_csv("flip.csv");
        let mut cfg = small_analysis_config(data_path.clone());
        cfg.family = parse_family_spec("custom", Some(&matrix_path)).unwrap();
        cfg.direction = Direction::NonInferiority;
        cfg.margin = 2.0;
        cfg.method = Method::BonferroniAsymptotic;
        let (plain, _) = analyze(&cfg).unwrap();
        cfg.flip = true;
        let (flipped, _) = analyze(&cfg).unwrap();
        // flip negates rows and margins: statistics change accordingly
        assert!(plain.rows[0].statistic.is_finite());
        assert!(flipped.rows[0].statistic.is_finite());
        assert_ne!(plain.rows[0].statistic, flipped.rows[0].statistic);
        std::fs::remove_file(&matrix_path).ok();
        std::fs::remove_file(&data_path).ok();
    }

    #[test]
    fn effect_grid_resolution() {
        assert!(resolve_grid(&[0.5], EffectSpec::MedianIqr).is_ok());
        assert!(resolve_grid(&[0.25, 0.5, 0.75], EffectSpec::MedianIqr).is_ok());
        assert!(resolve_grid(&[0.3, 0.6], EffectSpec::MedianIqr).is_err());
        assert_eq!(
            resolve_grid(&[0.5], EffectSpec::MedianIqr).unwrap().m(),
            3
        );
    }

    const TINY_SIM: &str = r#"
seed = 99
alpha = 0.05
n_sim = 24
b_resamples = 60

[[cells]]
distributions = ["normal", "t3"]
families = ["dunnett"]
directions = ["two-sided"]
methods = ["asymp-bonferroni"]
estimators = ["bootstrap"]
sigmas = [[1.0, 1.0]]
sizes = [[12, 12]]
mus = [[0.0, 0.0], [0.0, 2.0]]
"#;

    #[test]
    fn simulate_is_thread_count_invariant_and_row_counted() {
        let cfg: SimConfig = toml::from_str(TINY_SIM).unwrap();
        let mut out1 = Vec::new();
        simulate_to(&cfg, false, 1, &mut out1).unwrap();
        let mut out2 = Vec::new();
        simulate_to(&cfg, false, 3, &mut out2).unwrap();
        assert_eq!(out1, out2, "output must not depend on the worker count");
        let text = String::from_utf8(out1).unwrap();
        assert_eq!(text.lines().count(), 2 + 4, "header + columns + 4 cells");
        assert!(text.starts_with("# n_sim=24 b_resamples=60"));
    }

    #[test]
    fn simulate_empty_grid_gives_empty_table() {
        let cfg: SimConfig = toml::from_str("seed = 1\n").unwrap();
        let mut out = Vec::new();
        simulate_to(&cfg, false, 1, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn paper_scale_echoes_in_header() {
        let cfg: SimConfig = toml::from_str("seed = 1\n").unwrap();
        let mut out = Vec::new();
        simulate_to(&cfg, true, 1, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("# n_sim=5000 b_resamples=2000"), "{text}");
    }

    #[test]
    fn sim_config_rejects_unknown_fields() {
        assert!(toml::from_str::<SimConfig>("seed = 1\nbogus = 2\n").is_err());
    }

    #[test]
    fn matrix_rendering() {
        let m = dunnett(3).unwrap();
        let human = render_matrix(&m, OutputFormat::Human);
        assert!(human.contains("2-1"));
        let csv = render_matrix(&m, OutputFormat::Csv);
        assert!(csv.contains("2-1,-1:1:0"));
        let json = render_matrix(&m, OutputFormat::Json);
        assert!(json.contains("\"rows\""));
    }
}
