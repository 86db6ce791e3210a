//! Command-line interface: quantile-based multiple contrast tests.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qmct::cli::{
    self, analyze, build_matrix, load_sim_config, parse_direction, parse_effect, parse_family_spec,
    parse_format, parse_method, resolve_grid, simulate_to, AnalysisConfig,
};
use qmct::error::Error;

#[derive(Parser)]
#[command(
    name = "qmct",
    version,
    about = "Quantile-based multiple contrast tests: two-sided, non-inferiority, and TOST \
             equivalence testing of group quantiles with permutation, bootstrap, and asymptotic \
             critical values."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test a hypothesis family on grouped CSV data.
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo scenario grid and print one result row per cell.
    Simulate(SimulateArgs),
    /// Print a contrast matrix.
    Matrices(MatricesArgs),
    /// Re-derive the frozen numerical anchors with independent oracles.
    Selftest,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// CSV file with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Column holding the group labels.
    #[arg(long = "group-col")]
    group_col: String,
    /// Column holding the numeric observations.
    #[arg(long = "value-col")]
    value_col: String,
    /// Contrast family: dunnett, tukey, grand-mean, custom.
    #[arg(long, default_value = "dunnett")]
    family: String,
    /// TOML file with `rows = [[...], ...]` for --family custom.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Group label used as the reference (column 1) for many-to-one
    /// comparisons; contrast values are group minus reference.
    #[arg(long)]
    reference: Option<String>,
    /// two-sided, noninferiority, or equivalence.
    #[arg(long, default_value = "two-sided")]
    direction: String,
    /// Scalar margin broadcast to every contrast (may be negative).
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
    /// Comma-separated per-contrast margins, overriding --margin.
    #[arg(long)]
    margins: Option<String>,
    /// Comma-separated quantile levels in (0,1).
    #[arg(long, default_value = "0.5")]
    quantiles: String,
    /// Quantile effect on top of a builder family: none or median-iqr.
    #[arg(long, default_value = "none")]
    effect: String,
    /// Negate all contrast rows and margins: use when the hypothesis is
    /// stated as H0: h'q >= margin.
    #[arg(long)]
    flip: bool,
    /// Decision procedure: perm-bonferroni, asymp-bonferroni, asymp-mctp,
    /// boot-mctp.
    #[arg(long, default_value = "perm-bonferroni")]
    method: String,
    /// Covariance estimator: kernel, bootstrap, interval.
    #[arg(long, default_value = "kernel")]
    cov: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Resampling iterations for the permutation and bootstrap methods.
    #[arg(long = "B", default_value_t = 2000)]
    b: usize,
    /// Monte Carlo draws for the asymptotic MCTP critical value.
    #[arg(long, default_value_t = 100_000)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// human, csv (17-significant-digit delimited), or json.
    #[arg(long, default_value = "human")]
    format: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML scenario grid (see README for the schema).
    #[arg(long)]
    config: PathBuf,
    /// Override n_sim = 5000 and B = 2000 as in the full-scale study.
    #[arg(long)]
    paper_scale: bool,
    /// Worker threads per cell; 0 uses all cores. The output is
    /// byte-identical for every thread count.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Write the result table to a file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MatricesArgs {
    /// dunnett, tukey, or grand-mean.
    #[arg(long)]
    family: String,
    /// Number of groups.
    #[arg(long)]
    k: usize,
    /// none or median-iqr.
    #[arg(long, default_value = "none")]
    effect: String,
    #[arg(long, default_value = "human")]
    format: String,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Analyze(args) => {
            let format = parse_format(&args.format)?;
            let margins = args
                .margins
                .as_deref()
                .map(|list| cli::parse_f64_list(list, "margin"))
                .transpose()?;
            let probs = cli::parse_f64_list(&args.quantiles, "quantile")?;
            let cfg = AnalysisConfig {
                input: args.input,
                group_col: args.group_col,
                value_col: args.value_col,
                family: parse_family_spec(&args.family, args.matrix.as_deref())?,
                reference: args.reference,
                direction: parse_direction(&args.direction)?,
                margin: args.margin,
                margins,
                probs,
                effect: parse_effect(&args.effect)?,
                flip: args.flip,
                method: parse_method(&args.method)?,
                estimator_name: args.cov,
                alpha: args.alpha,
                b_resamples: args.b,
                mc_samples: args.mc_samples,
                seed: args.seed,
            };
            let (report, stats) = analyze(&cfg)?;
            if stats.skipped_missing > 0 {
                eprintln!("warning: skipped {} empty cells", stats.skipped_missing);
            }
            print!("{}", report.render(format));
            Ok(())
        }
        Command::Simulate(args) => {
            let cfg = load_sim_config(&args.config)?;
            match args.output {
                Some(path) => {
                    let mut file = std::fs::File::create(&path)?;
                    simulate_to(&cfg, args.paper_scale, args.threads, &mut file)?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    simulate_to(&cfg, args.paper_scale, args.threads, &mut lock)?;
                    lock.flush()?;
                }
            }
            Ok(())
        }
        Command::Matrices(args) => {
            let format = parse_format(&args.format)?;
            let effect = parse_effect(&args.effect)?;
            let spec = parse_family_spec(&args.family, None)?;
            let grid = resolve_grid(&[0.5], effect)?;
            let matrix = build_matrix(&spec, args.k, effect, grid.m())?;
            print!("{}", cli::render_matrix(&matrix, format));
            Ok(())
        }
        Command::Selftest => {
            let checks = qmct::oracles::selftest();
            let mut all_ok = true;
            for check in &checks {
                let status = if check.passed { "ok  " } else { "FAIL" };
                println!("{status} {} - {}", check.name, check.detail);
                all_ok &= check.passed;
            }
            if all_ok {
                Ok(())
            } else {
                Err(Error::InvalidCovariance(
                    "selftest found numerical disagreements".into(),
                ))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
