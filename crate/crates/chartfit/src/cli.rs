//! Command-line pipeline: simulate, aggregate, fit, and posterior
//! predictive checks, with reproducible configuration and machine-readable
//! outputs.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 sampler failure, 4 convergence gate failure.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::aggregate::{aggregate_tracks, read_tracks_csv, summarize, write_tracks_csv};
use crate::analysis::{posterior_predictive, ppc_compare, ppc_histogram, write_histogram_csv};
use crate::error::{Error, Result};
use crate::fit::{fit, FitDocument, FitOptions, ModelKind};
use crate::ingest::{date_span_days, parse_chart_csv, write_chart_csv};
use crate::model::{Coefficients, RegressionDataset};
use crate::nuts::SamplerConfig;
use crate::synth::{generate_daily_chart, generate_tracks, GeneratorSpec};

/// R-hat threshold for the fit convergence gate.
const GATE_MAX_RHAT: f64 = 1.05;

#[derive(Debug, Parser)]
#[command(
    name = "chartfit",
    about = "Bayesian Negative Binomial regression of music-chart persistence",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Aggregate daily chart CSV into track-level records.
    Aggregate(AggregateArgs),
    /// Fit the regression model to a track-level CSV.
    Fit(FitArgs),
    /// Posterior predictive checks for a completed fit.
    Ppc(PpcArgs),
    /// Generate synthetic daily-chart and track-level data.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// Daily chart CSV ("-" reads standard input).
    #[arg(long)]
    input: String,
    /// Track-level output CSV.
    #[arg(long)]
    output: PathBuf,
    /// Treat any malformed row as a fatal error.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Track-level CSV (from `aggregate` or `simulate`).
    #[arg(long)]
    input: PathBuf,
    /// Output path for the fit document (JSON).
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::NegativeBinomial)]
    model: ModelArg,
    #[arg(long, default_value_t = 2)]
    chains: usize,
    /// Warmup iterations per chain.
    #[arg(long, default_value_t = 2000)]
    warmup: usize,
    /// Post-warmup draws per chain.
    #[arg(long, default_value_t = 2000)]
    draws: usize,
    #[arg(long, default_value_t = 0.9)]
    target_accept: f64,
    #[arg(long, default_value_t = 10)]
    max_tree_depth: usize,
    #[arg(long, env = "CHARTFIT_SEED", default_value_t = 0)]
    seed: u64,
    /// HDI mass for the parameter table.
    #[arg(long, default_value_t = 0.94)]
    hdi_prob: f64,
    /// Reference log-streams for the expected-days contrast
    /// (default: dataset median).
    #[arg(long)]
    ref_log_streams: Option<f64>,
    /// Skip the convergence gate (exit 4 when any R-hat exceeds 1.05).
    #[arg(long)]
    no_gate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ModelArg {
    NegativeBinomial,
    Poisson,
}

impl From<ModelArg> for ModelKind {
    fn from(value: ModelArg) -> Self {
        match value {
            ModelArg::NegativeBinomial => ModelKind::NegativeBinomial,
            ModelArg::Poisson => ModelKind::Poisson,
        }
    }
}

#[derive(Debug, Args)]
struct PpcArgs {
    /// Fit document produced by `fit`.
    #[arg(long)]
    fit: PathBuf,
    /// The track-level CSV the model was fitted to.
    #[arg(long)]
    input: PathBuf,
    /// Output path for the check report (JSON).
    #[arg(long)]
    output: PathBuf,
    /// Optional histogram export for external plotting.
    #[arg(long)]
    hist_output: Option<PathBuf>,
    /// Number of replicate datasets.
    #[arg(long, default_value_t = 500)]
    n_rep: usize,
    #[arg(long, env = "CHARTFIT_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Daily chart CSV output path.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Track-level CSV output path.
    #[arg(long)]
    tracks_output: Option<PathBuf>,
    #[arg(long, default_value_t = 1335)]
    n_tracks: usize,
    #[arg(long, env = "CHARTFIT_SEED", default_value_t = 0)]
    seed: u64,
    /// Chart year for the daily expansion.
    #[arg(long, default_value_t = 2024)]
    year: i32,
    #[arg(long, default_value_t = -8.126)]
    beta0: f64,
    #[arg(long, default_value_t = -0.074)]
    beta1: f64,
    #[arg(long, default_value_t = 0.859)]
    beta2: f64,
    #[arg(long, default_value_t = 5.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.456)]
    collab_prob: f64,
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::UnknownParameter(_) => 1,
        Error::Sampler(_) => 3,
        _ => 2,
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Aggregate(args) => cmd_aggregate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Ppc(args) => cmd_ppc(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn open_input(path: &str) -> Result<Box<dyn Read>> {
    if path == "-" {
        Ok(Box::new(std::io::stdin()))
    } else {
        Ok(Box::new(BufReader::new(File::open(path)?)))
    }
}

fn create_output(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_aggregate(args: AggregateArgs) -> Result<i32> {
    let reader = open_input(&args.input)?;
    let (rows, report) = parse_chart_csv(reader, args.strict)?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (records, warnings) = aggregate_tracks(&rows);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    write_tracks_csv(create_output(&args.output)?, &records)?;

    let stats = summarize(&records)?;
    println!(
        "rows accepted {}  rejected {}  unique tracks {}  dates {}..{} ({} days)",
        report.n_rows,
        report.n_rejected_rows,
        report.n_unique_tracks,
        report.date_min.map(|d| d.to_string()).unwrap_or_default(),
        report.date_max.map(|d| d.to_string()).unwrap_or_default(),
        date_span_days(&report)?,
    );
    println!("variable         mean         sd        min        max");
    for (name, v) in [
        ("days_on_chart", stats.days_on_chart),
        ("total_streams", stats.total_streams),
        ("log_streams", stats.log_streams),
    ] {
        println!(
            "{name:<14} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            v.mean, v.sd, v.min, v.max
        );
    }
    println!(
        "collab rate {:.3}  n_tracks {}",
        stats.collab_rate, stats.n_tracks
    );
    Ok(0)
}

fn load_dataset(path: &Path) -> Result<(RegressionDataset, Vec<bool>)> {
    let records = read_tracks_csv(BufReader::new(File::open(path)?))?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let collab: Vec<bool> = records.iter().map(|r| r.is_collab).collect();
    Ok((RegressionDataset::from_records(&records)?, collab))
}

fn cmd_fit(args: FitArgs) -> Result<i32> {
    let (data, _) = load_dataset(&args.input)?;
    let options = FitOptions {
        model: args.model.into(),
        sampler: SamplerConfig {
            chains: args.chains,
            warmup_draws: args.warmup,
            post_warmup_draws: args.draws,
            target_accept: args.target_accept,
            max_tree_depth: args.max_tree_depth,
            seed: args.seed,
        },
        hdi_prob: args.hdi_prob,
        interval_prob: 0.95,
        ref_log_streams: args.ref_log_streams,
    };
    let result = fit(&data, &options)?;
    let doc = &result.document;
    doc.write_json(create_output(&args.output)?)?;

    print!(
        "{}",
        crate::diagnostics::render_summary_table(&doc.parameters, args.hdi_prob)
    );
    let d = &doc.derived;
    println!(
        "rate ratio exp(beta1): median {:.4}, {:.0}% interval [{:.4}, {:.4}]",
        d.rate_ratio.median,
        d.rate_ratio.interval_prob * 100.0,
        d.rate_ratio.low,
        d.rate_ratio.high
    );
    println!("P(beta1 > 0) = {:.4}", d.prob_beta1_positive);
    println!(
        "expected days at log-streams {:.3}: solo {:.1} [{:.1}, {:.1}], collab {:.1} [{:.1}, {:.1}]",
        d.ref_log_streams,
        d.mu_solo.median,
        d.mu_solo.low,
        d.mu_solo.high,
        d.mu_collab.median,
        d.mu_collab.low,
        d.mu_collab.high
    );
    println!(
        "divergences {:?}  step sizes {:?}  max rhat {:.4}  min ess {:.0}",
        doc.sampler.divergences,
        doc.sampler.step_sizes,
        doc.sampler.max_rhat,
        doc.sampler.min_ess_bulk
    );

    if !args.no_gate && doc.sampler.max_rhat > GATE_MAX_RHAT {
        eprintln!(
            "convergence gate: max R-hat {:.4} exceeds {GATE_MAX_RHAT}",
            doc.sampler.max_rhat
        );
        return Ok(4);
    }
    Ok(0)
}

fn cmd_ppc(args: PpcArgs) -> Result<i32> {
    let doc = FitDocument::from_reader(BufReader::new(File::open(&args.fit)?))?;
    let (data, collab) = load_dataset(&args.input)?;
    if data.len() != doc.n_observations {
        return Err(Error::Domain(format!(
            "fit document covers {} observations but the data has {}",
            doc.n_observations,
            data.len()
        )));
    }
    let trace = doc.trace();
    let reps = posterior_predictive(&trace, &data, args.n_rep, args.seed)?;
    let report = ppc_compare(&data.y, &reps, &collab)?;

    serde_json::to_writer_pretty(create_output(&args.output)?, &report)
        .map_err(|e| Error::Format(format!("serializing ppc report: {e}")))?;
    if let Some(hist_path) = &args.hist_output {
        let hist = ppc_histogram(&data.y, &reps);
        write_histogram_csv(create_output(hist_path)?, &hist)?;
    }

    println!(
        "posterior predictive checks, {} replicates ({} model):",
        report.n_rep,
        doc.model()
    );
    println!("statistic       observed    rep mean      rep sd     p-value");
    for (name, s) in [
        ("mean", report.overall.mean),
        ("variance", report.overall.variance),
        ("max", report.overall.max),
        ("share > 300", report.overall.share_over_300),
    ] {
        println!(
            "{name:<14} {:>10.3} {:>11.3} {:>11.3} {:>11.3}",
            s.observed, s.rep_mean, s.rep_sd, s.p_value
        );
    }
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    if args.output.is_none() && args.tracks_output.is_none() {
        return Err(Error::Config(
            "at least one of --output and --tracks-output is required".into(),
        ));
    }
    let spec = GeneratorSpec {
        n_tracks: args.n_tracks,
        coefficients: Coefficients {
            beta0: args.beta0,
            beta1: args.beta1,
            beta2: args.beta2,
        },
        alpha: args.alpha,
        collab_prob: args.collab_prob,
        seed: args.seed,
        ..GeneratorSpec::default()
    };
    let out = generate_tracks(&spec)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    if out.n_clamped > 0 {
        eprintln!(
            "warning: {} response draws clamped into [1, 365]",
            out.n_clamped
        );
    }
    if let Some(path) = &args.tracks_output {
        write_tracks_csv(create_output(path)?, &out.records)?;
    }
    if let Some(path) = &args.output {
        let rows = generate_daily_chart(&out.records, args.year, args.seed.wrapping_add(1))?;
        write_chart_csv(create_output(path)?, &rows)?;
        println!(
            "wrote {} daily rows for {} tracks",
            rows.len(),
            out.records.len()
        );
    } else {
        println!("wrote {} tracks", out.records.len());
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["chartfit", "fit"]), 1);
        assert_eq!(run(["chartfit", "no-such-command"]), 1);
        assert_eq!(run(["chartfit", "fit", "--input", "x.csv"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["chartfit", "--help"]), 0);
        assert_eq!(run(["chartfit", "fit", "--help"]), 0);
    }

    #[test]
    fn missing_input_file_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out.csv");
        let code = run([
            "chartfit",
            "aggregate",
            "--input",
            "/nonexistent/path.csv",
            "--output",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn simulate_requires_an_output() {
        assert_eq!(run(["chartfit", "simulate"]), 1);
    }
}
