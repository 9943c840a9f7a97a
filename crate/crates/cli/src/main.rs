mod report;

use std::fs::File;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cqreg::inference::{bootstrap, BootstrapConfig, CiMethod};
use cqreg::oracles;
use cqreg::process::{fit, FitConfig};
use cqreg::sim::{render_table, run_monte_carlo, Scenario};
use cqreg::{read_csv, Dataset64, LoadedCsv};

use report::{
    BootstrapBlock, FitReportDocument, InverseBlock, KmDocument, Metadata, NelsonAalenBlock,
    ProcessBlock, StepBlock, TrimmedBlock,
};

#[derive(Parser)]
#[command(name = "cqreg", version, about = "Censored quantile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the quantile-coefficient process from a CSV dataset.
    Fit(FitArgs),
    /// Bootstrap standard errors and Wald intervals at chosen probabilities.
    Se(SeArgs),
    /// Run a Monte Carlo experiment on a built-in scenario.
    Simulate(SimArgs),
    /// One-sample product-limit utilities.
    Km(KmArgs),
}

#[derive(clap::Args)]
struct FitArgs {
    /// Input CSV (`-` for stdin) with header time,status,...
    #[arg(long)]
    input: String,
    /// Apply the natural logarithm to the time column before fitting.
    #[arg(long)]
    log_time: bool,
    /// Ceiling on the estimated probability range (default 1 - 1/n).
    #[arg(long)]
    tau_max: Option<f64>,
    /// Output JSON path (`-` for stdout).
    #[arg(long, default_value = "-")]
    output: String,
    /// Optional plot-ready CSV of the fitted segments.
    #[arg(long)]
    process_csv: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SeArgs {
    #[arg(long)]
    input: String,
    #[arg(long)]
    log_time: bool,
    #[arg(long)]
    tau_max: Option<f64>,
    /// Comma-separated evaluation probabilities.
    #[arg(long, value_delimiter = ',', required = true)]
    taus: Vec<f64>,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 200)]
    boot: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional trimmed-mean range `tau1,tau2`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    trim: Option<Vec<f64>>,
    /// Report percentile intervals instead of Wald.
    #[arg(long)]
    percentile: bool,
    #[arg(long, default_value = "-")]
    output: String,
}

#[derive(clap::Args)]
struct SimArgs {
    /// Scenario id: 1, 2 or 3.
    #[arg(long)]
    scenario: u8,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Bootstrap replicates per iteration (0 disables interval estimation).
    #[arg(long, default_value_t = 0)]
    boot: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated evaluation probabilities.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7")]
    taus: Vec<f64>,
    #[arg(long, default_value = "-")]
    output: String,
}

#[derive(clap::Args)]
struct KmArgs {
    /// Input CSV with header time,status and no covariate columns.
    #[arg(long)]
    input: String,
    #[arg(long, default_value = "-")]
    output: String,
}

enum CliError {
    /// User or data problem: exit code 2.
    User(String),
    /// Internal failure: exit code 1.
    Internal(String),
}

impl CliError {
    fn user(e: impl std::fmt::Display) -> Self {
        CliError::User(e.to_string())
    }
    fn internal(e: impl std::fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }
}

fn classify_fit_error(e: cqreg::FitError) -> CliError {
    match e {
        cqreg::FitError::Data(d) => CliError::User(d.to_string()),
        other => CliError::Internal(other.to_string()),
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Se(args) => cmd_se(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Km(args) => cmd_km(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("CQREG_THREADS") {
        if let Ok(k) = v.parse::<usize>() {
            if k > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
        }
    }
}

fn read_input(path: &str) -> Result<Box<dyn Read>, CliError> {
    if path == "-" {
        Ok(Box::new(std::io::stdin()))
    } else {
        File::open(path)
            .map(|f| Box::new(f) as Box<dyn Read>)
            .map_err(|e| CliError::User(format!("cannot open {path}: {e}")))
    }
}

fn write_output(path: &str, bytes: &[u8]) -> Result<(), CliError> {
    if path == "-" {
        std::io::stdout()
            .write_all(bytes)
            .map_err(CliError::internal)
    } else {
        std::fs::write(path, bytes).map_err(|e| CliError::User(format!("cannot write {path}: {e}")))
    }
}

fn load_dataset(input: &str, log_time: bool) -> Result<(Dataset64, Vec<String>), CliError> {
    let reader = read_input(input)?;
    let LoadedCsv {
        dataset,
        column_names,
    } = read_csv::<f64, _>(reader).map_err(CliError::user)?;
    let dataset = if log_time {
        dataset.log_time().map_err(CliError::user)?
    } else {
        dataset
    };
    Ok((dataset, column_names))
}

fn fit_config(tau_max: Option<f64>) -> FitConfig<f64> {
    FitConfig {
        tau_max,
        ..FitConfig::default()
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(CliError::internal)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn process_block(process: &cqreg::QuantileProcess64) -> ProcessBlock {
    ProcessBlock {
        breakpoints: process.breakpoints().to_vec(),
        coefficients: process.coefficients().to_vec(),
        tau_end: process.tau_end(),
        tau_unique: process.tau_unique(),
        flags: process
            .flags()
            .iter()
            .map(|f| f.as_str().to_string())
            .collect(),
    }
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let (dataset, _names) = load_dataset(&args.input, args.log_time)?;
    let process = fit(&dataset, &fit_config(args.tau_max)).map_err(classify_fit_error)?;
    if let Some(csv_path) = &args.process_csv {
        let mut w = String::new();
        let p = dataset.p();
        let header: Vec<String> = (0..p).map(|k| format!("beta_{k}")).collect();
        w.push_str(&format!("tau_lo,tau_hi,flag,{}\n", header.join(",")));
        for k in 0..process.segment_count() {
            let (lo, hi) = process.segment_bounds(k);
            let coefs: Vec<String> = process.coefficients()[k]
                .iter()
                .map(|c| format!("{c:?}"))
                .collect();
            w.push_str(&format!(
                "{lo:?},{hi:?},{},{}\n",
                process.flags()[k].as_str(),
                coefs.join(",")
            ));
        }
        std::fs::write(csv_path, w)
            .map_err(|e| CliError::User(format!("cannot write {}: {e}", csv_path.display())))?;
    }
    let doc = FitReportDocument {
        metadata: Metadata {
            input: args.input.clone(),
            n: dataset.n(),
            p: dataset.p(),
            seed: None,
            log_time: args.log_time,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        process: process_block(&process),
        bootstrap: None,
        trimmed: None,
    };
    write_output(&args.output, &to_json(&doc)?)
}

fn cmd_se(args: SeArgs) -> Result<(), CliError> {
    let (dataset, _names) = load_dataset(&args.input, args.log_time)?;
    if args.boot < 2 {
        return Err(CliError::User("--boot must be at least 2".into()));
    }
    let trim = match &args.trim {
        Some(v) if v.len() == 2 => Some((v[0], v[1])),
        Some(_) => return Err(CliError::User("--trim takes exactly two values".into())),
        None => None,
    };
    let config = BootstrapConfig {
        replicates: args.boot,
        seed: args.seed,
        ci: if args.percentile {
            CiMethod::Percentile
        } else {
            CiMethod::Wald
        },
        survival_floor: 0.5,
        trim,
        fit: fit_config(args.tau_max),
    };
    let summary = bootstrap(&dataset, &args.taus, &config).map_err(|e| match e {
        cqreg::inference::InferenceError::Fit(f) => classify_fit_error(f),
        other => CliError::User(other.to_string()),
    })?;
    let process = fit(&dataset, &config.fit).map_err(classify_fit_error)?;
    let doc = FitReportDocument {
        metadata: Metadata {
            input: args.input.clone(),
            n: dataset.n(),
            p: dataset.p(),
            seed: Some(args.seed),
            log_time: args.log_time,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        process: process_block(&process),
        bootstrap: Some(BootstrapBlock {
            taus: summary.taus.clone(),
            replicates: summary.replicates,
            point: summary.point.clone(),
            se: summary.se.clone(),
            ci_lower: summary
                .ci
                .iter()
                .map(|row| row.iter().map(|c| c.0).collect())
                .collect(),
            ci_upper: summary
                .ci
                .iter()
                .map(|row| row.iter().map(|c| c.1).collect())
                .collect(),
            excluded: summary.excluded.clone(),
        }),
        trimmed: summary.trimmed.as_ref().map(|t| TrimmedBlock {
            tau1: t.tau1,
            tau2: t.tau2,
            estimate: t.point.clone(),
            se: t.se.clone(),
            ci_lower: t.ci.iter().map(|c| c.0).collect(),
            ci_upper: t.ci.iter().map(|c| c.1).collect(),
            excluded: t.excluded,
        }),
    };
    write_output(&args.output, &to_json(&doc)?)
}

fn cmd_simulate(args: SimArgs) -> Result<(), CliError> {
    let scenario = Scenario::from_id(args.scenario).map_err(CliError::user)?;
    if args.reps < 2 {
        return Err(CliError::User("--reps must be at least 2".into()));
    }
    let report = run_monte_carlo::<f64>(
        scenario,
        args.n,
        args.reps,
        &args.taus,
        args.boot,
        args.seed,
    )
    .map_err(|e| match e {
        cqreg::sim::SimError::TooManyFailures { .. } => CliError::Internal(e.to_string()),
        other => CliError::User(other.to_string()),
    })?;
    eprint!("{}", render_table(&report));
    write_output(&args.output, &to_json(&report)?)
}

fn cmd_km(args: KmArgs) -> Result<(), CliError> {
    let (dataset, _names) = load_dataset(&args.input, false)?;
    if dataset.p() != 1 {
        return Err(CliError::User(
            "km requires a dataset with no covariate columns".into(),
        ));
    }
    let km = oracles::kaplan_meier(&dataset, None).map_err(CliError::user)?;
    let na = oracles::nelson_aalen(&dataset).map_err(CliError::user)?;
    let increments = oracles::nelson_aalen_increments(&dataset).map_err(CliError::user)?;

    // quantile function of the product-limit estimate, as a step in tau
    let mut inv_starts = vec![0.0];
    let mut inv_values = Vec::new();
    let mut prev = 0.0;
    for (t, v) in km.cdf.jump_points().iter().zip(km.cdf.values()) {
        inv_values.push(*t);
        if *v < 1.0 {
            inv_starts.push(*v);
        }
        prev = *v;
    }
    if prev < 1.0 {
        inv_values.push(km.last_followup);
    } else {
        inv_starts.pop();
    }

    let doc = KmDocument {
        n: dataset.n(),
        distribution: StepBlock {
            initial_value: km.cdf.initial_value(),
            times: km.cdf.jump_points().to_vec(),
            values: km.cdf.values().to_vec(),
        },
        nelson_aalen: NelsonAalenBlock {
            times: increments.iter().map(|&(t, _)| t).collect(),
            increments: increments.iter().map(|&(_, inc)| inc).collect(),
            cumulative: na.values().to_vec(),
        },
        inverse: InverseBlock {
            probability_starts: inv_starts,
            quantiles: inv_values,
            last_followup: km.last_followup,
            mass: km.mass,
        },
    };
    write_output(&args.output, &to_json(&doc)?)
}
