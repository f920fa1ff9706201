use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use soficlab::config::SEED_ENV;
use soficlab::{execute, prepare, write_trace_csv, ConfigError, ExperimentConfig, RunError, RunReport};

#[derive(Parser)]
#[command(name = "soficlab", version, about = "Sofic approximations, microstates and Kantorovich fits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its JSON report.
    Run {
        config: PathBuf,
        /// Report path (default: the config's `out`, else stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trace CSV path, for op "trace".
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Kantorovich distance between two window distributions in JSON.
    Distance { left: PathBuf, right: PathBuf },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out, csv, jobs } => run(&config, out, csv, jobs),
        Command::Validate { config } => validate(&config),
        Command::Distance { left, right } => distance(&left, &right),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(RunError::Runtime(e)) => {
            eprintln!("runtime error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn read_config(path: &Path) -> Result<(Vec<u8>, ExperimentConfig), RunError> {
    let bytes = fs::read(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| ConfigError(format!("{} is not UTF-8", path.display())))?;
    let config = ExperimentConfig::parse(text)?;
    Ok((bytes, config))
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn validate(path: &Path) -> Result<(), RunError> {
    let (_, config) = read_config(path)?;
    let (_, warnings) = prepare(config, env_seed().as_deref())?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    println!("ok");
    Ok(())
}

fn runtime(e: anyhow::Error) -> RunError {
    RunError::Runtime(format!("{e:#}"))
}

fn run(path: &Path, out: Option<PathBuf>, csv: Option<PathBuf>, jobs: Option<usize>) -> Result<(), RunError> {
    let (bytes, mut config) = read_config(path)?;
    if let Some(csv) = &csv {
        config.csv = Some(csv.display().to_string());
    }
    if let Some(n) = jobs {
        if n == 0 {
            return Err(ConfigError("--jobs must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")
            .map_err(runtime)?;
    }
    let echo: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| ConfigError(format!("config: {e}")))?;
    let out = out.or_else(|| config.out.as_ref().map(PathBuf::from));
    let csv = config.csv.as_ref().map(PathBuf::from);
    let op = config.op;

    let start = Instant::now();
    let (prepared, warnings) = prepare(config, env_seed().as_deref())?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let (result, trace) = execute(&prepared)?;
    let elapsed = start.elapsed().as_millis() as u64;

    let report = RunReport::new(&bytes, echo, op.name(), warnings, result, elapsed);
    match out {
        Some(p) => fs::write(&p, report.to_json())
            .with_context(|| format!("writing {}", p.display()))
            .map_err(runtime)?,
        None => print!("{}", report.to_json()),
    }
    if let (Some(p), Some(trace)) = (csv, trace) {
        let file = fs::File::create(&p).with_context(|| format!("creating {}", p.display())).map_err(runtime)?;
        write_trace_csv(&trace.rows, file).with_context(|| format!("writing {}", p.display())).map_err(runtime)?;
    }
    Ok(())
}

fn distance(left: &Path, right: &Path) -> Result<(), RunError> {
    let load = |p: &Path| -> Result<serde_json::Value, RunError> {
        let text = fs::read_to_string(p).map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())).into())
    };
    let config = serde_json::json!({ "op": "distance", "left": load(left)?, "right": load(right)? });
    let config: ExperimentConfig =
        serde_json::from_value(config).map_err(|e| ConfigError(format!("distribution: {e}")))?;
    let (prepared, _) = prepare(config, None)?;
    let (result, _) = execute(&prepared)?;
    println!("{}", serde_json::to_string_pretty(&result).expect("summary serializes"));
    Ok(())
}
