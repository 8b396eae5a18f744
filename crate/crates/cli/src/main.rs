use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bsdelta_cli::{run, CliError, Command, ExperimentConfig, Format, Options, Outcome};
use clap::Parser;

/// Backward stochastic difference equations on Bernoulli walk lattices.
///
/// Exit status: 0 ok, 1 numeric or contract failure, 2 config error.
/// BSDELTA_THREADS caps the worker thread count.
#[derive(Debug, Parser)]
#[command(name = "bsdelta", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; without it the main artifact goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized checks; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Record wall time in convergence tables (output is then not reproducible).
    #[arg(long)]
    timings: bool,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("BSDELTA_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!("BSDELTA_THREADS must be a positive integer, got `{raw}`"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Run(e.to_string()))
}

fn emit(outcome: &Outcome, dir: Option<&PathBuf>) -> Result<(), CliError> {
    match dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Run(format!("{}: {e}", dir.display())))?;
            for a in &outcome.artifacts {
                let path = dir.join(&a.name);
                std::fs::write(&path, &a.bytes)
                    .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
                eprintln!("wrote {}", path.display());
            }
        }
        None => {
            let extra: Vec<&str> = outcome
                .artifacts
                .iter()
                .enumerate()
                .filter(|(i, a)| *i != outcome.primary && a.required)
                .map(|(_, a)| a.name.as_str())
                .collect();
            if !extra.is_empty() {
                return Err(CliError::Config(format!(
                    "writing {} needs an output directory (--out or output.dir)",
                    extra.join(", ")
                )));
            }
            let mut stdout = std::io::stdout().lock();
            match stdout
                .write_all(&outcome.artifacts[outcome.primary].bytes)
                .and_then(|_| stdout.flush())
            {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    return Err(CliError::Run(format!("stdout: {e}")))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn main_inner(args: Args) -> Result<Option<String>, CliError> {
    init_threads()?;
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let config = ExperimentConfig::from_json(&text)?;
    let opts = Options {
        format: args.format,
        seed: args.seed,
        timings: args.timings,
    };
    let outcome = run(args.command, &config, &opts)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    emit(&outcome, args.out.as_ref().or(config.output.dir.as_ref()))?;
    Ok(outcome.failure)
}

fn main() -> ExitCode {
    match main_inner(Args::parse()) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(failure)) => {
            eprintln!("error: {failure}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
