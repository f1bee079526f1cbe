//! `ergosde` — seeded SDE experiment pipelines from a single JSON
//! config: simulate a benchmark model, fit a drift estimator, estimate
//! the diffusion, measure invariant statistics, and sweep perturbation
//! responses. See the repository README for the config schema.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ergosde_cli::pipeline::{run_report, run_task, RunOptions, StageError, Task};
use ergosde_cli::{config, exit_code};

#[derive(Parser)]
#[command(name = "ergosde", version, about = "Seeded SDE experiment pipelines")]
struct Cli {
    /// Experiment config file (JSON).
    #[arg(long, global = true, value_name = "path")]
    config: Option<PathBuf>,

    /// Output directory for artifacts; overrides `out_dir` in the config.
    #[arg(long, global = true, value_name = "dir")]
    out: Option<PathBuf>,

    /// Overrides the config's top-level seed.
    #[arg(long, global = true, value_name = "u64")]
    seed: Option<u64>,

    /// Suppress per-stage progress lines.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the configured model and write the trajectory.
    Simulate,
    /// Simulate, build training pairs, and fit the configured estimator.
    Fit,
    /// Fit, then estimate the noise covariance from the fit residuals.
    Diffusion,
    /// Full pipeline through invariant statistics of the learned model
    /// (of the benchmark model when no estimator is configured).
    Stats,
    /// Sweep a perturbation family and fit the response scaling.
    Sweep,
    /// Render SVG plots from the report artifacts in the output directory.
    Report,
}

fn main() -> ExitCode {
    if let Err(code) = init_thread_pool() {
        return code;
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err.source) as u8)
        }
    }
}

/// Applies the `ERGOSDE_THREADS` cap to the shared worker pool. An
/// unparsable value is a hard error: silently running wide when the
/// caller asked for a cap would defeat the point of setting it.
fn init_thread_pool() -> Result<(), ExitCode> {
    match std::env::var("ERGOSDE_THREADS") {
        Err(_) => Ok(()),
        Ok(raw) => match raw.parse::<usize>() {
            Ok(n) if n >= 1 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("worker pool configured before first use");
                Ok(())
            }
            _ => {
                eprintln!(
                    "error: ERGOSDE_THREADS = `{raw}` is out of range (expected an integer ≥ 1)"
                );
                Err(ExitCode::from(2))
            }
        },
    }
}

fn run(cli: Cli) -> Result<(), StageError> {
    let task = match cli.command {
        Cmd::Simulate => Task::Simulate,
        Cmd::Fit => Task::Fit,
        Cmd::Diffusion => Task::Diffusion,
        Cmd::Stats => Task::Stats,
        Cmd::Sweep => Task::Sweep,
        Cmd::Report => {
            let out = cli.out.ok_or_else(|| config_error("report needs --out <dir>"))?;
            return run_report(&out, cli.quiet);
        }
    };

    let path = cli
        .config
        .ok_or_else(|| config_error("this subcommand needs --config <path>"))?;
    let (cfg, bytes) = config::load_config(&path).map_err(|source| StageError {
        stage: "config",
        source,
    })?;
    let out_dir = cli
        .out
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| config_error("no output directory: pass --out or set `out_dir`"))?;

    let opts = RunOptions { out_dir, seed_override: cli.seed, quiet: cli.quiet };
    run_task(&cfg, &bytes, &opts, task).map(|_| ())
}

fn config_error(msg: &str) -> StageError {
    StageError { stage: "cli", source: ergosde::Error::Configuration(msg.into()) }
}
