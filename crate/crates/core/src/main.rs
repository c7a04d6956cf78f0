use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coop_admm::admm::ProgressRecord;
use coop_admm::projection::Backend;
use coop_admm::scenario::output::{emit_outputs, summarize, write_summary, SUMMARY_CSV};
use coop_admm::scenario::{run_experiment, ExperimentReport, ScenarioConfig, ScenarioError};

#[derive(Parser)]
#[command(name = "coop-admm", version, about = "Cooperative multi-vehicle planning with consensus ADMM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario with one projection backend.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's backend (sdr, miqp or oracle).
        #[arg(long)]
        backend: Option<Backend>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Repeat with seeds seed, seed+1, ... and write a summary table.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Run every backend and write the summary table.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config without solving.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Output(#[from] coop_admm::scenario::output::OutputError),
    #[error("--trials must be at least 1")]
    Trials,
}

fn log_progress(record: &ProgressRecord) {
    log::info!(
        "iteration {:3}  residual {:.3e}  dual {:.3e}  y {:.1} ms  z {:.1} ms",
        record.iteration,
        record.residual,
        record.dual_residual,
        record.y_ms,
        record.z_ms
    );
}

fn trials(config: &ScenarioConfig, backend: Backend, seed: u64, count: usize) -> Result<Vec<ExperimentReport>, CliError> {
    (0..count)
        .map(|t| {
            let report = run_experiment(config, backend, seed.wrapping_add(t as u64), &mut log_progress)?;
            println!(
                "{} {} seed {}: {} after {} iterations, min distance {}, {:.2} s",
                report.scenario,
                backend.name(),
                report.seed,
                if report.converged() { "converged" } else { "not converged" },
                report.iterations,
                report.min_distance().map_or("n/a".to_string(), |d| format!("{d:.4} m")),
                report.total_seconds
            );
            Ok(report)
        })
        .collect()
}

fn exit_for(reports: &[ExperimentReport]) -> ExitCode {
    if reports.iter().all(ExperimentReport::converged) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn execute(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Run { config, backend, seed, out, trials: count } => {
            let cfg = ScenarioConfig::load(&config)?;
            let backend = backend.unwrap_or(cfg.backend);
            let seed = seed.unwrap_or(cfg.seed);
            let n = count.unwrap_or(1);
            if n == 0 {
                return Err(CliError::Trials);
            }
            let reports = trials(&cfg, backend, seed, n)?;
            emit_outputs(&reports[0], &out)?;
            if count.is_some() {
                write_summary(&summarize(&reports).into_iter().collect::<Vec<_>>(), &out.join(SUMMARY_CSV))?;
            }
            Ok(exit_for(&reports))
        }
        Command::Compare { config, out, trials: count, seed } => {
            let cfg = ScenarioConfig::load(&config)?;
            if count == 0 {
                return Err(CliError::Trials);
            }
            let seed = seed.unwrap_or(cfg.seed);
            let mut rows = Vec::new();
            let mut all = Vec::new();
            for backend in Backend::ALL {
                let reports = trials(&cfg, backend, seed, count)?;
                emit_outputs(&reports[0], &out.join(backend.name()))?;
                rows.extend(summarize(&reports));
                all.extend(reports);
            }
            write_summary(&rows, &out.join(SUMMARY_CSV))?;
            Ok(exit_for(&all))
        }
        Command::Validate { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            let (problem, _) = cfg.problem()?;
            println!(
                "{}: {} vehicles, {} coupled pairs, horizon {}",
                cfg.name,
                problem.layout.vehicles,
                problem.graph.edges().len(),
                problem.layout.horizon
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
