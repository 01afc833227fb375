use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod output;

use commands::{NextDoseArgs, RunOverrides};
use config::Study;
use error::CliError;

/// Simulator for multi-cycle phase I dose-escalation designs.
#[derive(Debug, Parser)]
#[command(name = "escalate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for replications.
    #[arg(long, global = true, env = "ESCALATE_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct Common {
    /// Study configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured design on every configured scenario.
    Simulate(Common),
    /// Decide the next dose for an observed history.
    NextDose {
        #[arg(long)]
        config: PathBuf,
        /// JSON-lines history; a `results.jsonl` file also works.
        #[arg(long)]
        history: PathBuf,
        /// One-based line to read when the file has several records.
        #[arg(long)]
        line: Option<usize>,
        /// Decision cycle; defaults to the last cycle with observations.
        #[arg(long)]
        clock: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replication: Option<u64>,
        /// Design kind, e.g. tite-crm.
        #[arg(long)]
        design: Option<String>,
        /// Print the decision as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Grid search over design hyper-parameters.
    Calibrate(Common),
}

fn set_threads(n: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn overrides(c: &Common) -> RunOverrides {
    RunOverrides {
        out_dir: c.out_dir.clone(),
        seed: c.seed,
        replications: c.replications,
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let io = |e: std::io::Error| CliError::Runtime(e.to_string());
    match cli.command {
        Command::Simulate(c) => {
            let study = Study::load(&c.config)?;
            set_threads(cli.threads.or(study.run.threads))?;
            let rows = commands::simulate(&study, &overrides(&c))?;
            output::print_summary(&mut out, &rows).map_err(io)?;
        }
        Command::NextDose {
            config,
            history,
            line,
            clock,
            seed,
            replication,
            design,
            json,
        } => {
            let study = Study::load(&config)?;
            set_threads(cli.threads.or(study.run.threads))?;
            let args = NextDoseArgs {
                history,
                line,
                clock,
                seed,
                replication,
                design,
            };
            let d = commands::next_dose(&study, &args)?;
            if json {
                let s = serde_json::to_string(&d).map_err(|e| CliError::Runtime(e.to_string()))?;
                writeln!(out, "{s}").map_err(io)?;
            } else {
                commands::print_next_dose(&mut out, &d).map_err(io)?;
            }
        }
        Command::Calibrate(c) => {
            let study = Study::load(&c.config)?;
            set_threads(cli.threads.or(study.run.threads))?;
            let (report, path) = commands::run_calibration(&study, &overrides(&c))?;
            writeln!(
                out,
                "{}: best grid point {} of {}, objective {}, PCS {}",
                report.design,
                report.best_index + 1,
                report.points.len(),
                output::num(report.objective),
                report
                    .per_scenario_pcs
                    .iter()
                    .map(|p| output::num(*p))
                    .collect::<Vec<_>>()
                    .join(" ")
            )
            .map_err(io)?;
            writeln!(out, "report: {}", path.display()).map_err(io)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
