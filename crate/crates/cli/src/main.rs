use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use csa_cli::{cmd_generate, cmd_nis, cmd_solve, cmd_sweep, SweepKind};

#[derive(Parser)]
#[command(
    name = "csa",
    about = "Dynamic pricing of competing charging-station alliances",
    version
)]
struct Cli {
    /// Bound on the worker threads used for parallel evaluation
    /// (defaults to the number of cores). Results are identical for any
    /// value.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a scenario from a generator config.
    Generate {
        /// Generator config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output scenario JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the two-stage evolutionary game on a scenario.
    Solve {
        /// Scenario JSON.
        #[arg(long)]
        scenario: PathBuf,
        /// Solver config JSON (defaults apply when omitted).
        #[arg(long)]
        solver_config: Option<PathBuf>,
        /// Output result JSON path.
        #[arg(long)]
        out: PathBuf,
        /// Optional share/fitness trajectory CSV (upper layer).
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Evaluate the no-regret index of a solved result.
    Nis {
        /// Scenario JSON.
        #[arg(long)]
        scenario: PathBuf,
        /// Result JSON produced by `solve`.
        #[arg(long)]
        result: PathBuf,
        /// Sampled strategies per alliance, the equilibrium included.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Solve one scenario variant per factor and summarize.
    Sweep {
        /// Sweep family: demand, theta, dr-fil, or dr-pp.
        #[arg(long)]
        kind: SweepKind,
        /// Comma-separated positive factors (theta sweeps: perceived means).
        #[arg(long, value_delimiter = ',', required = true)]
        factors: Vec<f64>,
        /// Scenario JSON.
        #[arg(long)]
        scenario: PathBuf,
        /// Solver config JSON (defaults apply when omitted).
        #[arg(long)]
        solver_config: Option<PathBuf>,
        /// Output JSON path; a CSV summary lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Alliance that misperceives the theta mean (theta sweeps only).
        #[arg(long)]
        misperceiver: Option<String>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CSA_LOG", "warn"))
        .init();
    let cli = Cli::parse();

    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("worker pool configured before first use");
    }

    match cli.command {
        Command::Generate { config, seed, out } => cmd_generate(&config, seed, &out),
        Command::Solve {
            scenario,
            solver_config,
            out,
            trajectory,
        } => cmd_solve(&scenario, solver_config.as_deref(), &out, trajectory.as_deref()),
        Command::Nis {
            scenario,
            result,
            samples,
            seed,
        } => {
            let report = cmd_nis(&scenario, &result, samples, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Sweep {
            kind,
            factors,
            scenario,
            solver_config,
            out,
            misperceiver,
        } => cmd_sweep(
            kind,
            &factors,
            &scenario,
            solver_config.as_deref(),
            &out,
            misperceiver.as_deref(),
        ),
    }
}
