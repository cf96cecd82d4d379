use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{split_overrides, ConfigInvalid, ExperimentConfig};

/// Preconditioned Hamiltonian Monte Carlo experiments.
///
/// Any config key can be overridden with a dotted flag, for example
/// `--kernel.T=0.2` or `--diagnostics.clt.enabled=true`. Set HHMC_THREADS
/// to cap the worker pool.
#[derive(Parser)]
#[command(name = "hhmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    config: PathBuf,
    /// Run even if kernel.T fails its admissibility check; outputs are
    /// watermarked.
    #[arg(long)]
    override_time_condition: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run chains, plus every diagnostic enabled in the config.
    Sample(RunArgs),
    /// Coupled chains and their distance statistics.
    Couple(RunArgs),
    /// Drift constants and their Monte Carlo check.
    Lyapunov(RunArgs),
    /// Weak Harris constants.
    Harris(RunArgs),
    /// Asymptotic-variance estimates for one coordinate.
    Clt(RunArgs),
    /// Synthetic data for the passive-scalar inverse problem.
    AdrGen(RunArgs),
    /// Posterior sampling and gradient checks for the inverse problem.
    AdrSample(RunArgs),
    /// Constants, admissible times and model audits.
    Audit(RunArgs),
}

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Sample(a) => ("sample", a),
            Command::Couple(a) => ("couple", a),
            Command::Lyapunov(a) => ("lyapunov", a),
            Command::Harris(a) => ("harris", a),
            Command::Clt(a) => ("clt", a),
            Command::AdrGen(a) => ("adr-gen", a),
            Command::AdrSample(a) => ("adr-sample", a),
            Command::Audit(a) => ("audit", a),
        }
    }
}

fn init_pool() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("HHMC_THREADS") {
        let n: usize =
            v.parse().map_err(|_| ConfigInvalid(format!("HHMC_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(ConfigInvalid("HHMC_THREADS must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    let (name, run) = cli.command.parts();
    let result = init_pool()
        .and_then(|_| ExperimentConfig::load(&run.config, &overrides))
        .and_then(|cfg| commands::run(name, cfg, run.override_time_condition));
    match result {
        Ok(m) => {
            if let Some(w) = &m.watermark {
                eprintln!("warning: {w}");
            }
            let dir = m.config["output"].as_str().unwrap_or(".");
            println!("{name}: wrote {} files to {dir}/{name}", m.files.len() + 1);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigInvalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
