use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vbkt_cli::{
    cmd_analyze, cmd_estimate_sigma, cmd_fit_prior, cmd_generate, cmd_run, ExperimentConfig,
    RunError, RunResult,
};

/// Variational Bayesian knowledge transfer experiments.
///
/// Exit codes: 0 success, 1 configuration error, 2 runtime failure.
#[derive(Parser)]
#[command(name = "vbkt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the source, target-train and target-test datasets.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the dataset files.
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train (or reuse) the source model and write its class priors.
    FitPrior {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Prior file to write.
        #[arg(long, default_value = "prior.json")]
        out: PathBuf,
    },
    /// Estimate the GMF latent variance from augmented target copies.
    EstimateSigma {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file.
        #[arg(long, default_value = "sigma.json")]
        out: PathBuf,
    },
    /// Train and evaluate every (method, seed) cell; skips finished cells.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Results root (defaults to the config's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cells trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Discrepancy matrices and embedding export for a finished run.
    Analyze {
        /// A `<out>/<config-hash>` directory written by `run`.
        run_dir: PathBuf,
        /// Analyze this single seed instead of the stored list.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Seeds to analyze (defaults to 0..5).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

fn load(config: Option<PathBuf>) -> RunResult<ExperimentConfig> {
    match config {
        Some(p) => ExperimentConfig::load(&p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn execute(cli: Cli) -> RunResult<()> {
    match cli.command {
        Command::Generate { config, out } => {
            for path in cmd_generate(&load(config)?, &out)? {
                println!("{}", path.display());
            }
        }
        Command::FitPrior { config, out } => {
            let cfg = load(config)?;
            let prior = cmd_fit_prior(&cfg, &cfg.output_dir, &out)?;
            println!(
                "{}: {} classes, {} dims",
                out.display(),
                prior.num_classes(),
                prior.latent_dim()
            );
        }
        Command::EstimateSigma { config, out } => {
            let cfg = load(config)?;
            let sigma2 = cmd_estimate_sigma(&cfg, &cfg.output_dir, &out)?;
            println!("{}: {}", out.display(), serde_json::to_string(&sigma2)?);
        }
        Command::Run {
            config,
            out,
            jobs,
            seed_override,
        } => {
            let mut cfg = load(config)?;
            if let Some(s) = seed_override {
                cfg.seeds = vec![s];
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let (dir, results) = cmd_run(&cfg, &out, jobs)?;
            let failed = results.iter().filter(|r| r.outcome.is_err()).count();
            print!("{}", std::fs::read_to_string(dir.join("results.csv"))?);
            println!("run directory: {}", dir.display());
            if failed > 0 {
                return Err(RunError::Runtime(format!("{failed} cell(s) failed")));
            }
        }
        Command::Analyze {
            run_dir,
            seed_override,
            seeds,
        } => {
            let seeds = match (seed_override, seeds) {
                (Some(s), _) => vec![s],
                (None, Some(list)) => list,
                (None, None) => (0..5).collect(),
            };
            let files = cmd_analyze(&run_dir, &seeds)?;
            println!("wrote {} files under {}", files.len(), run_dir.join("analysis").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
