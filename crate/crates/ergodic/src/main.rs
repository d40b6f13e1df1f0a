use clap::{Args, Parser, Subcommand};
use ergodic::cli::{self, EvalTarget, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ergodic",
    about = "Train and evaluate chaotic-dynamics emulators that preserve invariant statistics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overwrite existing output directories.
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every environment and persist the dataset.
    Generate(ConfigArg),
    /// Train the contrastive sequence encoder.
    TrainEncoder(ConfigArg),
    /// Train the emulator with the configured objective.
    Train {
        #[command(flatten)]
        common: ConfigArg,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the feature-loss weight.
        #[arg(long)]
        lambda: Option<f64>,
        /// Override the Sinkhorn weight.
        #[arg(long)]
        alpha: Option<f64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll out a model over the test split and report every metric.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Emulator checkpoint directory to evaluate.
        #[arg(long, conflicts_with_all = ["ground_truth", "zero"])]
        checkpoint: Option<PathBuf>,
        /// Evaluate the reference integrator as the model.
        #[arg(long, default_value_t = false)]
        ground_truth: bool,
        /// Evaluate the zero-output baseline.
        #[arg(long, default_value_t = false)]
        zero: bool,
        /// Report CSV path.
        #[arg(long, default_value = "eval_report.csv")]
        out: PathBuf,
    },
    /// Train one run per lambda value (plus the lambda = 0 baseline).
    Sweep {
        #[command(flatten)]
        common: ConfigArg,
        /// Comma-separated lambda grid.
        #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.4, 0.6, 0.8, 1.0, 1.2])]
        lambdas: Vec<f64>,
    },
    /// Apply the validation rule to a finished sweep.
    SelectLambda {
        #[arg(long)]
        sweep_dir: PathBuf,
    },
    /// Noise-robustness study of the error metrics on ground truth runs.
    Robustness {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated noise scales (must start at 0).
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3])]
        r_grid: Vec<f64>,
        #[arg(long, default_value = "robustness.csv")]
        out: PathBuf,
    },
}

fn run() -> ergodic::Result<()> {
    match Cli::parse().command {
        Command::Generate(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            cli::cmd_generate(&cfg, args.force)
        }
        Command::TrainEncoder(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            cli::cmd_train_encoder(&cfg, args.force)
        }
        Command::Train {
            common,
            seed,
            lambda,
            alpha,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&common.config)?;
            if let Some(seed) = seed {
                cfg.training.seed = seed;
            }
            if let Some(lambda) = lambda {
                cfg.loss.lambda = lambda;
            }
            if let Some(alpha) = alpha {
                cfg.loss.alpha = alpha;
            }
            if let Some(out) = out {
                cfg.output.dir = out;
            }
            cli::cmd_train(&cfg, common.force).map(|_| ())
        }
        Command::Eval {
            config,
            checkpoint,
            ground_truth,
            zero,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let target = if ground_truth {
                EvalTarget::GroundTruth
            } else if zero {
                EvalTarget::Zero
            } else {
                EvalTarget::Checkpoint(checkpoint.ok_or_else(|| {
                    ergodic::Error::Config(
                        "eval needs --checkpoint, --ground-truth, or --zero".into(),
                    )
                })?)
            };
            cli::cmd_eval(&cfg, &target, &out).map(|_| ())
        }
        Command::Sweep { common, lambdas } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            cli::cmd_sweep(&cfg, &lambdas, common.force).map(|_| ())
        }
        Command::SelectLambda { sweep_dir } => cli::cmd_select_lambda(&sweep_dir).map(|_| ()),
        Command::Robustness {
            config,
            r_grid,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            cli::cmd_robustness(&cfg, &r_grid, &out)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
