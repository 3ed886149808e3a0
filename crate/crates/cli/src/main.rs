mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sphereflow",
    version,
    about = "Train, sample and evaluate flow matching models on hyperspheres"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a velocity field from an experiment config.
    Train {
        /// Flat key = value config file.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the checkpoint and training log.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate samples from a checkpoint into an SFV1 vector file.
    Sample {
        /// SFCK checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of samples to draw.
        #[arg(short, long)]
        n: usize,
        /// Euler steps; defaults to the value stored in the checkpoint.
        #[arg(long)]
        steps: Option<usize>,
        /// Overrides the sampling seed stored in the checkpoint.
        #[arg(long)]
        seed: Option<u64>,
        /// Keep raw integrator output instead of rescaling to the dataset
        /// mean norm.
        #[arg(long)]
        no_rescale: bool,
        /// Output directory for samples.sfv1.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a sample file against a reference file.
    Eval {
        /// SFV1 file of generated samples.
        #[arg(long)]
        samples: PathBuf,
        /// SFV1 file of reference vectors.
        #[arg(long)]
        reference: PathBuf,
        /// Also report the worst on-sphere residual at this radius.
        #[arg(long)]
        radius: Option<f64>,
        /// Output directory for eval.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Norm statistics and the projection distortion sweep of a vector file.
    Analyze {
        /// SFV1 file to analyze.
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated sweep radii.
        #[arg(long, value_delimiter = ',', required = true)]
        radii: Vec<f64>,
        /// Output directory for norm_stats.csv and projection_sweep.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one spherical model per radius and tabulate sample quality.
    AblateRadius {
        /// Flat key = value config file; the radius key is overridden.
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated sphere radii, one training run each.
        #[arg(long, value_delimiter = ',', required = true)]
        radii: Vec<f64>,
        /// Overrides the config's seed for every run.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for ablation.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), commands::CliError> {
    match cli.command {
        Command::Train { config, seed, out } => commands::cmd_train(&config, seed, &out),
        Command::Sample {
            checkpoint,
            n,
            steps,
            seed,
            no_rescale,
            out,
        } => commands::cmd_sample(&checkpoint, n, steps, seed, no_rescale, &out),
        Command::Eval {
            samples,
            reference,
            radius,
            out,
        } => commands::cmd_eval(&samples, &reference, radius, &out),
        Command::Analyze { input, radii, out } => commands::cmd_analyze(&input, &radii, &out),
        Command::AblateRadius {
            config,
            radii,
            seed,
            out,
        } => commands::cmd_ablate_radius(&config, &radii, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap's own exit code conventions differ; usage problems are
            // exit code 1 here, while --help and --version are successes.
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
