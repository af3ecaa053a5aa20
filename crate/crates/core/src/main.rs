use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use asap::cli::{self, EvalArgs, GradcheckArgs, PlotArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "asap", version, about = "Adaptive skills over adaptive hyperplane partitions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (falls back to the config, then ASAP_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override `max_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a checkpoint with sampled rollouts and write eval.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "2R")]
        suite: String,
        /// World JSON replacing the suite's built-in geometry.
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare closed-form score gradients with central differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Negate every hyperplane of a checkpoint.
    Flip {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Destination checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the partition map of a checkpoint as SVG and CSV.
    PlotPartitions {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "2R")]
        suite: String,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> asap::Result<i32> {
    match command {
        Command::Train { config, out, seed, episodes } => cli::cmd_train(&TrainArgs { config, out, seed, episodes }),
        Command::Eval { checkpoint, suite, world, episodes, seed, out } => {
            cli::cmd_eval(&EvalArgs { checkpoint, suite, world, episodes, seed, out })
        }
        Command::Gradcheck { config, samples, seed, out } => {
            cli::cmd_gradcheck(&GradcheckArgs { config, samples, seed, out })
        }
        Command::Flip { checkpoint, out } => cli::cmd_flip(&checkpoint, &out),
        Command::PlotPartitions { checkpoint, suite, world, resolution, out } => {
            cli::cmd_plot_partitions(&PlotArgs { checkpoint, suite, world, resolution, out })
        }
    }
}

fn main() -> ExitCode {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { cli::EXIT_INPUT } else { cli::EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match run(parsed.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            cli::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
