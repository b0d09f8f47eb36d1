use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use perfcrd::commands::{default_out_dir, run, Command, Options};
use perfcrd::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "perfcrd", version, about = "Performative prediction experiments on networked collective risk dilemmas")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Enumerate predictions and classify self-fulfilling prophecies.
    Analyze(Common),
    /// Train one predictor.
    Train(Common),
    /// Sweep accuracy/welfare trade-offs and mark the Pareto front.
    Sweep(Common),
    /// Compare the analytic gradient with finite differences.
    Gradcheck(Common),
    /// Run a single rollout with a fixed predictor.
    Rollout(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory. Defaults to out/<name>/<command>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Allow exhaustive enumeration beyond the configured node cap.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Sub::Analyze(c) => (Command::Analyze, c),
        Sub::Train(c) => (Command::Train, c),
        Sub::Sweep(c) => (Command::Sweep, c),
        Sub::Gradcheck(c) => (Command::Gradcheck, c),
        Sub::Rollout(c) => (Command::Rollout, c),
    };
    match execute(cmd, &common) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cmd: Command, common: &Common) -> Result<PathBuf, CliError> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let base_dir = common.config.parent().map(PathBuf::from).unwrap_or_default();
    let opts = Options { seed: common.seed, force: common.force, base_dir };
    let dir = common.out.clone().unwrap_or_else(|| default_out_dir(&common.config, &cfg, cmd));
    let result = run(cmd, &cfg, &opts);
    if !result.outputs.files.is_empty() {
        result.outputs.write_to(&dir)?;
    }
    match result.error {
        None => Ok(dir),
        Some(e) => {
            if !result.outputs.files.is_empty() {
                eprintln!("partial results written to {}", dir.display());
            }
            Err(e)
        }
    }
}
