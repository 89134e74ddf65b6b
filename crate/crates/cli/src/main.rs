use std::path::PathBuf;
use std::process::ExitCode;

use bsde_cli::{biaslab_command, eval_command, list_problems, run_command, CliError, CHECKPOINT_FILE};
use bsde_core::biaslab::Suite;
use bsde_core::training::Preset;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bsde", version, about = "Train and verify neural FBSDE solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file and write log, checkpoint, CSV, SVG and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        preset: Option<Preset>,
    },
    /// RL2 of a checkpoint against fresh reference trajectories.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Run directory holding the checkpoint.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        preset: Option<Preset>,
    },
    /// Monte Carlo checks of the bias, moment and variance results.
    Biaslab {
        #[arg(long, default_value = "all")]
        suite: Suite,
        /// Optional TOML file of suite parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the benchmark catalog.
    ListProblems,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed, preset } => {
            let m = run_command(&config, &out, seed, preset)?;
            match m.final_rl2 {
                Some(r) => println!("final RL2 {r:.6e}; artifacts in {}", out.display()),
                None => println!("artifacts in {}", out.display()),
            }
        }
        Command::Eval { config, out, checkpoint, seed, preset } => {
            let ckpt = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let report = eval_command(&config, &ckpt, seed, preset)?;
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
        }
        Command::Biaslab { suite, config, out, seed } => {
            let (path, records) = biaslab_command(suite, config.as_deref(), &out, seed)?;
            println!("{} checks passed; report {}", records.len(), path.display());
        }
        Command::ListProblems => print!("{}", list_problems()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
