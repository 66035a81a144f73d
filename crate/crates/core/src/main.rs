use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trajaware::config::RunConfig;
use trajaware::experiment;
use trajaware::{Error, Result};

#[derive(Parser)]
#[command(name = "trajaware", version, about = "Trajectory-aware DQN routing for vehicular networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (.toml or .json); defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.episodes=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the maps, traces and routes of the run.
    Generate(Common),
    /// Train the trajectory predictor on the training maps.
    TrainPredictor(Common),
    /// Train the routing policy on the training maps.
    TrainPolicy(Common),
    /// Evaluate a policy on the held-out map.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Q-network checkpoint; defaults to the run's trained policy.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every pruning/attention variant.
    Ablate(Common),
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("TRAJAWARE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Validation(format!("TRAJAWARE_THREADS must be a positive integer, got `{raw}`")))?;
    if n == 0 {
        return Err(Error::Validation("TRAJAWARE_THREADS must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Configuration(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Generate(c) => {
            let files = experiment::cmd_generate(&load(&c)?)?;
            println!("wrote {} files", files.len());
        }
        Command::TrainPredictor(c) => {
            for b in experiment::cmd_train_predictor(&load(&c)?)? {
                println!(
                    "missing_steps={} samples={} mean_error_m={:.3}",
                    b.missing_steps, b.count, b.mean_error_m
                );
            }
        }
        Command::TrainPolicy(c) => {
            let path = experiment::cmd_train_policy(&load(&c)?)?;
            println!("policy written to {}", path.display());
        }
        Command::Eval { common, checkpoint } => {
            let mut cfg = load(&common)?;
            if checkpoint.is_some() {
                cfg.eval.checkpoint = checkpoint;
            }
            print_cells(&experiment::cmd_eval(&cfg)?);
        }
        Command::Ablate(c) => print_cells(&experiment::cmd_ablate(&load(&c)?)?),
    }
    Ok(())
}

fn print_cells(summary: &experiment::RunSummary) {
    for c in &summary.cells {
        let s = &c.summary;
        let spr = s.avg_spr.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<15} {:<28} spr={spr} pspr={:.4} rr={:.4} episodes={}",
            c.variant,
            c.mode.label(),
            s.avg_pspr,
            s.rr,
            s.episodes
        );
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
