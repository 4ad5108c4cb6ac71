use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use graphmae_cli::commands::{self, Axis};
use graphmae_cli::error::EXIT_OK;
use graphmae_cli::{Config, Result};

#[derive(Parser)]
#[command(name = "graphmae", version, about = "Masked graph autoencoder: pretraining, probing, ablations, gradient checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain and write model.ckpt, architecture.json and train_log.csv
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's `seed`
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Linear probe on frozen node embeddings; writes report.json
    Probe {
        #[arg(long)]
        config: PathBuf,
        /// Directory from `pretrain`, or its model.ckpt
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// k-fold graph classification on pooled embeddings; writes report.json
    GraphEval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain and evaluate once per value of one hyperparameter
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// mask_ratio, gamma, criterion, decoder_kind or remask_on_off
        #[arg(long)]
        axis: String,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write a gnuplot script for the CSV
        #[arg(long)]
        emit_gnuplot: bool,
    },
    /// Finite-difference check of every op, layer and loss; writes gradcheck.csv
    Gradcheck {
        #[arg(long)]
        out: PathBuf,
        /// Scale one op's backward pass to confirm the checks can fail
        #[arg(long, hide = true, value_name = "OP")]
        corrupt_backward: Option<String>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<Config> {
    let mut cfg = Config::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { config, out, seed } => {
            let log = commands::cmd_pretrain(&load(&config, seed)?, &out)?;
            match (log.first_loss(), log.last_loss()) {
                (Some(a), Some(b)) => println!("{} epochs, loss {a:.4} -> {b:.4}; wrote {}", log.records.len(), out.display()),
                _ => println!("0 epochs; wrote initial model to {}", out.display()),
            }
        }
        Command::Probe { config, checkpoint, out, seed } => {
            let r = commands::cmd_probe(&load(&config, seed)?, &checkpoint, &out)?;
            println!("accuracy {:.4} ± {:.4} over {} runs", r.mean, r.std, r.values.len());
        }
        Command::GraphEval { config, checkpoint, out, seed } => {
            let r = commands::cmd_graph_eval(&load(&config, seed)?, &checkpoint, &out)?;
            println!("accuracy {:.4} ± {:.4} over {} folds", r.mean, r.std, r.values.len());
        }
        Command::Ablate { config, axis, values, out, seed, emit_gnuplot } => {
            let axis: Axis = axis.parse()?;
            let rows = commands::cmd_ablate(&load(&config, seed)?, axis, &values, &out, emit_gnuplot)?;
            for r in &rows {
                println!("{} = {}: {:.4} ± {:.4}", axis.name(), r.value, r.report.mean, r.report.std);
            }
        }
        Command::Gradcheck { out, corrupt_backward } => {
            let results = commands::cmd_gradcheck(&out, corrupt_backward.as_deref())?;
            let worst = results.iter().map(|r| r.max_rel_error / r.threshold).fold(0.0, f64::max);
            println!("{} gradient checks passed (worst error at {:.1e} of threshold)", results.len(), worst);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
