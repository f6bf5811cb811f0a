//! Command-line entry point for training, evaluating, gradient-checking,
//! ablating, and exporting samples.
//!
//! Exit codes: 0 success, 2 validation failure (bad flags, bad config, or
//! a failed gradient check), 3 non-finite training loss.

use std::path::PathBuf;
use std::process;

use clap::{Parser, Subcommand};

use crn_core::config::ExperimentConfig;
use crn_core::harness::{
    cmd_ablate, cmd_datagen, cmd_eval, cmd_gradcheck, cmd_train, gradcheck, TrainRequest,
    CHECKPOINT_BASE, CONFIG_FILE,
};
use crn_core::{CrnError, Result};

#[derive(Parser)]
#[command(name = "crn", about = "Coupled recurrent network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write config copy, metrics log, and checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run seed; defaults to the first entry of the config's seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the checkpoint inside a run directory.
    Eval {
        /// Run directory holding the checkpoint (and a config copy).
        #[arg(long)]
        out: PathBuf,
        /// Config override; defaults to the run directory's own copy.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the config's ablation matrix and emit CSV/SVG artifacts.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export task samples in the checkpoint tensor format.
    Datagen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8)]
        export_n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn seed_for(cfg: &ExperimentConfig, flag: Option<u64>) -> u64 {
    flag.unwrap_or_else(|| cfg.seeds.first().copied().unwrap_or(1))
}

fn out_for(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| cfg.out.clone()).ok_or_else(|| {
        CrnError::Config("no output directory: pass --out or set `out` in the config".into())
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, seed, out } => {
            let text = std::fs::read_to_string(&config)?;
            let cfg = ExperimentConfig::from_toml_str(&text)?;
            let out = out_for(&cfg, out)?;
            cmd_train(&TrainRequest {
                config: &cfg,
                config_text: &text,
                seed: seed_for(&cfg, seed),
                out: &out,
            })?;
            Ok(())
        }
        Command::Eval { out, config, seed } => {
            let config_path = config.unwrap_or_else(|| out.join(CONFIG_FILE));
            let cfg = ExperimentConfig::load(&config_path)?;
            let report = cmd_eval(&cfg, &out.join(CHECKPOINT_BASE), seed_for(&cfg, seed))?;
            println!("{}", report.record()?.line());
            Ok(())
        }
        Command::Gradcheck { config, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            cmd_gradcheck(&cfg, seed_for(&cfg, seed), gradcheck::DEFAULT_TOLERANCE)?;
            Ok(())
        }
        Command::Ablate { config, out } => {
            let text = std::fs::read_to_string(&config)?;
            let cfg = ExperimentConfig::from_toml_str(&text)?;
            let out = out_for(&cfg, out)?;
            let outcome = cmd_ablate(&cfg, &text, &out)?;
            println!(
                "ablate cells={} runs_csv={} summary_csv={} curves_svg={}",
                outcome.cells.len(),
                outcome.runs_csv.display(),
                outcome.summary_csv.display(),
                outcome.curves_svg.display()
            );
            Ok(())
        }
        Command::Datagen {
            config,
            export_n,
            seed,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out_for(&cfg, out)?;
            cmd_datagen(&cfg, &out, export_n, seed_for(&cfg, seed))?;
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                CrnError::NonFiniteLoss { .. } => 3,
                _ => 2,
            };
            process::exit(code);
        }
    }
}
