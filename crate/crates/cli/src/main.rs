use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use ucahar::app;
use ucahar::config::AppConfig;
use ucahar::report::summary_line;

/// Multi-task activity, context and user recognition from wearable IMU data.
#[derive(Parser)]
#[command(name = "ucahar", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.max_epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Seed applied to split, training and synthetic generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Segment, featurize, split and normalize raw recordings.
    Prepare {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a prepared dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid search over loss weights, learning rate and code size.
    Grid {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the full model and its three ablations; write the comparison table.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic recordings in the raw input format.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<AppConfig> {
    let mut overrides = c.overrides.clone();
    if let Some(seed) = c.seed {
        for key in ["split.seed", "train.seed", "synth.seed"] {
            overrides.push(format!("{key}={seed}"));
        }
    }
    AppConfig::load(c.config.as_deref(), &overrides).context("loading configuration")
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    let cfg = load_config(&cli.common)?;
    match cli.cmd {
        Cmd::Prepare { raw, out } => {
            let data = app::prepare(&cfg, &raw, &out)?;
            println!("train {} / val {} / test {} instances written to {}", data.train.len(), data.val.len(), data.test.len(), out.display());
        }
        Cmd::Train { data, out } => {
            let art = app::run_train(&cfg, &data, &out)?;
            info!("run manifest in {}", out.display());
            println!("checkpoint: {}", art.checkpoint_path.unwrap_or_default().display());
        }
        Cmd::Grid { data, out } => {
            let best = app::run_grid(&cfg, &data, &out)?;
            println!("best: alpha={} gamma1={} gamma2={} lr={} d_t={}", best.loss_weights.alpha, best.loss_weights.gamma1, best.loss_weights.gamma2, best.learning_rate, best.d_t);
        }
        Cmd::Eval { data, checkpoint, split, out } => {
            let report = app::run_eval(&cfg, &data, &checkpoint, &split, &out)?;
            println!("{}", report.to_table());
            println!("{}", summary_line(&report));
        }
        Cmd::Ablate { data, out } => {
            let table = app::run_ablate(&cfg, &data, &out)?;
            print!("{}", std::fs::read_to_string(&table).with_context(|| format!("reading {}", table.display()))?);
        }
        Cmd::GenSynth { out } => {
            let dirs = app::run_gen_synth(&cfg, &out)?;
            println!("{} recordings written to {}", dirs.len(), out.display());
        }
    }
    Ok(())
}
