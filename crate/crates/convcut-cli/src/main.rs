use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use convcut_cli::commands;
use convcut_cli::config::{self, RunConfig};

#[derive(Parser)]
#[command(
    name = "convcut",
    about = "Truncated-ConvNeXt facial expression classifier with detail extraction",
    after_help = config::keys_help(),
    after_long_help = config::keys_help()
)]
struct Cli {
    /// Config file of `key = value` lines (# comments allowed)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override any config key, e.g. --set learning_rate=0.01 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CommonArgs {
    /// Synthetic dataset `<classes>x<per_class>`, e.g. 2x32
    #[arg(long, value_name = "NxM")]
    synthetic: Option<String>,
    /// Model preset: tiny (default) or base
    #[arg(long)]
    profile: Option<String>,
    /// Dataset directory (root/<class>/<image>.ppm)
    #[arg(long, value_name = "DIR")]
    data_root: Option<PathBuf>,
    /// Output directory for metrics, tables and images
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Global seed
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Batch size
    #[arg(long)]
    batch_size: Option<usize>,
    /// Checkpoint to load before running
    #[arg(long, value_name = "FILE")]
    checkpoint_in: Option<PathBuf>,
    /// Checkpoint to write after training
    #[arg(long, value_name = "FILE")]
    checkpoint_out: Option<PathBuf>,
}

impl CommonArgs {
    fn pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("synthetic", self.synthetic.clone());
        push("profile", self.profile.clone());
        push("data_root", self.data_root.as_ref().map(|p| p.display().to_string()));
        push("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string()));
        push("seed", self.seed.map(|s| s.to_string()));
        push("epochs", self.epochs.map(|e| e.to_string()));
        push("learning_rate", self.lr.map(|l| l.to_string()));
        push("batch_size", self.batch_size.map(|b| b.to_string()));
        push(
            "checkpoint_in",
            self.checkpoint_in.as_ref().map(|p| p.display().to_string()),
        );
        push(
            "checkpoint_out",
            self.checkpoint_out.as_ref().map(|p| p.display().to_string()),
        );
        out
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics.csv and a final checkpoint
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a checkpoint; prints accuracy/macro F1, writes confusion.csv
    Eval {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the attention × detail-extraction matrix and the conv-layer sweep
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Finite-difference check of every op and the full tiny-profile model
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Test fixture: corrupt this op's analytic gradient (must fail)
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Class activation heatmap for one PPM image
    Gradcam {
        #[command(flatten)]
        common: CommonArgs,
        /// Input image (P6 PPM)
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        /// Class index whose logit is explained
        #[arg(long)]
        class_idx: usize,
        /// Target activation name (default: last backbone stage)
        #[arg(long)]
        target_layer: Option<String>,
    },
}

fn build_config(cli: &Cli, common: &CommonArgs, extra: Vec<(String, String)>) -> Result<RunConfig, convcut_core::Error> {
    let mut set_pairs = Vec::new();
    for s in &cli.set {
        set_pairs.push(config::parse_set(s)?);
    }
    let mut flag_pairs = common.pairs();
    flag_pairs.extend(extra);
    RunConfig::from_sources(cli.config.as_deref(), &[set_pairs, flag_pairs])
}

fn run(cli: Cli) -> Result<i32, convcut_core::Error> {
    match &cli.command {
        Command::Train { common } => {
            let cfg = build_config(&cli, common, vec![])?;
            commands::train::cmd_train(cfg)?;
            Ok(0)
        }
        Command::Eval { common } => {
            let cfg = build_config(&cli, common, vec![])?;
            commands::eval::cmd_eval(cfg)?;
            Ok(0)
        }
        Command::Ablate { common } => {
            let cfg = build_config(&cli, common, vec![])?;
            commands::ablate::cmd_ablate(cfg)?;
            Ok(0)
        }
        Command::Gradcheck { common, corrupt } => {
            let cfg = build_config(&cli, common, vec![])?;
            commands::gradcheck::cmd_gradcheck(cfg, corrupt.as_deref())
        }
        Command::Gradcam {
            common,
            image,
            class_idx,
            target_layer,
        } => {
            let extra = target_layer
                .as_ref()
                .map(|t| vec![("target_layer".to_string(), t.clone())])
                .unwrap_or_default();
            let cfg = build_config(&cli, common, extra)?;
            commands::gradcam::cmd_gradcam(cfg, image, *class_idx)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(convcut_cli::exit_code_for(&err) as u8)
        }
    }
}
