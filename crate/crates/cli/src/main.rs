use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use wslln::model::Mode;
use wslln_cli::commands::{self, PredictArgs};
use wslln_cli::config::{Overrides, RunConfig};

/// Weakly supervised temporal language localization.
#[derive(Parser)]
#[command(name = "wslln", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-event corpus.
    Synth(SynthArgs),
    /// Train a model from video-sentence match labels.
    Train(TrainArgs),
    /// Train an ablated model (align-only or detect-only).
    Ablate(TrainArgs),
    /// Score a checkpoint on a manifest with ground-truth spans.
    Eval(EvalArgs),
    /// Rank the proposals of one video for one query.
    Predict(PredictCmd),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration with flat keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base segments per video.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    num_train: Option<usize>,
    #[arg(long)]
    num_test: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Training manifest.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Optional manifest evaluated after every epoch.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    /// full, align-only or detect-only.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    negative_ratio: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    ths: Option<Vec<f64>>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Manifest with ground-truth spans.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    ths: Option<Vec<f64>>,
}

#[derive(Args)]
struct PredictCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Frame features of the video (.wslf).
    #[arg(long)]
    features: PathBuf,
    /// Query vector: a JSON array file or comma-separated numbers.
    #[arg(long, allow_hyphen_values = true)]
    query: String,
    /// Video length in seconds; defaults to one second per frame.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    mode: Option<Mode>,
}

fn common(c: Common) -> (Option<PathBuf>, Overrides) {
    (
        c.config,
        Overrides {
            seed: c.seed,
            out: c.out,
            k: c.k,
            ..Overrides::default()
        },
    )
}

fn train_overrides(a: TrainArgs) -> (Option<PathBuf>, Overrides) {
    let (config, base) = common(a.common);
    let o = Overrides {
        train_manifest: a.train,
        eval_manifest: a.eval,
        lambda: a.lambda,
        mode: a.mode,
        lr: a.lr,
        momentum: a.momentum,
        epochs: a.epochs,
        negative_ratio: a.negative_ratio,
        d: a.d,
        h: a.h,
        ks: a.ks,
        ths: a.ths,
        ..base
    };
    (config, o)
}

fn run(cli: Cli) -> Result<()> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Synth(a) => {
            let (config, base) = common(a.common);
            let o = Overrides {
                num_train: a.num_train,
                num_test: a.num_test,
                beta: a.beta,
                sigma: a.sigma,
                ..base
            };
            commands::cmd_synth(&RunConfig::resolve(config.as_deref(), o)?, &mut stdout)
        }
        Command::Train(a) => {
            let (config, o) = train_overrides(a);
            commands::cmd_train(&RunConfig::resolve(config.as_deref(), o)?, &mut stdout)
        }
        Command::Ablate(a) => {
            if a.mode.is_none() {
                anyhow::bail!("ablate needs --mode align-only or --mode detect-only");
            }
            let (config, o) = train_overrides(a);
            commands::cmd_ablate(&RunConfig::resolve(config.as_deref(), o)?, &mut stdout)
        }
        Command::Eval(a) => {
            let (config, base) = common(a.common);
            let o = Overrides {
                checkpoint: a.checkpoint,
                eval_manifest: a.manifest,
                mode: a.mode,
                ks: a.ks,
                ths: a.ths,
                ..base
            };
            commands::cmd_eval(&RunConfig::resolve(config.as_deref(), o)?, &mut stdout)
        }
        Command::Predict(a) => {
            let (config, base) = common(a.common);
            let o = Overrides {
                checkpoint: a.checkpoint,
                mode: a.mode,
                ..base
            };
            let cfg = RunConfig::resolve(config.as_deref(), o)?;
            let args = PredictArgs {
                features: a.features,
                query: commands::parse_query(&a.query)?,
                duration: a.duration,
            };
            commands::cmd_predict(&cfg, &args, &mut stdout)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
