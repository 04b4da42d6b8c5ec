//! `depcae`: generate benchmarks, train, score, threshold and evaluate.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use depcae::detect::ThresholdMethod;
use depcae::experiment::LossKind;

#[derive(Parser)]
#[command(name = "depcae", version, about)]
struct Cli {
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "DIV_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset.
    Gen {
        #[arg(long, default_value = "corridor")]
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the normal windows of a dataset.
    Train(ConfigArgs),
    /// Score the windows of one split with a checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the dataset recorded in the checkpoint config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
        /// Also write `window_id,score,label,predicted` rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Pick an operating threshold from scored training windows.
    Threshold {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate scored test windows, or run the four-arm ablation.
    Eval(EvalArgs),
    /// Agreement statistics between two label files.
    Agreement {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a dataset's manifest and files.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
}

/// A JSON config file with flag overrides.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long)]
    depth_exponent: Option<f64>,
    /// Comma-separated encoder widths, e.g. `16,32,64`.
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    threshold_method: Option<MethodArg>,
}

#[derive(Args)]
struct EvalArgs {
    /// Scored test windows from `score`.
    #[arg(long, required_unless_present = "ablation")]
    scores: Option<PathBuf>,
    /// Threshold report from `threshold`.
    #[arg(long, required_unless_present = "ablation")]
    threshold: Option<PathBuf>,
    #[arg(long, value_enum)]
    stratify_by: Option<StratifyArg>,
    /// Accept scores and threshold produced under different configs.
    #[arg(long)]
    force: bool,
    /// Train both losses and report all four arms.
    #[arg(long, conflicts_with_all = ["scores", "threshold"])]
    ablation: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Annotated,
    Iqr,
}

impl From<MethodArg> for ThresholdMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Annotated => ThresholdMethod::AnnotatedProxyMaxF1,
            MethodArg::Iqr => ThresholdMethod::IqrProxyMaxF1,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mse,
    DepthWeighted,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Mse => LossKind::Mse,
            LossArg::DepthWeighted => LossKind::DepthWeighted,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StratifyArg {
    Group,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            commands::log(
                "error",
                serde_json::json!({"message": "--threads must be positive"}),
            );
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            commands::log("error", serde_json::json!({"message": e.to_string()}));
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            commands::log("error", serde_json::json!({"message": e.to_string()}));
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
