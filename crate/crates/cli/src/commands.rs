use std::fs;
use std::path::{Path, PathBuf};

use depcae::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use depcae::detect::{scores_csv, ScoredWindow, ThresholdReport};
use depcae::eval::agreement::agreement_report;
use depcae::eval::stratify::{stratified_eval, StratifiedReport};
use depcae::eval::{evaluate, MetricsReport};
use depcae::experiment::{
    ablation_run, score_entries, select_threshold, train, train_log_csv, DepthSource,
    ExperimentConfig, ExperimentData,
};
use depcae::pipeline::manifest::{Dataset, Split};
use depcae::pipeline::tns::load_tns;
use depcae::sim::benchmark::{make_benchmark, BenchmarkProfile};
use depcae::{DepCae, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{Command, ConfigArgs, EvalArgs, SplitArg};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] depcae::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(
        "config hash mismatch: scores {scores}, threshold {threshold} (use --force to override)"
    )]
    HashMismatch { scores: String, threshold: String },
}

impl CliError {
    pub fn is_usage(&self) -> bool {
        matches!(self, CliError::Usage(_))
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// One JSON event per line on stderr.
pub fn log(event: &str, fields: serde_json::Value) {
    let mut v = json!({ "event": event });
    if let (Some(obj), serde_json::Value::Object(extra)) = (v.as_object_mut(), fields) {
        obj.extend(extra);
    }
    eprintln!("{v}");
}

/// Scores of one split, tagged with the config that produced the model.
#[derive(Serialize, Deserialize)]
struct ScoresFile {
    config_hash: String,
    split: Split,
    windows: Vec<ScoredWindow>,
}

#[derive(Serialize, Deserialize)]
struct EvalFile {
    config_hash: String,
    threshold: ThresholdReport,
    metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    stratified: Option<StratifiedReport>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.into(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => read_json(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.dataset {
            c.dataset = v.clone();
        }
        if let Some(v) = &self.out {
            c.output = v.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.epochs {
            c.training.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.training.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.training.adam.lr = v;
        }
        if let Some(v) = self.loss {
            c.loss = v.into();
        }
        if let Some(v) = self.depth_exponent {
            c.depth_exponent = v;
        }
        if let Some(v) = &self.channels {
            c.channel_plan = v.clone();
        }
        if let Some(v) = self.threshold_method {
            c.threshold = v.into();
        }
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }
}

fn load_depth(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Tensor<f64>> {
    Ok(match &cfg.depth_source {
        DepthSource::Static => ds.static_depth()?,
        DepthSource::File { path } => load_tns(path)?.1.to_f64(),
    })
}

fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let ds = Dataset::open(&cfg.dataset)?;
    Ok(ExperimentData {
        train: ds.load_windows(Split::Train)?,
        test: ds.load_windows(Split::Test)?,
        depth: load_depth(cfg, &ds)?,
        window_frames: ds.manifest.window_frames,
        image_size: ds.manifest.image_size,
    })
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen { profile, seed, out } => gen(&profile, seed, &out),
        Command::Train(args) => cmd_train(&args),
        Command::Score {
            checkpoint,
            dataset,
            split,
            out,
            csv,
        } => score(&checkpoint, dataset, split, &out, csv.as_deref()),
        Command::Threshold {
            scores,
            method,
            out,
        } => {
            let file: ScoresFile = read_json(&scores)?;
            if file.split != Split::Train {
                return Err(CliError::Usage(
                    "thresholds are selected on training-window scores".into(),
                ));
            }
            let mut report = select_threshold(method.into(), &file.windows)?;
            report.config_hash = Some(file.config_hash);
            for w in &report.warnings {
                log("warning", json!({ "message": w }));
            }
            write_json(&out, &report)?;
            log(
                "threshold",
                json!({ "method": report.method.as_str(), "threshold": report.threshold }),
            );
            Ok(())
        }
        Command::Eval(args) => eval(&args),
        Command::Agreement { a, b, out } => {
            let report = agreement_report(&read_labels(&a)?, &read_labels(&b)?)?;
            let text = serde_json::to_string_pretty(&report).expect("plain data");
            match out {
                Some(p) => write_json(&p, &report)?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Validate { dataset } => {
            let ds = Dataset::open(&dataset)?;
            ds.validate_files()?;
            let count = |s| ds.manifest.windows_in(s).count();
            log(
                "valid",
                json!({
                    "dataset": dataset,
                    "clips": ds.manifest.clips.len(),
                    "train_windows": count(Split::Train),
                    "test_windows": count(Split::Test),
                }),
            );
            Ok(())
        }
    }
}

fn gen(profile: &str, seed: u64, out: &Path) -> Result<()> {
    let p = BenchmarkProfile::named(profile).map_err(|e| CliError::Usage(e.to_string()))?;
    let b = make_benchmark(&p, seed, out)?;
    for w in &b.warnings {
        log("warning", json!({ "message": w }));
    }
    log(
        "generated",
        json!({
            "profile": profile,
            "seed": seed,
            "out": out,
            "config_hash": b.manifest.generator.as_ref().map(|g| &g.config_hash),
        }),
    );
    Ok(())
}

fn cmd_train(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let data = load_data(&cfg)?;
    // refuse before any work is done
    data.check_train_purity()?;
    let hash = cfg.hash()?;
    let out = &cfg.output;
    write_json(&out.join("config.json"), &cfg)?;

    let weights = cfg.depth_weights(&data.depth, data.image_size)?;
    let mut model = DepCae::<f32>::new(
        &cfg.channel_plan,
        data.window_frames,
        data.image_size,
        cfg.seed,
    )?;
    let mut meta = CheckpointMeta::for_model(
        &model,
        cfg.seed,
        hash.clone(),
        serde_json::to_value(&cfg).expect("plain data"),
    );
    let ckpt = out.join("model.ckpt");
    let frames: Vec<&Tensor<f32>> = data.train.iter().map(|(_, w)| &w.frames).collect();
    let mut seen = Vec::new();
    let result = train(
        &mut model,
        &frames,
        &weights,
        &cfg.training,
        cfg.seed,
        |entry, m| {
            meta.epochs_completed = entry.epoch;
            save_checkpoint(&ckpt, m, &meta)?;
            log("epoch", json!({ "epoch": entry.epoch, "loss": entry.loss }));
            seen.push(*entry);
            Ok(())
        },
    );
    // the log covers every completed epoch, including after a divergence
    write_file(&out.join("train_log.csv"), train_log_csv(&seen).as_bytes())?;
    result?;
    log(
        "trained",
        json!({ "checkpoint": ckpt, "config_hash": hash, "epochs": cfg.training.epochs }),
    );
    Ok(())
}

fn score(
    checkpoint: &Path,
    dataset: Option<PathBuf>,
    split: SplitArg,
    out: &Path,
    csv: Option<&Path>,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let mut cfg: ExperimentConfig =
        serde_json::from_value(ck.meta.config.clone()).map_err(|source| CliError::Json {
            path: checkpoint.into(),
            source,
        })?;
    if let Some(d) = dataset {
        cfg.dataset = d;
    }
    let ds = Dataset::open(&cfg.dataset)?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let weights = cfg.depth_weights(&load_depth(&cfg, &ds)?, ds.manifest.image_size)?;
    let windows = score_entries(&ck.model, &ds.load_windows(split)?, &weights)?;
    if let Some(p) = csv {
        write_file(p, scores_csv(&windows).as_bytes())?;
    }
    let file = ScoresFile {
        config_hash: ck.meta.config_hash,
        split,
        windows,
    };
    write_json(out, &file)?;
    log(
        "scored",
        json!({ "split": split.as_str(), "windows": file.windows.len(), "out": out }),
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    if args.ablation {
        let cfg = args.config.resolve()?;
        let data = load_data(&cfg)?;
        write_json(&cfg.output.join("config.json"), &cfg)?;
        let report = ablation_run(&cfg, &data)?;
        let path = cfg.output.join("ablation.json");
        write_json(&path, &report)?;
        for a in &report.arms {
            log(
                "arm",
                json!({
                    "arm": a.arm.name(),
                    "auroc": a.report.auroc,
                    "fpr": a.report.fpr,
                    "f1": a.report.f1,
                }),
            );
        }
        log(
            "ablation",
            json!({ "report": path, "config_hash": report.config_hash }),
        );
        return Ok(());
    }
    let (Some(scores), Some(threshold)) = (&args.scores, &args.threshold) else {
        return Err(CliError::Usage(
            "eval needs --scores and --threshold, or --ablation".into(),
        ));
    };
    let file: ScoresFile = read_json(scores)?;
    let thr: ThresholdReport = read_json(threshold)?;
    let thr_hash = thr.config_hash.clone().unwrap_or_default();
    if thr_hash != file.config_hash {
        if !args.force {
            return Err(CliError::HashMismatch {
                scores: file.config_hash,
                threshold: thr_hash,
            });
        }
        log(
            "warning",
            json!({ "message": "config hash mismatch ignored (--force)" }),
        );
    }
    let mut windows = file.windows;
    depcae::detect::classify(&mut windows, thr.threshold);
    let metrics = evaluate(&windows)?;
    let stratified = match args.stratify_by {
        Some(_) => Some(stratified_eval(&windows)?),
        None => None,
    };
    let report = EvalFile {
        config_hash: file.config_hash,
        threshold: thr,
        metrics,
        stratified,
    };
    let out = args
        .config
        .out
        .clone()
        .unwrap_or_else(|| ".".into())
        .join("eval.json");
    write_json(&out, &report)?;
    log(
        "evaluated",
        json!({ "auroc": report.metrics.auroc, "f1": report.metrics.f1, "out": out }),
    );
    Ok(())
}

/// One binary label per line: `0`/`1` or `false`/`true`.
fn read_labels(path: &Path) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| match l {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(CliError::Usage(format!(
                "{}: label `{other}` is not 0/1 or true/false",
                path.display()
            ))),
        })
        .collect()
}
