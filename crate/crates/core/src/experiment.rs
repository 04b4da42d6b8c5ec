//! Experiment configuration, training loop, and the four-arm ablation.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{
    annotated_threshold, classify, iqr_threshold, score_windows, ScoredWindow, ThresholdMethod,
    ThresholdReport,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::hash::config_hash;
use crate::loss::{
    depth_weighted_mse, depth_weighted_mse_backward, DepthNormalization, DepthWeights,
    ReconstructionPair,
};
use crate::model::{DepCae, DEFAULT_CHANNEL_PLAN};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::pipeline::manifest::WindowEntry;
use crate::pipeline::{Window, WindowLabel};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    #[default]
    DepthWeighted,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DepthSource {
    /// The dataset's static reference map.
    #[default]
    Static,
    /// A `.tns` file with an `S×S` or `W×S×S` map.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 50,
            batch_size: 4,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub channel_plan: Vec<usize>,
    pub loss: LossKind,
    pub depth_exponent: f64,
    pub depth_normalization: DepthNormalization,
    pub depth_source: DepthSource,
    pub training: TrainingConfig,
    pub threshold: ThresholdMethod,
    pub seed: u64,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::from("data"),
            channel_plan: DEFAULT_CHANNEL_PLAN.to_vec(),
            loss: LossKind::DepthWeighted,
            depth_exponent: 1.0,
            depth_normalization: DepthNormalization::MaxToOne,
            depth_source: DepthSource::Static,
            training: TrainingConfig::default(),
            threshold: ThresholdMethod::AnnotatedProxyMaxF1,
            seed: 0,
            output: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    /// Hash of everything that shapes the trained model and its scores. The
    /// output directory is excluded so a run can be moved or repeated
    /// elsewhere.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output = PathBuf::new();
        config_hash(&c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.training.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.depth_exponent > 0.0 && self.depth_exponent.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "depth exponent must be positive, got {}",
                self.depth_exponent
            )));
        }
        if !(self.training.adam.lr > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Weights used both in the training loss and as the anomaly score. Plain
    /// MSE uses unit weights.
    pub fn depth_weights(&self, depth: &Tensor<f64>, image_size: usize) -> Result<DepthWeights> {
        match self.loss {
            LossKind::Mse => Ok(DepthWeights::unit(image_size)),
            LossKind::DepthWeighted => {
                DepthWeights::new(depth, self.depth_exponent, self.depth_normalization)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-batch training loss. Epoch 0 is measured before any update.
    pub loss: f64,
}

/// Stacks windows `[W, S, S]` into a `[B·W, 1, S, S]` batch.
fn batch_of(windows: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let t = Tensor::concat(windows)?;
    let shape = t.shape().to_vec();
    t.reshape(&[shape[0], 1, shape[1], shape[2]])
}

fn batch_loss(model: &DepCae<f32>, x: &Tensor<f32>, weights: &DepthWeights) -> Result<f64> {
    let (y, _) = model.forward_train(x)?;
    depth_weighted_mse(&ReconstructionPair::new(x, &y)?, weights)
}

/// Trains `model` in place with Adam on shuffled mini-batches.
///
/// `on_epoch` sees the model after each epoch (including epoch 0) and may be
/// used to checkpoint. A non-finite loss stops training with
/// [`Error::Diverged`], leaving the model at its last finite state.
pub fn train(
    model: &mut DepCae<f32>,
    windows: &[&Tensor<f32>],
    weights: &DepthWeights,
    cfg: &TrainingConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog, &DepCae<f32>) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("no training windows".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AdamState::new(model.params().into_iter().map(|(_, t)| t));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs + 1);

    let mut initial = 0.0;
    let batches = order.chunks(cfg.batch_size).count();
    for chunk in order.chunks(cfg.batch_size) {
        let x = batch_of(&chunk.iter().map(|&i| windows[i]).collect::<Vec<_>>())?;
        initial += batch_loss(model, &x, weights)?;
    }
    let first = EpochLog {
        epoch: 0,
        loss: initial / batches as f64,
    };
    if !first.loss.is_finite() {
        return Err(Error::Diverged(format!("initial loss is {}", first.loss)));
    }
    on_epoch(&first, model)?;
    log.push(first);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = batch_of(&chunk.iter().map(|&i| windows[i]).collect::<Vec<_>>())?;
            let (y, trace) = model.forward_train(&x)?;
            let pair = ReconstructionPair::new(&x, &y).map_err(|e| match e {
                Error::NonFinite(m) => Error::Diverged(format!("epoch {epoch}: {m}")),
                other => other,
            })?;
            let loss = depth_weighted_mse(&pair, weights)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("epoch {epoch}: loss is {loss}")));
            }
            let g = depth_weighted_mse_backward(&pair, weights)?;
            let grads = model.backward(&trace, &g)?;
            {
                let mut params = model.params_mut();
                let mut named: Vec<(&str, &mut Tensor<f32>)> = params
                    .iter_mut()
                    .map(|(n, t)| (n.as_str(), &mut **t))
                    .collect();
                adam_step(&mut named, &grads, &mut state, &cfg.adam).map_err(|e| match e {
                    Error::NonFinite(m) => Error::Diverged(format!("epoch {epoch}: {m}")),
                    other => other,
                })?;
            }
            model.update_running_stats(&trace);
            total += loss;
        }
        let entry = EpochLog {
            epoch,
            loss: total / batches as f64,
        };
        on_epoch(&entry, model)?;
        log.push(entry);
    }
    Ok(log)
}

/// Training-log CSV: `epoch,loss`.
pub fn train_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss\n");
    for e in log {
        out.push_str(&format!("{},{:e}\n", e.epoch, e.loss));
    }
    out
}

/// Labeled windows of both splits plus the depth map.
pub struct ExperimentData {
    pub train: Vec<(WindowEntry, Window)>,
    pub test: Vec<(WindowEntry, Window)>,
    pub depth: Tensor<f64>,
    pub window_frames: usize,
    pub image_size: usize,
}

impl ExperimentData {
    pub fn check_train_purity(&self) -> Result<()> {
        match self
            .train
            .iter()
            .find(|(e, _)| e.label == WindowLabel::Anomalous)
        {
            Some((e, _)) => Err(Error::Manifest(format!(
                "train split contains anomalous window `{}`",
                e.id
            ))),
            None => Ok(()),
        }
    }
}

/// Scores windows and carries over the manifest id and group.
pub fn score_entries(
    model: &DepCae<f32>,
    entries: &[(WindowEntry, Window)],
    weights: &DepthWeights,
) -> Result<Vec<ScoredWindow>> {
    let windows: Vec<Window> = entries.iter().map(|(_, w)| w.clone()).collect();
    let mut scored = score_windows(model, &windows, weights)?;
    for (s, (e, _)) in scored.iter_mut().zip(entries) {
        s.id = e.id.clone();
        s.group = e.group.clone();
    }
    Ok(scored)
}

/// Operating threshold from scored training windows.
pub fn select_threshold(
    method: ThresholdMethod,
    train: &[ScoredWindow],
) -> Result<ThresholdReport> {
    let scores: Vec<f64> = train.iter().map(|w| w.score).collect();
    match method {
        ThresholdMethod::AnnotatedProxyMaxF1 => {
            let proxy: Vec<bool> = train
                .iter()
                .map(|w| w.label == Some(WindowLabel::ProxyOutlier))
                .collect();
            annotated_threshold(&scores, &proxy)
        }
        ThresholdMethod::IqrProxyMaxF1 => iqr_threshold(&scores),
    }
}

/// A trained model with its scores on both splits.
pub struct TrainedRun {
    pub loss: LossKind,
    pub model: DepCae<f32>,
    pub log: Vec<EpochLog>,
    pub train_scores: Vec<ScoredWindow>,
    pub test_scores: Vec<ScoredWindow>,
}

pub fn train_and_score(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<TrainedRun> {
    cfg.validate()?;
    data.check_train_purity()?;
    let weights = cfg.depth_weights(&data.depth, data.image_size)?;
    let mut model = DepCae::<f32>::new(
        &cfg.channel_plan,
        data.window_frames,
        data.image_size,
        cfg.seed,
    )?;
    let frames: Vec<&Tensor<f32>> = data.train.iter().map(|(_, w)| &w.frames).collect();
    let log = train(
        &mut model,
        &frames,
        &weights,
        &cfg.training,
        cfg.seed,
        |_, _| Ok(()),
    )?;
    Ok(TrainedRun {
        loss: cfg.loss,
        train_scores: score_entries(&model, &data.train, &weights)?,
        test_scores: score_entries(&model, &data.test, &weights)?,
        model,
        log,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "depWgtOnly")]
    DepWgtOnly,
    #[serde(rename = "anntThrOnly")]
    AnntThrOnly,
    #[serde(rename = "depCAE")]
    DepCae,
}

impl Arm {
    pub const ALL: [Arm; 4] = [
        Arm::Baseline,
        Arm::DepWgtOnly,
        Arm::AnntThrOnly,
        Arm::DepCae,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::DepWgtOnly => "depWgtOnly",
            Arm::AnntThrOnly => "anntThrOnly",
            Arm::DepCae => "depCAE",
        }
    }

    pub fn loss(self) -> LossKind {
        match self {
            Arm::Baseline | Arm::AnntThrOnly => LossKind::Mse,
            Arm::DepWgtOnly | Arm::DepCae => LossKind::DepthWeighted,
        }
    }

    pub fn threshold(self) -> ThresholdMethod {
        match self {
            Arm::Baseline | Arm::DepWgtOnly => ThresholdMethod::IqrProxyMaxF1,
            Arm::AnntThrOnly | Arm::DepCae => ThresholdMethod::AnnotatedProxyMaxF1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub loss: LossKind,
    pub threshold: ThresholdReport,
    pub report: MetricsReport,
    pub scores: Vec<ScoredWindow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_hash: String,
    pub seed: u64,
    pub arms: Vec<ArmResult>,
    /// Loss per epoch for the plain-MSE and depth-weighted models.
    pub mse_log: Vec<EpochLog>,
    pub depth_weighted_log: Vec<EpochLog>,
}

impl AblationReport {
    pub fn arm(&self, arm: Arm) -> &ArmResult {
        self.arms
            .iter()
            .find(|a| a.arm == arm)
            .expect("all arms present")
    }
}

/// Applies a threshold method to one trained run.
pub fn evaluate_arm(arm: Arm, run: &TrainedRun) -> Result<ArmResult> {
    let threshold = select_threshold(arm.threshold(), &run.train_scores)?;
    let mut scores = run.test_scores.clone();
    classify(&mut scores, threshold.threshold);
    Ok(ArmResult {
        arm,
        loss: run.loss,
        report: evaluate(&scores)?,
        threshold,
        scores,
    })
}

/// Trains one plain-MSE and one depth-weighted model from the same seed and
/// evaluates each under both threshold methods.
pub fn ablation_run(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<AblationReport> {
    let mse = train_and_score(
        &ExperimentConfig {
            loss: LossKind::Mse,
            ..cfg.clone()
        },
        data,
    )?;
    let dw = train_and_score(
        &ExperimentConfig {
            loss: LossKind::DepthWeighted,
            ..cfg.clone()
        },
        data,
    )?;
    let arms = Arm::ALL
        .iter()
        .map(|&a| evaluate_arm(a, if a.loss() == LossKind::Mse { &mse } else { &dw }))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        arms,
        mse_log: mse.log,
        depth_weighted_log: dw.log,
    })
}
