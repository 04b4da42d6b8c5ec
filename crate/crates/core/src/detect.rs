//! Window scoring and operating-threshold selection.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{depth_weighted_mse, DepthWeights, ReconstructionPair};
use crate::model::DepCae;
use crate::pipeline::{Window, WindowLabel};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredWindow {
    pub id: String,
    pub score: f64,
    pub label: Option<WindowLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub predicted: bool,
}

/// Manifest-style id of a window: `clip@start`.
pub fn window_id(clip: &str, start: usize) -> String {
    format!("{clip}@{start}")
}

/// Depth-weighted reconstruction error of one `[W, S, S]` window.
pub fn score_window<T: Real>(
    model: &DepCae<T>,
    frames: &crate::Tensor<T>,
    weights: &DepthWeights,
) -> Result<f64> {
    let out = model.reconstruct(frames)?;
    depth_weighted_mse(&ReconstructionPair::new(frames, &out)?, weights)
}

/// Scores windows in parallel. Each score depends only on its own window, so
/// the result is independent of order and thread count. `predicted` is left
/// false until [`classify`] runs.
pub fn score_windows(
    model: &DepCae<f32>,
    windows: &[Window],
    weights: &DepthWeights,
) -> Result<Vec<ScoredWindow>> {
    windows
        .par_iter()
        .map(|w| {
            Ok(ScoredWindow {
                id: window_id(&w.source_clip, w.start_frame),
                score: score_window(model, &w.frames, weights)?,
                label: Some(w.label),
                group: None,
                predicted: false,
            })
        })
        .collect()
}

/// `predicted = score > threshold`.
pub fn classify(windows: &mut [ScoredWindow], threshold: f64) {
    for w in windows {
        w.predicted = w.score > threshold;
    }
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IqrProxy {
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub fence: f64,
    /// True where the score lies strictly above the fence.
    pub labels: Vec<bool>,
    pub warning: Option<String>,
}

/// Flags training scores above `Q3 + 1.5·IQR` as proxy anomalies.
pub fn iqr_proxy_labels(scores: &[f64]) -> Result<IqrProxy> {
    if scores.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "IQR needs at least 4 scores, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("training scores".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_linear(&sorted, 0.25);
    let q3 = quantile_linear(&sorted, 0.75);
    let iqr = q3 - q1;
    let fence = q3 + 1.5 * iqr;
    let labels: Vec<bool> = scores.iter().map(|&s| s > fence).collect();
    let warning = if iqr == 0.0 {
        Some("interquartile range is zero; no proxy outliers".to_string())
    } else if !labels.contains(&true) {
        Some(format!(
            "no training score exceeds the IQR fence {fence}; proxy set is degenerate"
        ))
    } else {
        None
    };
    Ok(IqrProxy {
        q1,
        q3,
        iqr,
        fence,
        labels,
        warning,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f1: f64,
    /// Some candidate reaches F1 = 1 on the proxy set.
    pub separable: bool,
}

/// F1 as the exact fraction `2tp / (2tp + fp + fn)`.
#[derive(Clone, Copy)]
struct F1Frac {
    num: u64,
    den: u64,
}

impl F1Frac {
    fn cmp(self, o: F1Frac) -> Ordering {
        // 0/0 counts as 0
        let l = self.num as u128 * o.den.max(1) as u128;
        let r = o.num as u128 * self.den.max(1) as u128;
        l.cmp(&r)
    }

    fn value(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }
}

/// Picks the candidate `t` maximizing F1 of `score > t` against the proxy
/// labels, preferring the larger threshold on ties.
pub fn select_threshold_max_f1(
    candidates: &[f64],
    proxy_labels: &[bool],
) -> Result<ThresholdChoice> {
    if candidates.len() != proxy_labels.len() {
        return Err(Error::shape(
            "select_threshold_max_f1",
            "labels",
            candidates.len(),
            proxy_labels.len(),
        ));
    }
    if candidates.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("threshold candidates".into()));
    }
    let positives = proxy_labels.iter().filter(|&&l| l).count();
    let negatives = proxy_labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClassProxy(format!(
            "{positives} positives, {negatives} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[b].total_cmp(&candidates[a]));
    // sweep thresholds from the largest down; at a threshold t every score
    // strictly greater than t is predicted positive
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut best: Option<(F1Frac, f64)> = None;
    let mut i = 0;
    while i < order.len() {
        let t = candidates[order[i]];
        let f = F1Frac {
            num: 2 * tp,
            den: 2 * tp + fp + (positives as u64 - tp),
        };
        if best.is_none_or(|(b, _)| f.cmp(b) == Ordering::Greater) {
            best = Some((f, t));
        }
        while i < order.len() && candidates[order[i]] == t {
            if proxy_labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    let (f, threshold) = best.expect("non-empty candidates");
    Ok(ThresholdChoice {
        threshold,
        f1: f.value(),
        separable: f.num == f.den,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMethod {
    AnnotatedProxyMaxF1,
    IqrProxyMaxF1,
}

impl ThresholdMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMethod::AnnotatedProxyMaxF1 => "annotated-proxy-max-f1",
            ThresholdMethod::IqrProxyMaxF1 => "iqr-proxy-max-f1",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub method: ThresholdMethod,
    pub proxy_positives: usize,
    pub proxy_negatives: usize,
    pub proxy_f1: f64,
    pub separable: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn max_score(scores: &[f64]) -> f64 {
    scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Threshold from training-window scores using annotated proxy outliers as
/// positives and every other training window as negatives.
pub fn annotated_threshold(train_scores: &[f64], is_proxy: &[bool]) -> Result<ThresholdReport> {
    let c = select_threshold_max_f1(train_scores, is_proxy)?;
    let positives = is_proxy.iter().filter(|&&p| p).count();
    let mut warnings = Vec::new();
    if !c.separable {
        warnings.push(format!("proxy set is not separable; best F1 {:.4}", c.f1));
    }
    Ok(ThresholdReport {
        threshold: c.threshold,
        method: ThresholdMethod::AnnotatedProxyMaxF1,
        proxy_positives: positives,
        proxy_negatives: is_proxy.len() - positives,
        proxy_f1: c.f1,
        separable: c.separable,
        warnings,
        config_hash: None,
    })
}

/// Threshold from training-window scores using IQR outliers as the proxy
/// positives. With no outliers the largest training score is used.
pub fn iqr_threshold(train_scores: &[f64]) -> Result<ThresholdReport> {
    let proxy = iqr_proxy_labels(train_scores)?;
    let positives = proxy.labels.iter().filter(|&&p| p).count();
    let mut warnings: Vec<String> = proxy.warning.iter().cloned().collect();
    if positives == 0 {
        warnings.push("falling back to the largest training score".into());
        return Ok(ThresholdReport {
            threshold: max_score(train_scores),
            method: ThresholdMethod::IqrProxyMaxF1,
            proxy_positives: 0,
            proxy_negatives: train_scores.len(),
            proxy_f1: 0.0,
            separable: false,
            warnings,
            config_hash: None,
        });
    }
    let c = select_threshold_max_f1(train_scores, &proxy.labels)?;
    Ok(ThresholdReport {
        threshold: c.threshold,
        method: ThresholdMethod::IqrProxyMaxF1,
        proxy_positives: positives,
        proxy_negatives: train_scores.len() - positives,
        proxy_f1: c.f1,
        separable: c.separable,
        warnings,
        config_hash: None,
    })
}

/// Scores CSV: `window_id,score,label,predicted`.
pub fn scores_csv(windows: &[ScoredWindow]) -> String {
    let mut out = String::from("window_id,score,label,predicted\n");
    for w in windows {
        let label = w.label.map_or("", |l| l.as_str());
        out.push_str(&format!(
            "{},{:e},{},{}\n",
            w.id, w.score, label, w.predicted
        ));
    }
    out
}

pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoredWindow>> {
    let mut lines = text.lines();
    if lines.next() != Some("window_id,score,label,predicted") {
        return Err(Error::Malformed("scores CSV header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Malformed(format!("scores CSV row `{l}`")));
            }
            let score = f[1]
                .parse::<f64>()
                .map_err(|_| Error::Malformed(format!("score `{}`", f[1])))?;
            let label = if f[2].is_empty() {
                None
            } else {
                Some(WindowLabel::parse(f[2])?)
            };
            let predicted = f[3]
                .parse::<bool>()
                .map_err(|_| Error::Malformed(format!("predicted `{}`", f[3])))?;
            Ok(ScoredWindow {
                id: f[0].to_string(),
                score,
                label,
                group: None,
                predicted,
            })
        })
        .collect()
}
