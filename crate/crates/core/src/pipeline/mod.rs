//! Frame preprocessing, windowing, and on-disk dataset formats.

pub mod manifest;
pub mod tns;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_FPS: f64 = 15.0;
pub const DEFAULT_WINDOW_SECONDS: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowLabel {
    Normal,
    ProxyOutlier,
    Anomalous,
}

impl WindowLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            WindowLabel::Normal => "normal",
            WindowLabel::ProxyOutlier => "proxy_outlier",
            WindowLabel::Anomalous => "anomalous",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(WindowLabel::Normal),
            "proxy_outlier" => Ok(WindowLabel::ProxyOutlier),
            "anomalous" => Ok(WindowLabel::Anomalous),
            other => Err(Error::InvalidArgument(format!("unknown label `{other}`"))),
        }
    }
}

/// Annotated event in frames `[start, end)` of a clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub clip: String,
    pub start: usize,
    pub end: usize,
    pub kind: WindowLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// `[W, S, S]` values in `[0, 1]`.
    pub frames: Tensor<f32>,
    pub source_clip: String,
    pub start_frame: usize,
    pub label: WindowLabel,
}

/// Frames per window; `fps · seconds` must be a whole number.
pub fn window_frames(fps: f64, window_seconds: f64) -> Result<usize> {
    let w = fps * window_seconds;
    if !(w.is_finite() && w >= 1.0) || (w - w.round()).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "fps × window seconds must be a positive integer, got {w}"
        )));
    }
    Ok(w.round() as usize)
}

/// Number of complete windows in `n_frames`.
pub fn window_count(n_frames: usize, fps: f64, window_seconds: f64) -> Result<usize> {
    Ok(n_frames / window_frames(fps, window_seconds)?)
}

/// Number of complete windows in a recording of `minutes`.
pub fn window_count_for_minutes(minutes: f64, fps: f64, window_seconds: f64) -> Result<usize> {
    if !(minutes.is_finite() && minutes >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid duration {minutes} min"
        )));
    }
    // round before flooring so 1225.25·60·15 is not lost to representation error
    let frames = (minutes * 60.0 * fps * 1e6).round() / 1e6;
    window_count(frames.floor() as usize, fps, window_seconds)
}

/// Label of window `[start, start + len)`: the highest-precedence kind among
/// intervals overlapping it by at least one frame.
pub fn refine_label<'a>(
    clip: &str,
    start: usize,
    len: usize,
    intervals: impl IntoIterator<Item = &'a Interval>,
) -> WindowLabel {
    intervals
        .into_iter()
        .filter(|iv| iv.clip == clip && iv.start < start + len && start < iv.end)
        .map(|iv| iv.kind)
        .max()
        .unwrap_or(WindowLabel::Normal)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Windowed {
    pub windows: Vec<Window>,
    pub warning: Option<String>,
}

/// Splits a `[n, S, S]` clip into non-overlapping windows and drops the
/// trailing remainder.
pub fn windowize(
    clip: &str,
    frames: &Tensor<f32>,
    fps: f64,
    window_seconds: f64,
    intervals: &[Interval],
) -> Result<Windowed> {
    let w = window_frames(fps, window_seconds)?;
    if frames.rank() != 3 {
        return Err(Error::shape("windowize", "rank", 3, frames.rank()));
    }
    let n = frames.shape()[0];
    let count = n / w;
    let warning = (count == 0)
        .then(|| format!("clip `{clip}` has {n} frames, fewer than one {w}-frame window"));
    let windows = (0..count)
        .map(|k| {
            let start = k * w;
            Ok(Window {
                frames: frames.slice_outer(start, start + w)?,
                source_clip: clip.to_string(),
                start_frame: start,
                label: refine_label(clip, start, w, intervals),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Windowed { windows, warning })
}

/// 8-bit frame as captured, gray (1 channel) or RGB (3), row-major interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Grayscale, scale to `[0, 1]`, and bilinearly resize to `target × target`.
pub fn preprocess_frame(raw: &RawFrame, target: usize) -> Result<Vec<f32>> {
    let (h, w, c) = (raw.height, raw.width, raw.channels);
    if h == 0 || w == 0 || target == 0 {
        return Err(Error::InvalidArgument("empty frame".into()));
    }
    if c != 1 && c != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected 1 or 3 channels, got {c}"
        )));
    }
    if raw.data.len() != h * w * c {
        return Err(Error::shape(
            "preprocess_frame",
            "data",
            h * w * c,
            raw.data.len(),
        ));
    }
    let gray: Vec<f64> = raw
        .data
        .chunks_exact(c)
        .map(|px| {
            let v = if c == 1 {
                px[0] as f64
            } else {
                0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
            };
            v / 255.0
        })
        .collect();
    if h == target && w == target {
        return Ok(gray.into_iter().map(|v| v as f32).collect());
    }
    Ok(resize_bilinear(&gray, h, w, target, target)
        .into_iter()
        .map(|v| v as f32)
        .collect())
}

/// Bilinear resampling with pixel centers at half-integers and edge clamping.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let axis = |o: usize, n_in: usize, n_out: usize| {
        let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, x - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let (r0, r1, fr) = axis(r, h, out_h);
        for c in 0..out_w {
            let (c0, c1, fc) = axis(c, w, out_w);
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bottom = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}
