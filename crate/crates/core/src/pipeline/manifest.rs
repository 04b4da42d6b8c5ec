//! `manifest.json`: clips, annotated intervals and refined window labels.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tns::{load_tns, write_atomic};
use super::{refine_label, Interval, Window, WindowLabel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub profile: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthSourceKind {
    StaticReference,
    PerFrame,
    ExternalFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthEntry {
    pub path: String,
    pub source: DepthSourceKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub split: Split,
    pub path: String,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub id: String,
    pub clip: String,
    pub start: usize,
    pub label: WindowLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
    pub fps: f64,
    pub window_frames: usize,
    pub image_size: usize,
    pub depth: DepthEntry,
    pub clips: Vec<ClipEntry>,
    pub intervals: Vec<Interval>,
    pub windows: Vec<WindowEntry>,
}

impl DatasetManifest {
    pub fn clip(&self, id: &str) -> Option<&ClipEntry> {
        self.clips.iter().find(|c| c.id == id)
    }

    pub fn split_of(&self, w: &WindowEntry) -> Option<Split> {
        self.clip(&w.clip).map(|c| c.split)
    }

    pub fn windows_in(&self, split: Split) -> impl Iterator<Item = &WindowEntry> {
        self.windows
            .iter()
            .filter(move |w| self.split_of(w) == Some(split))
    }

    /// Structural checks plus train-split purity. Does not touch the disk.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Manifest(m));
        if self.format_version == 0 || self.format_version > MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.format_version,
                supported: MANIFEST_VERSION,
            });
        }
        if self.window_frames == 0 || self.image_size == 0 || !(self.fps > 0.0) {
            return bad("fps, window_frames and image_size must be positive".into());
        }
        let mut clips = HashMap::new();
        for c in &self.clips {
            if clips.insert(c.id.as_str(), c).is_some() {
                return bad(format!("duplicate clip id `{}`", c.id));
            }
        }
        for iv in &self.intervals {
            let Some(c) = clips.get(iv.clip.as_str()) else {
                return bad(format!("interval references unknown clip `{}`", iv.clip));
            };
            if iv.start >= iv.end || iv.end > c.frames {
                return bad(format!(
                    "interval {}..{} out of range for clip `{}`",
                    iv.start, iv.end, iv.clip
                ));
            }
        }
        let mut ids = HashSet::new();
        for w in &self.windows {
            if !ids.insert(w.id.as_str()) {
                return bad(format!("duplicate window id `{}`", w.id));
            }
            let Some(c) = clips.get(w.clip.as_str()) else {
                return bad(format!(
                    "window `{}` references unknown clip `{}`",
                    w.id, w.clip
                ));
            };
            if w.start % self.window_frames != 0 || w.start + self.window_frames > c.frames {
                return bad(format!(
                    "window `{}` at frame {} does not fit clip `{}`",
                    w.id, w.start, w.clip
                ));
            }
            let refined = refine_label(&w.clip, w.start, self.window_frames, &self.intervals);
            if refined != w.label {
                return bad(format!(
                    "window `{}` labeled {} but its intervals give {}",
                    w.id,
                    w.label.as_str(),
                    refined.as_str()
                ));
            }
            if c.split == Split::Train && w.label == WindowLabel::Anomalous {
                return bad(format!("train split contains anomalous window `{}`", w.id));
            }
        }
        Ok(())
    }

    /// `clip_id,window_start,label` rows.
    pub fn labels_csv(&self) -> String {
        let mut out = String::from("clip_id,window_start,label\n");
        for w in &self.windows {
            out.push_str(&format!("{},{},{}\n", w.clip, w.start, w.label.as_str()));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// A dataset directory opened through its manifest.
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(Dataset { root, manifest })
    }

    pub fn save_manifest(&self) -> Result<()> {
        write_atomic(
            &self.root.join(MANIFEST_FILE),
            self.manifest.to_json()?.as_bytes(),
        )
    }

    /// Manifest validation plus existence and shape of every referenced file.
    pub fn validate_files(&self) -> Result<()> {
        let s = self.manifest.image_size;
        for c in &self.manifest.clips {
            let t = self.load_clip(&c.id)?;
            if t.shape() != [c.frames, s, s] {
                return Err(Error::Manifest(format!(
                    "clip `{}` has shape {:?}, manifest says [{}, {s}, {s}]",
                    c.id,
                    t.shape(),
                    c.frames
                )));
            }
        }
        let z = self.static_depth()?;
        if z.shape() != [s, s] {
            return Err(Error::Manifest(format!(
                "depth map has shape {:?}",
                z.shape()
            )));
        }
        Ok(())
    }

    pub fn load_clip(&self, id: &str) -> Result<Tensor<f32>> {
        let c = self
            .manifest
            .clip(id)
            .ok_or_else(|| Error::Manifest(format!("unknown clip `{id}`")))?;
        Ok(load_tns(self.root.join(&c.path))?.1.to_f32())
    }

    pub fn static_depth(&self) -> Result<Tensor<f64>> {
        Ok(load_tns(self.root.join(&self.manifest.depth.path))?
            .1
            .to_f64())
    }

    /// Every manifest window of `split`, in manifest order, paired with its entry.
    pub fn load_windows(&self, split: Split) -> Result<Vec<(WindowEntry, Window)>> {
        cut_windows(&self.manifest, split, |id| self.load_clip(id))
    }
}

/// Slices the windows of `split` out of clips supplied by `load`, which is
/// called once per run of consecutive windows from the same clip.
pub fn cut_windows(
    manifest: &DatasetManifest,
    split: Split,
    mut load: impl FnMut(&str) -> Result<Tensor<f32>>,
) -> Result<Vec<(WindowEntry, Window)>> {
    let mut out = Vec::new();
    let mut cache: Option<(String, Tensor<f32>)> = None;
    let w = manifest.window_frames;
    for e in manifest.windows_in(split) {
        if cache.as_ref().map_or(true, |c| c.0 != e.clip) {
            cache = Some((e.clip.clone(), load(&e.clip)?));
        }
        let clip = &cache.as_ref().unwrap().1;
        out.push((
            e.clone(),
            Window {
                frames: clip.slice_outer(e.start, e.start + w)?,
                source_clip: e.clip.clone(),
                start_frame: e.start,
                label: e.label,
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Interval;

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            format_version: 1,
            generator: None,
            fps: 15.0,
            window_frames: 75,
            image_size: 4,
            depth: DepthEntry {
                path: "depth/static.tns".into(),
                source: DepthSourceKind::StaticReference,
            },
            clips: vec![
                ClipEntry {
                    id: "a".into(),
                    split: Split::Train,
                    path: "train/clips/a.tns".into(),
                    frames: 150,
                },
                ClipEntry {
                    id: "b".into(),
                    split: Split::Test,
                    path: "test/clips/b.tns".into(),
                    frames: 75,
                },
            ],
            intervals: vec![Interval {
                clip: "b".into(),
                start: 5,
                end: 9,
                kind: WindowLabel::Anomalous,
                group: Some("g1".into()),
            }],
            windows: vec![
                WindowEntry {
                    id: "a/0".into(),
                    clip: "a".into(),
                    start: 0,
                    label: WindowLabel::Normal,
                    group: None,
                },
                WindowEntry {
                    id: "b/0".into(),
                    clip: "b".into(),
                    start: 0,
                    label: WindowLabel::Anomalous,
                    group: Some("g1".into()),
                },
            ],
        }
    }

    #[test]
    fn valid_manifest_passes_and_round_trips() {
        let m = manifest();
        m.validate().unwrap();
        let back: DatasetManifest = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            m.labels_csv(),
            "clip_id,window_start,label\na,0,normal\nb,0,anomalous\n"
        );
    }

    #[test]
    fn train_purity_is_enforced() {
        let mut m = manifest();
        m.intervals[0].clip = "a".into();
        m.windows[0].label = WindowLabel::Anomalous;
        m.windows[1].label = WindowLabel::Normal;
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("train split contains anomalous"), "{err}");
    }

    #[test]
    fn inconsistent_label_is_rejected() {
        let mut m = manifest();
        m.windows[1].label = WindowLabel::Normal;
        assert!(m.validate().is_err());
    }

    #[test]
    fn window_must_fit_clip() {
        let mut m = manifest();
        m.windows[0].start = 100;
        assert!(m.validate().is_err());
        m.windows[0].start = 150;
        assert!(m.validate().is_err());
    }

    #[test]
    fn future_version_is_rejected() {
        let mut m = manifest();
        m.format_version = 2;
        assert!(matches!(
            m.validate(),
            Err(Error::UnsupportedVersion { .. })
        ));
    }
}
