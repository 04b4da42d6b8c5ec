//! Named synthetic benchmarks: a corridor watched by a fixed camera, with
//! people walking at a range of depths, proxy-outlier activity, and
//! anomalous actors placed either far from or near the camera.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{render_scene, AnomalyKind, Background, Corridor, SceneObject, Waypoint};
use crate::error::{Error, Result};
use crate::geometry::PinholeCamera;
use crate::hash::config_hash;
use crate::pipeline::manifest::{
    cut_windows, ClipEntry, DatasetManifest, DepthEntry, DepthSourceKind, GeneratorInfo, Split,
    WindowEntry, MANIFEST_FILE, MANIFEST_VERSION,
};
use crate::pipeline::tns::{save_tns, write_atomic};
use crate::pipeline::{Interval, Window, WindowLabel};
use crate::tensor::Tensor;

pub const DEFAULT_PROFILE: &str = "corridor";
pub const PROFILES: [&str; 3] = ["corridor", "corridor-small", "corridor-calm"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkProfile {
    pub name: String,
    pub image_size: usize,
    pub focal: f64,
    pub fps: f64,
    pub window_frames: usize,
    pub corridor: Corridor,
    pub windows_per_clip: usize,
    pub train_clips: usize,
    pub test_clips: usize,
    /// Train windows carrying a proxy-outlier event.
    pub train_proxy_windows: usize,
    /// Test windows carrying a proxy-outlier event (negatives at evaluation).
    pub test_proxy_windows: usize,
    pub test_anomalous_windows: usize,
    /// Anomalous actors are spread round-robin over this many groups.
    pub anomaly_groups: usize,
    /// Depth ranges for anomalous actors; alternate windows use each.
    pub far_depth: (f64, f64),
    pub near_depth: (f64, f64),
    pub people_per_window: (usize, usize),
    pub people_depth: (f64, f64),
    pub crowd_size: (usize, usize),
    pub large_object_side: (f64, f64),
    /// Depth range for large objects and close passers-by.
    pub close_depth: (f64, f64),
}

impl BenchmarkProfile {
    pub fn named(name: &str) -> Result<Self> {
        let corridor = BenchmarkProfile {
            name: "corridor".into(),
            image_size: 64,
            focal: 64.0,
            fps: 15.0,
            window_frames: 75,
            corridor: Corridor::default(),
            windows_per_clip: 4,
            train_clips: 24,
            test_clips: 25,
            train_proxy_windows: 10,
            test_proxy_windows: 10,
            test_anomalous_windows: 7,
            anomaly_groups: 3,
            far_depth: (12.0, 20.0),
            near_depth: (5.0, 9.0),
            people_per_window: (1, 3),
            people_depth: (5.0, 20.0),
            crowd_size: (6, 9),
            large_object_side: (2.0, 2.5),
            close_depth: (3.2, 4.5),
        };
        match name {
            "corridor" => Ok(corridor),
            "corridor-calm" => Ok(BenchmarkProfile {
                name: name.into(),
                test_anomalous_windows: 0,
                anomaly_groups: 0,
                ..corridor
            }),
            "corridor-small" => Ok(BenchmarkProfile {
                name: name.into(),
                image_size: 16,
                focal: 16.0,
                window_frames: 8,
                windows_per_clip: 2,
                train_clips: 3,
                test_clips: 4,
                train_proxy_windows: 1,
                test_proxy_windows: 1,
                test_anomalous_windows: 2,
                anomaly_groups: 1,
                ..corridor
            }),
            other => Err(Error::InvalidArgument(format!(
                "unknown profile `{other}` (known: {})",
                PROFILES.join(", ")
            ))),
        }
    }

    pub fn train_windows(&self) -> usize {
        self.train_clips * self.windows_per_clip
    }

    pub fn test_windows(&self) -> usize {
        self.test_clips * self.windows_per_clip
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| {
            Err(Error::InvalidArgument(format!(
                "profile `{}`: {m}",
                self.name
            )))
        };
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return bad("image size must be a positive multiple of 4");
        }
        if self.window_frames == 0 || self.windows_per_clip == 0 {
            return bad("window and clip lengths must be positive");
        }
        if self.train_proxy_windows > self.train_windows() {
            return bad("more proxy windows than train windows");
        }
        if self.test_proxy_windows + self.test_anomalous_windows > self.test_windows() {
            return bad("more events than test windows");
        }
        if self.test_anomalous_windows > 0 && self.anomaly_groups == 0 {
            return bad("anomalies need at least one group");
        }
        Ok(())
    }

    fn camera(&self) -> Result<PinholeCamera> {
        PinholeCamera::new(self.focal, self.image_size)
    }
}

/// What happens in one window besides ordinary foot traffic.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Event {
    Calm,
    Proxy,
    Anomaly {
        near: bool,
        kind: AnomalyKind,
        group: usize,
    },
}

/// A generated benchmark held in memory.
pub struct Benchmark {
    pub manifest: DatasetManifest,
    /// Frame stacks aligned with `manifest.clips`.
    pub clips: Vec<Tensor<f32>>,
    pub depth: Tensor<f64>,
    pub warnings: Vec<String>,
}

impl Benchmark {
    pub fn windows(&self, split: Split) -> Result<Vec<(WindowEntry, Window)>> {
        cut_windows(&self.manifest, split, |id| {
            let i = self
                .manifest
                .clips
                .iter()
                .position(|c| c.id == id)
                .expect("manifest clip");
            Ok(self.clips[i].clone())
        })
    }

    /// Writes clips, the static depth map, and `manifest.json` under `root`.
    pub fn write(&self, root: &Path) -> Result<()> {
        for (entry, frames) in self.manifest.clips.iter().zip(&self.clips) {
            save_tns(root.join(&entry.path), &entry.id, frames)?;
        }
        save_tns(root.join(&self.manifest.depth.path), "depth", &self.depth)?;
        write_atomic(
            &root.join(MANIFEST_FILE),
            self.manifest.to_json()?.as_bytes(),
        )
    }
}

/// Generates `profile` with `seed` and writes it under `root`.
pub fn make_benchmark(profile: &BenchmarkProfile, seed: u64, root: &Path) -> Result<Benchmark> {
    let b = generate(profile, seed)?;
    b.write(root)?;
    Ok(b)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn count(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi.max(lo))
}

/// Person of height `side` standing on the floor and walking across the
/// corridor during `[start, end)`.
fn walker(
    rng: &mut ChaCha8Rng,
    p: &BenchmarkProfile,
    z: f64,
    side: f64,
    start: usize,
    end: usize,
) -> SceneObject {
    let hw = p.corridor.half_width;
    let reach = (hw - side / 2.0).max(0.0);
    let y = hw - side / 2.0;
    let x0 = uniform(rng, (-reach, reach));
    let x1 = uniform(rng, (-reach, reach));
    let z1 = (z + uniform(rng, (-1.0, 1.0))).max(p.close_depth.0);
    SceneObject::moving(
        Waypoint {
            frame: start,
            position: [x0, y, z],
        },
        Waypoint {
            frame: end - 1,
            position: [x1, y, z1],
        },
        side,
        uniform(rng, (0.35, 0.65)),
    )
    .textured(OBJECT_TEXTURE)
    .during(start, end)
}

/// Proxy-outlier event: an oversized object, a crowd, or someone passing
/// close to the camera along a wall.
fn proxy_event(
    rng: &mut ChaCha8Rng,
    p: &BenchmarkProfile,
    start: usize,
    end: usize,
) -> Vec<SceneObject> {
    match rng.gen_range(0..3) {
        0 => {
            let side = uniform(rng, p.large_object_side);
            let z = uniform(rng, p.close_depth);
            vec![walker(rng, p, z, side, start, end)]
        }
        1 => (0..count(rng, p.crowd_size))
            .map(|_| {
                let z = uniform(rng, p.people_depth);
                walker(rng, p, z, 1.0, start, end)
            })
            .collect(),
        _ => {
            let z = uniform(rng, p.close_depth);
            let hw = p.corridor.half_width;
            let x = if rng.gen() { hw - 0.55 } else { -(hw - 0.55) };
            let mut o = walker(rng, p, z, 1.0, start, end);
            for w in &mut o.waypoints {
                w.position[0] = x;
            }
            vec![o]
        }
    }
}

struct ClipPlan {
    objects: Vec<SceneObject>,
    intervals: Vec<Interval>,
    /// (object index, interval index) of each anomalous actor
    anomalies: Vec<(usize, usize)>,
}

fn plan_clip(p: &BenchmarkProfile, events: &[Event], clip: &str, rng: &mut ChaCha8Rng) -> ClipPlan {
    let w = p.window_frames;
    let mut objects = Vec::new();
    let mut intervals = Vec::new();
    let mut anomalies = Vec::new();
    for (k, ev) in events.iter().enumerate() {
        let (ws, we) = (k * w, (k + 1) * w);
        for _ in 0..count(rng, p.people_per_window) {
            let z = uniform(rng, p.people_depth);
            objects.push(walker(rng, p, z, 1.0, ws, we));
        }
        // events last between 60% and 100% of the window
        let len = rng.gen_range((w * 3).div_ceil(5).max(1)..=w);
        let s = ws + rng.gen_range(0..=w - len);
        match *ev {
            Event::Calm => {}
            Event::Proxy => {
                objects.extend(proxy_event(rng, p, s, s + len));
                intervals.push(Interval {
                    clip: clip.into(),
                    start: s,
                    end: s + len,
                    kind: WindowLabel::ProxyOutlier,
                    group: None,
                });
            }
            Event::Anomaly { near, kind, group } => {
                let z = uniform(rng, if near { p.near_depth } else { p.far_depth });
                let mut o = walker(rng, p, z, 1.0, s, s + len).anomalous(kind);
                // the model sees frames one at a time, so the erratic actor
                // also needs to look unlike the people it moves among
                if kind == AnomalyKind::ErraticMotion {
                    o.intensity = ERRATIC_INTENSITY;
                }
                // keep the actor clear of the walls so it stays visible
                for wp in &mut o.waypoints {
                    wp.position[0] *= 0.5;
                }
                anomalies.push((objects.len(), intervals.len()));
                objects.push(o);
                intervals.push(Interval {
                    clip: clip.into(),
                    start: s,
                    end: s + len,
                    kind: WindowLabel::Anomalous,
                    group: Some(group_name(group)),
                });
            }
        }
    }
    ClipPlan {
        objects,
        intervals,
        anomalies,
    }
}

/// Clip layouts are redrawn up to this many times while an anomalous actor
/// is mostly hidden behind other people.
pub const MAX_LAYOUT_ATTEMPTS: usize = 50;

/// An actor counts as clearly visible in a frame when at least half of its
/// projected square is uncovered.
const VISIBLE_AREA_FRACTION: f64 = 0.5;

/// Fraction of an anomalous actor's active frames in which it must be
/// clearly visible.
const VISIBLE_FRAME_FRACTION: f64 = 0.8;

fn render_clip(
    p: &BenchmarkProfile,
    events: &[Event],
    clip: &str,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f32>, Vec<Interval>, Vec<String>)> {
    let camera = p.camera()?;
    let frames = events.len() * p.window_frames;
    let mut attempt = 0;
    let (plan, scene, clear) = loop {
        attempt += 1;
        let plan = plan_clip(p, events, clip, rng);
        let scene = render_scene(
            &camera,
            &plan.objects,
            frames,
            &Background::Corridor(p.corridor),
            rng.gen(),
        )?;
        let clear = plan.anomalies.iter().all(|&(obj, iv)| {
            let o = &plan.objects[obj];
            let span = plan.intervals[iv].start..plan.intervals[iv].end;
            let total = span.len();
            let seen = span
                .filter(|&t| {
                    let full = (camera.focal * o.side / o.path_position(t)[2]).powi(2);
                    scene.coverage[t][obj] as f64 >= VISIBLE_AREA_FRACTION * full
                })
                .count();
            seen as f64 >= VISIBLE_FRAME_FRACTION * total as f64
        });
        if clear || attempt == MAX_LAYOUT_ATTEMPTS {
            break (plan, scene, clear);
        }
    };
    let ClipPlan {
        mut intervals,
        anomalies,
        ..
    } = plan;
    let mut warnings: Vec<String> = scene
        .warnings
        .iter()
        .map(|wr| format!("{clip}: {}", wr.message))
        .collect();
    if !clear {
        warnings.push(format!(
            "{clip}: an anomalous actor stays mostly hidden after {attempt} layouts"
        ));
    }
    // anomaly labels cover only the frames where the actor can be seen
    let mut dropped = Vec::new();
    for &(obj, iv) in &anomalies {
        let span = intervals[iv].start..intervals[iv].end;
        let visible: Vec<usize> = span.filter(|&t| scene.coverage[t][obj] > 0).collect();
        match (visible.first(), visible.last()) {
            (Some(&a), Some(&b)) => {
                intervals[iv].start = a;
                intervals[iv].end = b + 1;
            }
            _ => {
                warnings.push(format!("{clip}: anomalous actor {obj} is never visible"));
                dropped.push(iv);
            }
        }
    }
    let intervals = intervals
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, iv)| iv)
        .collect();
    Ok((scene.frames, intervals, warnings))
}

/// Surface pattern amplitude for every rendered actor and object.
pub const OBJECT_TEXTURE: f64 = 0.1;

/// Gray value of erratic actors, outside the range normal people use.
pub const ERRATIC_INTENSITY: f64 = 0.92;

fn group_name(g: usize) -> String {
    format!("p{}", g + 1)
}

/// Generates `profile` in memory. The same profile and seed always produce
/// the same bytes.
pub fn generate(profile: &BenchmarkProfile, seed: u64) -> Result<Benchmark> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = profile.windows_per_clip;

    let mut train_events = vec![Event::Calm; profile.train_windows()];
    train_events[..profile.train_proxy_windows].fill(Event::Proxy);
    train_events.shuffle(&mut rng);

    let mut test_events = vec![Event::Calm; profile.test_windows()];
    for (i, slot) in test_events[..profile.test_anomalous_windows]
        .iter_mut()
        .enumerate()
    {
        *slot = Event::Anomaly {
            near: i % 2 == 1,
            kind: if (i / 2) % 2 == 0 {
                AnomalyKind::Flicker
            } else {
                AnomalyKind::ErraticMotion
            },
            group: i % profile.anomaly_groups.max(1),
        };
    }
    let a = profile.test_anomalous_windows;
    test_events[a..a + profile.test_proxy_windows].fill(Event::Proxy);
    test_events.shuffle(&mut rng);

    let mut clips = Vec::new();
    let mut entries = Vec::new();
    let mut intervals = Vec::new();
    let mut warnings = Vec::new();
    for (split, events) in [(Split::Train, &train_events), (Split::Test, &test_events)] {
        for (c, chunk) in events.chunks(per).enumerate() {
            let id = format!("{}_{c:03}", split.as_str());
            let (frames, ivs, warns) = render_clip(profile, chunk, &id, &mut rng)?;
            entries.push(ClipEntry {
                id: id.clone(),
                split,
                path: format!("{}/clips/{id}.tns", split.as_str()),
                frames: frames.shape()[0],
            });
            clips.push(frames);
            intervals.extend(ivs);
            warnings.extend(warns);
        }
    }

    let w = profile.window_frames;
    let windows = entries
        .iter()
        .flat_map(|c| (0..c.frames / w).map(move |k| (c, k * w)))
        .map(|(c, start)| {
            let mine = intervals
                .iter()
                .filter(|iv| iv.clip == c.id && iv.start < start + w && start < iv.end);
            let label = crate::pipeline::refine_label(&c.id, start, w, mine.clone());
            let group = mine
                .filter(|iv| iv.kind == WindowLabel::Anomalous)
                .find_map(|iv| iv.group.clone());
            WindowEntry {
                id: format!("{}@{start}", c.id),
                clip: c.id.clone(),
                start,
                label,
                group,
            }
        })
        .collect();

    let camera = profile.camera()?;
    let (_, z) = Background::Corridor(profile.corridor).render(&camera)?;
    let s = profile.image_size;
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        generator: Some(GeneratorInfo {
            profile: profile.name.clone(),
            seed,
            config_hash: config_hash(profile)?,
        }),
        fps: profile.fps,
        window_frames: w,
        image_size: s,
        depth: DepthEntry {
            path: "depth/static.tns".into(),
            source: DepthSourceKind::StaticReference,
        },
        clips: entries,
        intervals,
        windows,
    };
    manifest.validate()?;
    Ok(Benchmark {
        manifest,
        clips,
        depth: Tensor::from_vec(&[s, s], z)?,
        warnings,
    })
}
