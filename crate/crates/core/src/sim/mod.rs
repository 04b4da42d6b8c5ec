//! Synthetic scene rendering with exact per-pixel depth.
//!
//! Objects are fronto-parallel squares drawn through a [`PinholeCamera`] with
//! integer pixel fill: a pixel belongs to a projected square when its center
//! lies in `[u − s/2, u + s/2) × [v − s/2, v + s/2)` with `s = f·L/Z`.
//! Camera coordinates have Y pointing down, so the corridor floor is at
//! `Y = +half_width`.

pub mod benchmark;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PinholeCamera;
use crate::tensor::Tensor;

/// Typical walking speed in scene units per frame; erratic actors move at
/// four times this.
pub const WALK_SPEED: f64 = 0.03;
pub const ERRATIC_SPEED_FACTOR: f64 = 4.0;
/// Erratic offsets are clamped to this many units on X and Z.
pub const ERRATIC_RANGE: f64 = 1.0;
/// Flicker switches between dark and bright every this many frames.
pub const FLICKER_PERIOD: usize = 3;
pub const FLICKER_LOW: f64 = 0.05;
pub const FLICKER_HIGH: f64 = 0.95;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    #[default]
    None,
    ErraticMotion,
    Flicker,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub frame: usize,
    pub position: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    /// Path through camera space; linear between waypoints, held constant
    /// before the first and after the last.
    pub waypoints: Vec<Waypoint>,
    pub side: f64,
    pub intensity: f64,
    /// Frames `[start, end)` during which the object exists. `None` means always.
    pub active: Option<(usize, usize)>,
    pub is_anomalous: bool,
    pub anomaly_kind: AnomalyKind,
    /// Amplitude of a fixed per-pixel surface pattern that travels with the
    /// object. Zero gives a flat square.
    #[serde(default)]
    pub texture: f64,
}

impl SceneObject {
    pub fn stationary(center: [f64; 3], side: f64, intensity: f64) -> Self {
        SceneObject {
            waypoints: vec![Waypoint {
                frame: 0,
                position: center,
            }],
            side,
            intensity,
            active: None,
            is_anomalous: false,
            anomaly_kind: AnomalyKind::None,
            texture: 0.0,
        }
    }

    pub fn moving(from: Waypoint, to: Waypoint, side: f64, intensity: f64) -> Self {
        SceneObject {
            waypoints: vec![from, to],
            ..SceneObject::stationary(from.position, side, intensity)
        }
    }

    pub fn anomalous(mut self, kind: AnomalyKind) -> Self {
        self.is_anomalous = true;
        self.anomaly_kind = kind;
        self
    }

    pub fn textured(mut self, amplitude: f64) -> Self {
        self.texture = amplitude;
        self
    }

    pub fn during(mut self, start: usize, end: usize) -> Self {
        self.active = Some((start, end));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::InvalidArgument("object has no waypoints".into()));
        }
        if !(self.side.is_finite() && self.side > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "object side must be positive, got {}",
                self.side
            )));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::InvalidArgument(format!(
                "intensity {} outside [0, 1]",
                self.intensity
            )));
        }
        for w in &self.waypoints {
            if !(w.position[2].is_finite() && w.position[2] > 0.0) {
                return Err(Error::BehindCamera(w.position[2]));
            }
            if !w.position.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("waypoint".into()));
            }
        }
        if self.waypoints.windows(2).any(|p| p[1].frame <= p[0].frame) {
            return Err(Error::InvalidArgument(
                "waypoint frames must increase".into(),
            ));
        }
        if let Some((s, e)) = self.active {
            if e <= s {
                return Err(Error::InvalidArgument(format!(
                    "empty active range {s}..{e}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_active(&self, frame: usize) -> bool {
        self.active.map_or(true, |(s, e)| (s..e).contains(&frame))
    }

    /// Waypoint-path position at `frame`, before any erratic offset.
    pub fn path_position(&self, frame: usize) -> [f64; 3] {
        let w = &self.waypoints;
        if frame <= w[0].frame {
            return w[0].position;
        }
        for pair in w.windows(2) {
            if frame <= pair[1].frame {
                let t = (frame - pair[0].frame) as f64 / (pair[1].frame - pair[0].frame) as f64;
                let (a, b) = (pair[0].position, pair[1].position);
                return [0, 1, 2].map(|i| a[i] + t * (b[i] - a[i]));
            }
        }
        w[w.len() - 1].position
    }

    /// Mean path speed in units per frame.
    fn path_speed(&self) -> f64 {
        let w = &self.waypoints;
        let (first, last) = (w[0], w[w.len() - 1]);
        if last.frame == first.frame {
            return 0.0;
        }
        let dist: f64 = w
            .windows(2)
            .map(|p| {
                (0..3)
                    .map(|i| (p[1].position[i] - p[0].position[i]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        dist / (last.frame - first.frame) as f64
    }

    fn intensity_at(&self, frame: usize) -> f64 {
        match self.anomaly_kind {
            AnomalyKind::Flicker => {
                let start = self.active.map_or(0, |a| a.0);
                if ((frame - start.min(frame)) / FLICKER_PERIOD) % 2 == 0 {
                    FLICKER_HIGH
                } else {
                    FLICKER_LOW
                }
            }
            _ => self.intensity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub half_width: f64,
    pub end_depth: f64,
    pub texture_seed: u64,
    pub texture_amplitude: f64,
}

impl Default for Corridor {
    fn default() -> Self {
        Corridor {
            half_width: 1.5,
            end_depth: 24.0,
            texture_seed: 0x5eed,
            texture_amplitude: 0.03,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Background {
    Flat { intensity: f64, depth: f64 },
    Corridor(Corridor),
}

impl Background {
    /// Static intensity and depth grids, each `S×S` row-major.
    pub fn render(&self, camera: &PinholeCamera) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = camera.image_size;
        match *self {
            Background::Flat { intensity, depth } => {
                if !(depth.is_finite() && depth > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "background depth must be positive, got {depth}"
                    )));
                }
                if !(0.0..=1.0).contains(&intensity) {
                    return Err(Error::InvalidArgument(format!(
                        "background intensity {intensity} outside [0, 1]"
                    )));
                }
                Ok((vec![intensity; s * s], vec![depth; s * s]))
            }
            Background::Corridor(c) => {
                if !(c.half_width > 0.0 && c.end_depth > 0.0) {
                    return Err(Error::InvalidArgument(
                        "corridor dimensions must be positive".into(),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(c.texture_seed);
                let mut gray = Vec::with_capacity(s * s);
                let mut depth = Vec::with_capacity(s * s);
                for i in 0..s {
                    for j in 0..s {
                        let dx = j as f64 + 0.5 - camera.cx;
                        let dy = i as f64 + 0.5 - camera.cy;
                        let r = dx.abs().max(dy.abs()).max(1e-9);
                        let z = (camera.focal * c.half_width / r).min(c.end_depth);
                        let base = if z >= c.end_depth {
                            0.62
                        } else if dy.abs() >= dx.abs() {
                            // floor tiles and ceiling panels repeat along the corridor
                            let stripe = if (z / 1.5).floor() as i64 % 2 == 0 {
                                0.04
                            } else {
                                -0.04
                            };
                            if dy > 0.0 {
                                0.30 + stripe
                            } else {
                                0.75 + stripe
                            }
                        } else if dx < 0.0 {
                            0.48
                        } else {
                            0.55
                        };
                        let shade = 0.85 + 0.15 * z / c.end_depth;
                        let noise = c.texture_amplitude * (2.0 * rng.gen::<f64>() - 1.0);
                        gray.push((base * shade + noise).clamp(0.0, 1.0));
                        depth.push(z);
                    }
                }
                Ok((gray, depth))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderWarning {
    pub object: usize,
    pub message: String,
}

pub struct RenderedScene {
    /// `[T, S, S]` gray levels in `[0, 1]`.
    pub frames: Tensor<f32>,
    /// `[T, S, S]` depth of the nearest surface.
    pub depth: Tensor<f64>,
    /// Per frame: does any anomalous object have a visible pixel?
    pub labels: Vec<bool>,
    /// Visible pixel count per frame and object.
    pub coverage: Vec<Vec<u32>>,
    pub warnings: Vec<RenderWarning>,
}

/// Erratic-motion offsets per frame: a random walk whose step is resampled
/// every frame from its own RNG substream.
fn erratic_offsets(
    obj: &SceneObject,
    index: usize,
    frame_count: usize,
    seed: u64,
) -> Vec<[f64; 3]> {
    let speed = ERRATIC_SPEED_FACTOR * obj.path_speed().max(WALK_SPEED);
    let mut offset = [0.0; 3];
    let mut out = Vec::with_capacity(frame_count);
    for t in 0..frame_count {
        if obj.is_active(t) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((index as u64) << 32) | t as u64);
            let angle = rng.gen::<f64>() * std::f64::consts::TAU;
            offset[0] = (offset[0] + speed * angle.cos()).clamp(-ERRATIC_RANGE, ERRATIC_RANGE);
            offset[2] = (offset[2] + speed * angle.sin()).clamp(-ERRATIC_RANGE, ERRATIC_RANGE);
        }
        out.push(offset);
    }
    out
}

/// Renders `frame_count` frames. Objects are painted far to near with a depth
/// test against the background, so nearer surfaces always win.
pub fn render_scene(
    camera: &PinholeCamera,
    objects: &[SceneObject],
    frame_count: usize,
    background: &Background,
    seed: u64,
) -> Result<RenderedScene> {
    for o in objects {
        o.validate()?;
    }
    let s = camera.image_size;
    let plane = s * s;
    let (bg_gray, bg_depth) = background.render(camera)?;
    let offsets: Vec<Option<Vec<[f64; 3]>>> = objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            (o.anomaly_kind == AnomalyKind::ErraticMotion)
                .then(|| erratic_offsets(o, i, frame_count, seed))
        })
        .collect();
    let textures: Vec<Option<Vec<f64>>> = objects
        .iter()
        .enumerate()
        .map(|(i, o)| (o.texture != 0.0).then(|| object_texture(o.texture, i, seed)))
        .collect();

    struct FrameOut {
        gray: Vec<f32>,
        depth: Vec<f64>,
        coverage: Vec<u32>,
    }
    let rendered: Vec<Result<FrameOut>> = (0..frame_count)
        .into_par_iter()
        .map(|t| {
            let mut gray = bg_gray.clone();
            let mut depth = bg_depth.clone();
            let mut owner = vec![usize::MAX; plane];
            let mut placed = Vec::new();
            for (i, o) in objects.iter().enumerate() {
                if !o.is_active(t) {
                    continue;
                }
                let mut p = o.path_position(t);
                if let Some(off) = &offsets[i] {
                    for k in 0..3 {
                        p[k] += off[t][k];
                    }
                    if p[2] <= 0.0 {
                        return Err(Error::BehindCamera(p[2]));
                    }
                }
                placed.push((i, p));
            }
            // far to near; ties keep list order
            placed.sort_by(|a, b| b.1[2].total_cmp(&a.1[2]));
            for (i, p) in placed {
                let o = &objects[i];
                let (u, v) = camera.project_point(p)?;
                let half = camera.focal * o.side / p[2] / 2.0;
                let value = o.intensity_at(t);
                let cols = pixel_span(u - half, u + half, s);
                let rows = pixel_span(v - half, v + half, s);
                // pattern origin is the square's unclipped top-left pixel
                let r0 = (v - half - 0.5).ceil() as i64;
                let c0 = (u - half - 0.5).ceil() as i64;
                for r in rows {
                    for c in cols.clone() {
                        let k = r * s + c;
                        if p[2] <= depth[k] {
                            depth[k] = p[2];
                            gray[k] = match &textures[i] {
                                Some(tex) => {
                                    let tr = (r as i64 - r0).rem_euclid(TEXTURE_TILE as i64);
                                    let tc = (c as i64 - c0).rem_euclid(TEXTURE_TILE as i64);
                                    (value + tex[tr as usize * TEXTURE_TILE + tc as usize])
                                        .clamp(0.0, 1.0)
                                }
                                None => value,
                            };
                            owner[k] = i;
                        }
                    }
                }
            }
            let mut coverage = vec![0u32; objects.len()];
            for &w in &owner {
                if w != usize::MAX {
                    coverage[w] += 1;
                }
            }
            Ok(FrameOut {
                gray: gray.into_iter().map(|g| g as f32).collect(),
                depth,
                coverage,
            })
        })
        .collect();

    let mut frames = Vec::with_capacity(frame_count * plane);
    let mut depth = Vec::with_capacity(frame_count * plane);
    let mut coverage = Vec::with_capacity(frame_count);
    for f in rendered {
        let f = f?;
        frames.extend(f.gray);
        depth.extend(f.depth);
        coverage.push(f.coverage);
    }
    let labels = coverage
        .iter()
        .map(|c| c.iter().zip(objects).any(|(&n, o)| n > 0 && o.is_anomalous))
        .collect();
    let warnings = (0..objects.len())
        .filter(|&i| coverage.iter().all(|c| c[i] == 0))
        .map(|i| RenderWarning {
            object: i,
            message: format!("object {i} is never visible"),
        })
        .collect();
    Ok(RenderedScene {
        frames: Tensor::from_vec(&[frame_count, s, s], frames)?,
        depth: Tensor::from_vec(&[frame_count, s, s], depth)?,
        labels,
        coverage,
        warnings,
    })
}

/// Pixel indices whose centers fall in `[lo, hi)`, clipped to the image.
/// Side of the repeating object texture tile, in pixels.
pub const TEXTURE_TILE: usize = 64;

fn object_texture(amplitude: f64, obj: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e47_0000_0000 ^ obj as u64);
    (0..TEXTURE_TILE * TEXTURE_TILE)
        .map(|_| amplitude * (2.0 * rng.gen::<f64>() - 1.0))
        .collect()
}

fn pixel_span(lo: f64, hi: f64, size: usize) -> std::ops::Range<usize> {
    // center of pixel k is k + 0.5
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).ceil().min(size as f64);
    if last <= first {
        return 0..0;
    }
    first as usize..last as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> PinholeCamera {
        PinholeCamera::new(64.0, 64).unwrap()
    }

    const FLAT: Background = Background::Flat {
        intensity: 0.2,
        depth: 30.0,
    };

    #[test]
    fn empty_scene_is_background() {
        let r = render_scene(&cam(), &[], 3, &FLAT, 1).unwrap();
        assert!(r.frames.data().iter().all(|&v| v == 0.2f32));
        assert!(r.depth.data().iter().all(|&z| z == 30.0));
        assert_eq!(r.labels, vec![false; 3]);
    }

    #[test]
    fn square_side_follows_projection() {
        let obj = SceneObject::stationary([0.0, 0.0, 4.0], 1.0, 0.9);
        let r = render_scene(&cam(), &[obj], 1, &FLAT, 1).unwrap();
        assert_eq!(r.coverage[0][0], 256);
        let inside = r.depth.data().iter().filter(|&&z| z == 4.0).count();
        assert_eq!(inside, 256);
        // rows and columns 24..40
        assert_eq!(r.depth.data()[24 * 64 + 24], 4.0);
        assert_eq!(r.depth.data()[39 * 64 + 39], 4.0);
        assert_eq!(r.depth.data()[40 * 64 + 39], 30.0);
    }

    #[test]
    fn nearer_object_occludes() {
        let far = SceneObject::stationary([0.0, 0.0, 4.0], 1.0, 0.3);
        let near = SceneObject::stationary([0.1, 0.0, 2.0], 0.5, 0.8);
        for objs in [vec![far.clone(), near.clone()], vec![near, far]] {
            let r = render_scene(&cam(), &objs, 1, &FLAT, 1).unwrap();
            let k = 32 * 64 + 34;
            assert_eq!(r.depth.data()[k], 2.0);
            assert_eq!(r.frames.data()[k], 0.8f32);
        }
    }

    #[test]
    fn labels_follow_visibility() {
        let hidden =
            SceneObject::stationary([0.0, 0.0, 8.0], 0.5, 0.5).anomalous(AnomalyKind::Flicker);
        let cover = SceneObject::stationary([0.0, 0.0, 2.0], 2.0, 0.5).during(0, 2);
        let r = render_scene(&cam(), &[hidden, cover], 4, &FLAT, 1).unwrap();
        assert_eq!(r.labels, vec![false, false, true, true]);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn never_visible_object_warns() {
        let off = SceneObject::stationary([100.0, 0.0, 2.0], 1.0, 0.5);
        let r = render_scene(&cam(), &[off], 2, &FLAT, 1).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.warnings[0].object, 0);
    }

    #[test]
    fn flicker_alternates() {
        let o = SceneObject::stationary([0.0, 0.0, 4.0], 1.0, 0.5).anomalous(AnomalyKind::Flicker);
        let r = render_scene(&cam(), &[o], 7, &FLAT, 1).unwrap();
        let c = 32 * 64 + 32;
        let vals: Vec<f32> = (0..7).map(|t| r.frames.data()[t * 4096 + c]).collect();
        let (hi, lo) = (FLICKER_HIGH as f32, FLICKER_LOW as f32);
        assert_eq!(vals, vec![hi, hi, hi, lo, lo, lo, hi]);
    }

    #[test]
    fn erratic_motion_is_seeded_and_bounded() {
        let o = SceneObject::stationary([0.0, 0.0, 6.0], 1.0, 0.5)
            .anomalous(AnomalyKind::ErraticMotion);
        let a = render_scene(&cam(), &[o.clone()], 40, &FLAT, 3).unwrap();
        let b = render_scene(&cam(), &[o.clone()], 40, &FLAT, 3).unwrap();
        let c = render_scene(&cam(), &[o.clone()], 40, &FLAT, 4).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_ne!(a.frames, c.frames);
        for off in erratic_offsets(&o, 0, 200, 9) {
            assert!(off[0].abs() <= ERRATIC_RANGE && off[2].abs() <= ERRATIC_RANGE);
        }
    }

    #[test]
    fn corridor_depth_range() {
        let (gray, depth) = Background::Corridor(Corridor::default())
            .render(&cam())
            .unwrap();
        let min = depth.iter().copied().fold(f64::INFINITY, f64::min);
        let max = depth.iter().copied().fold(0.0, f64::max);
        assert_eq!(max, 24.0);
        assert!((min - 3.0).abs() < 0.1, "{min}");
        assert!(gray.iter().all(|g| (0.0..=1.0).contains(g)));
    }

    #[test]
    fn object_on_floor_is_not_hidden_by_floor() {
        let side = 1.0;
        let obj = SceneObject::stationary([0.0, 1.5 - side / 2.0, 8.0], side, 0.9);
        let r = render_scene(
            &cam(),
            &[obj],
            1,
            &Background::Corridor(Corridor::default()),
            1,
        )
        .unwrap();
        assert_eq!(r.coverage[0][0], 64);
    }

    #[test]
    fn path_interpolates() {
        let o = SceneObject::moving(
            Waypoint {
                frame: 10,
                position: [0.0, 0.0, 4.0],
            },
            Waypoint {
                frame: 20,
                position: [1.0, 0.0, 6.0],
            },
            1.0,
            0.5,
        );
        assert_eq!(o.path_position(0), [0.0, 0.0, 4.0]);
        assert_eq!(o.path_position(15), [0.5, 0.0, 5.0]);
        assert_eq!(o.path_position(30), [1.0, 0.0, 6.0]);
    }
}
