//! Pinhole projection and the distance correction for anomaly scores.
//!
//! A fronto-parallel square of side `L` at depth `Z` projects to a square of
//! side `f·L/Z` pixels, so its area falls off as `1/Z²`. Multiplying a summed
//! reconstruction error by `K = Z²` undoes that falloff.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub focal: f64,
    pub image_size: usize,
    pub cx: f64,
    pub cy: f64,
}

impl PinholeCamera {
    /// Camera with the principal point at the image center.
    pub fn new(focal: f64, image_size: usize) -> Result<Self> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal length must be positive, got {focal}"
            )));
        }
        if image_size == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        let c = image_size as f64 / 2.0;
        Ok(PinholeCamera {
            focal,
            image_size,
            cx: c,
            cy: c,
        })
    }

    pub fn with_principal_point(mut self, cx: f64, cy: f64) -> Self {
        self.cx = cx;
        self.cy = cy;
        self
    }

    /// `(U, V) = (fX/Z + cx, fY/Z + cy)`.
    pub fn project_point(&self, p: [f64; 3]) -> Result<(f64, f64)> {
        let [x, y, z] = p;
        if !(z > 0.0) {
            return Err(Error::BehindCamera(z));
        }
        Ok((self.focal * x / z + self.cx, self.focal * y / z + self.cy))
    }

    /// Image-space center and area of a fronto-parallel square.
    pub fn project_square(&self, center: [f64; 3], side: f64) -> Result<ProjectionResult> {
        let (u, v) = self.project_point(center)?;
        Ok(ProjectionResult {
            u,
            v,
            area: projected_area(self.focal, side, center[2])?,
        })
    }

    /// Projected side length in pixels, `f·L/Z`.
    pub fn projected_side(&self, side: f64, z: f64) -> Result<f64> {
        Ok(projected_area(self.focal, side, z)?.sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub u: f64,
    pub v: f64,
    pub area: f64,
}

/// `(f·L/Z)²`.
pub fn projected_area(focal: f64, side: f64, z: f64) -> Result<f64> {
    for (name, v) in [("focal length", focal), ("side", side), ("depth", z)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    let s = focal * side / z;
    Ok(s * s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub raw_score: f64,
    /// Raw score divided by the projected area, when the area is known.
    pub per_pixel_mean: Option<f64>,
    pub correction_factor: f64,
    pub corrected_score: f64,
}

/// Scales a summed anomaly score by `Z²` so that the same event scores the
/// same at any distance.
pub fn depth_invariant_score(raw_score: f64, z: f64, area: Option<f64>) -> Result<ScoreRecord> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "depth must be positive, got {z}"
        )));
    }
    if !(raw_score.is_finite() && raw_score >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "raw score must be nonnegative, got {raw_score}"
        )));
    }
    let per_pixel_mean = match area {
        Some(a) if !(a.is_finite() && a > 0.0) => {
            return Err(Error::InvalidArgument(format!(
                "area must be positive, got {a}"
            )))
        }
        Some(a) => Some(raw_score / a),
        None => None,
    };
    let k = z * z;
    Ok(ScoreRecord {
        raw_score,
        per_pixel_mean,
        correction_factor: k,
        corrected_score: k * raw_score,
    })
}
