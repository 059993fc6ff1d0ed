//! Oriented box fitting by XY eigen-decomposition and the size-tolerance /
//! point-count acceptance rule.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Box3D;
use crate::pointcloud::PointCloud;

/// Eigenvalue gap below which the principal direction is undefined and yaw
/// falls back to 0.
pub const EIGEN_TIE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("cloud is degenerate in XY: {0}")]
    DegenerateCloud(String),
    #[error("invalid verification config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoVerifyConfig {
    pub lambda: f64,
    pub p_n: usize,
}

impl Default for GeoVerifyConfig {
    fn default() -> Self {
        Self { lambda: 0.5, p_n: 5 }
    }
}

impl GeoVerifyConfig {
    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(GeoError::InvalidConfig(format!("lambda {} outside (0, 1]", self.lambda)));
        }
        if self.p_n < 1 {
            return Err(GeoError::InvalidConfig("p_n must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeoFailReason {
    TooFewPoints,
    SizeX,
    SizeY,
    SizeZ,
    None,
}

impl GeoFailReason {
    pub fn as_str(self) -> &'static str {
        match self {
            GeoFailReason::TooFewPoints => "too_few_points",
            GeoFailReason::SizeX => "size_x",
            GeoFailReason::SizeY => "size_y",
            GeoFailReason::SizeZ => "size_z",
            GeoFailReason::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoVerdict {
    pub passed: bool,
    /// Fitted extents with the horizontal pair sorted descending.
    pub fitted_sizes: Option<[f64; 3]>,
    /// Fitted over target extent per axis, both sides sorted the same way.
    pub size_ratios: Option<[f64; 3]>,
    pub point_count: usize,
    pub fail_reason: GeoFailReason,
}

/// Oriented box from the XY covariance of the points. Yaw is the principal
/// direction in `[-π/2, π/2)`; extents and center come from the min/max
/// spans in that frame; z uses the raw vertical span (which may be zero).
pub fn fit_obb_xy(cloud: &PointCloud) -> Result<Box3D, GeoError> {
    let pts = &cloud.points;
    if pts.len() < 3 {
        return Err(GeoError::DegenerateCloud(format!("{} points", pts.len())));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
    let (mx, my) = (mx / n, my / n);
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p.x - mx, p.y - my);
        a += dx * dx;
        b += dx * dy;
        c += dy * dy;
    }
    let (a, b, c) = (a / n, b / n, c / n);
    let gap = ((a - c).powi(2) + 4.0 * b * b).sqrt();
    let minor = 0.5 * (a + c - gap);
    if minor <= 1e-14 * (a + c).max(f64::MIN_POSITIVE) {
        return Err(GeoError::DegenerateCloud("points are collinear in XY".into()));
    }
    let mut yaw = if gap < EIGEN_TIE { 0.0 } else { 0.5 * (2.0 * b).atan2(a - c) };
    if yaw >= PI / 2.0 {
        yaw -= PI;
    }
    let (cs, sn) = (yaw.cos(), yaw.sin());
    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for p in pts {
        let l = [cs * p.x + sn * p.y, -sn * p.x + cs * p.y, p.z];
        for k in 0..3 {
            lo[k] = lo[k].min(l[k]);
            hi[k] = hi[k].max(l[k]);
        }
    }
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
    Ok(Box3D {
        center: Point3::new(cs * mid[0] - sn * mid[1], sn * mid[0] + cs * mid[1], mid[2]),
        size: Vector3::new(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]),
        yaw,
    })
}

fn sorted_xy(s: [f64; 3]) -> [f64; 3] {
    if s[1] > s[0] {
        [s[1], s[0], s[2]]
    } else {
        s
    }
}

/// Applies the acceptance rule to already-fitted extents: at least `p_n`
/// points and `(1-λ)·s_i ≤ ŝ_i ≤ (1+λ)·s_i` on every axis, inclusive, after
/// ordering both horizontal pairs descending.
pub fn evaluate_fit(fitted: [f64; 3], point_count: usize, target: [f64; 3], cfg: &GeoVerifyConfig) -> GeoVerdict {
    let f = sorted_xy(fitted);
    let t = sorted_xy(target);
    let ratios = [f[0] / t[0], f[1] / t[1], f[2] / t[2]];
    let fail_reason = if point_count < cfg.p_n {
        GeoFailReason::TooFewPoints
    } else {
        let axis_ok = |k: usize| (1.0 - cfg.lambda) * t[k] <= f[k] && f[k] <= (1.0 + cfg.lambda) * t[k];
        [GeoFailReason::SizeX, GeoFailReason::SizeY, GeoFailReason::SizeZ]
            .into_iter()
            .enumerate()
            .find(|(k, _)| !axis_ok(*k))
            .map_or(GeoFailReason::None, |(_, r)| r)
    };
    GeoVerdict { passed: fail_reason == GeoFailReason::None, fitted_sizes: Some(f), size_ratios: Some(ratios), point_count, fail_reason }
}

/// Fits `cloud` and checks it against `target` extents.
pub fn verify_geometry(cloud: &PointCloud, target: [f64; 3], cfg: &GeoVerifyConfig) -> GeoVerdict {
    match fit_obb_xy(cloud) {
        Ok(b) => evaluate_fit([b.size.x, b.size.y, b.size.z], cloud.len(), target, cfg),
        Err(_) => GeoVerdict { passed: false, fitted_sizes: None, size_ratios: None, point_count: cloud.len(), fail_reason: GeoFailReason::TooFewPoints },
    }
}

/// The verdict a sweep would assign at tolerance `lambda` from stored ratios.
pub fn passes_at(point_count: usize, ratios: &[f64; 3], lambda: f64, p_n: usize) -> bool {
    point_count >= p_n && ratios.iter().all(|r| (1.0 - lambda..=1.0 + lambda).contains(r))
}
