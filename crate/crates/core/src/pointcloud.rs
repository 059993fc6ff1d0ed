//! Pseudo-LiDAR reconstruction: depth backprojection, contour-band
//! filtering, height anchoring, spherical rasterization onto a sensor grid
//! and intensity simulation.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use kiddo::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{backproject, CameraIntrinsics, PixelMask, RigidTransform};
use crate::providers::DepthMap;

/// Minimum measurable vertical extent.
pub const EPS_EXTENT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PointCloudError {
    #[error("no valid depth under the object mask")]
    EmptyCloud,
    #[error("vertical extent {0} is too small to anchor")]
    DegenerateExtent(f64),
    #[error("need at least {needed} points, have {have}")]
    TooFewPoints { needed: usize, have: usize },
    #[error("invalid sensor spec: {0}")]
    InvalidSensor(String),
    #[error("malformed serialized data: {0}")]
    Malformed(String),
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    /// One value in `[0, 1]` per point when present.
    #[serde(default)]
    pub intensity: Option<Vec<f64>>,
    /// Image pixel each point was backprojected from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_pixels: Option<Vec<(u32, u32)>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        Self { points, intensity: None, source_pixels: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points whose index satisfies `keep`, with their attributes.
    pub fn filter_indices(&self, keep: impl Fn(usize) -> bool) -> PointCloud {
        let idx: Vec<usize> = (0..self.len()).filter(|i| keep(*i)).collect();
        PointCloud {
            points: idx.iter().map(|i| self.points[*i]).collect(),
            intensity: self.intensity.as_ref().map(|v| idx.iter().map(|i| v[*i]).collect()),
            source_pixels: self.source_pixels.as_ref().map(|v| idx.iter().map(|i| v[*i]).collect()),
        }
    }

    pub fn transform(&self, t: &RigidTransform) -> PointCloud {
        PointCloud { points: self.points.iter().map(|p| t.apply(p)).collect(), ..self.clone() }
    }

    /// Concatenation; intensity survives only if both sides carry it.
    pub fn merge(&self, other: &PointCloud) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let intensity = match (&self.intensity, &other.intensity) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        PointCloud { points, intensity, source_pixels: None }
    }

    pub fn z_extent(&self) -> Option<(f64, f64)> {
        let mut it = self.points.iter().map(|p| p.z);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), z| (lo.min(z), hi.max(z))))
    }
}

/// One point per valid depth pixel under `mask`, in the camera frame, taken
/// at the pixel center. Source pixels are recorded for later filtering.
pub fn backproject_region(depth: &DepthMap, mask: &PixelMask, cam: &CameraIntrinsics) -> Result<PointCloud, PointCloudError> {
    if (depth.width, depth.height) != (mask.width, mask.height) {
        return Err(PointCloudError::Mismatch(format!("depth {}x{} vs mask {}x{}", depth.width, depth.height, mask.width, mask.height)));
    }
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for (x, y) in mask.iter_set() {
        if let Some(d) = depth.at(x, y) {
            if let Ok(p) = backproject(f64::from(x) + 0.5, f64::from(y) + 0.5, d, cam) {
                points.push(p);
                pixels.push((x, y));
            }
        }
    }
    if points.is_empty() {
        return Err(PointCloudError::EmptyCloud);
    }
    Ok(PointCloud { points, intensity: None, source_pixels: Some(pixels) })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mask pixels within Chebyshev distance `b` of an unset or out-of-image
/// pixel: the mask minus its erosion by a `(2b+1)²` square.
fn contour_band(mask: &PixelMask, b: u32) -> Vec<bool> {
    // pixels beyond the bounding rectangle are unset, so the tight crop
    // (with its border treated as unset) gives the same band
    let mut band = vec![false; mask.bits.len()];
    let Some(r) = mask.bounding_rect() else {
        return band;
    };
    let sub = contour_band_full(&mask.crop(&r), b);
    let (w, rw) = (mask.width as usize, r.width() as usize);
    for y in 0..r.height() as usize {
        let dst = (y + r.top as usize) * w + r.left as usize;
        band[dst..dst + rw].copy_from_slice(&sub[y * rw..(y + 1) * rw]);
    }
    band
}

fn contour_band_full(mask: &PixelMask, b: u32) -> Vec<bool> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let b = b as usize;
    // 1-D erosion of each line through a prefix count of set pixels
    let erode = |line: &[bool]| -> Vec<bool> {
        let n = line.len();
        let mut prefix = vec![0usize; n + 1];
        for (i, v) in line.iter().enumerate() {
            prefix[i + 1] = prefix[i] + usize::from(*v);
        }
        (0..n).map(|i| i >= b && i + b < n && prefix[i + b + 1] - prefix[i - b] == 2 * b + 1).collect()
    };
    let mut rows = vec![false; w * h];
    for y in 0..h {
        rows[y * w..(y + 1) * w].copy_from_slice(&erode(&mask.bits[y * w..(y + 1) * w]));
    }
    let mut band = vec![false; w * h];
    let mut col = vec![false; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        for (y, inner) in erode(&col).into_iter().enumerate() {
            band[y * w + x] = mask.bits[y * w + x] && !inner;
        }
    }
    band
}

/// Removes flying pixels along the mask contour.
///
/// A point is in the band when some pixel outside the mask (or outside the
/// image) lies within Chebyshev distance `band_px` of its source pixel. A
/// band point is dropped when its camera depth differs by more than `tau`
/// from the median depth of the interior points in its 5×5 neighbourhood
/// (all neighbourhood points if none are interior). The cloud must still be
/// in the camera frame.
pub fn contour_band_filter(cloud: &PointCloud, mask: &PixelMask, band_px: u32, tau: f64) -> Result<PointCloud, PointCloudError> {
    if band_px == 0 || cloud.is_empty() {
        return Ok(cloud.clone());
    }
    let pixels = cloud
        .source_pixels
        .as_ref()
        .ok_or_else(|| PointCloudError::Mismatch("cloud carries no source pixels".into()))?;
    let (w, h) = (mask.width as i64, mask.height as i64);
    let idx = |x: i64, y: i64| (y * w + x) as usize;
    let mut depth_at: Vec<Option<f64>> = vec![None; (w * h) as usize];
    for (p, (x, y)) in cloud.points.iter().zip(pixels) {
        depth_at[idx(i64::from(*x), i64::from(*y))] = Some(p.z);
    }
    let band = contour_band(mask, band_px);

    let keep: Vec<bool> = cloud
        .points
        .iter()
        .zip(pixels)
        .map(|(p, (x, y))| {
            let (x, y) = (i64::from(*x), i64::from(*y));
            if !band[idx(x, y)] {
                return true;
            }
            let mut interior = Vec::with_capacity(25);
            let mut all = Vec::with_capacity(25);
            for ny in (y - 2).max(0)..=(y + 2).min(h - 1) {
                for nx in (x - 2).max(0)..=(x + 2).min(w - 1) {
                    if let Some(d) = depth_at[idx(nx, ny)] {
                        all.push(d);
                        if !band[idx(nx, ny)] {
                            interior.push(d);
                        }
                    }
                }
            }
            let reference = if interior.is_empty() { median(&mut all) } else { median(&mut interior) };
            (p.z - reference).abs() <= tau
        })
        .collect();
    Ok(cloud.filter_indices(|i| keep[i]))
}

/// Scales a camera-frame cloud about the camera origin so that its vertical
/// extent, measured on the sensor z axis after `cam_to_sensor`, equals `s_z`.
pub fn anchor_scale(cloud: &PointCloud, s_z: f64, cam_to_sensor: &RigidTransform) -> Result<PointCloud, PointCloudError> {
    let sensor = cloud.transform(cam_to_sensor);
    let (lo, hi) = sensor.z_extent().ok_or(PointCloudError::EmptyCloud)?;
    let extent = hi - lo;
    if !(extent > EPS_EXTENT) {
        return Err(PointCloudError::DegenerateExtent(extent));
    }
    let s = s_z / extent;
    Ok(PointCloud { points: cloud.points.iter().map(|p| Point3::from(p.coords * s)).collect(), ..cloud.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: String,
    /// Beam elevations in radians, strictly increasing. Row `i` is beam `i`.
    pub elevations: Vec<f64>,
    /// Radians per azimuth column.
    pub azimuth_resolution: f64,
    /// Horizontal field of view `[min, max)` in radians.
    pub fov: [f64; 2],
    /// Accepted range interval in meters, inclusive.
    pub range: [f64; 2],
    /// Fixed intensity reported by sensors without a usable intensity channel.
    #[serde(default)]
    pub constant_intensity: Option<f64>,
}

fn deg(d: f64) -> f64 {
    d.to_radians()
}

impl SensorSpec {
    /// Uniformly spaced beams between `min` and `max` elevation.
    pub fn uniform_elevations(n: usize, min: f64, max: f64) -> Vec<f64> {
        if n == 1 {
            return vec![min];
        }
        (0..n).map(|i| min + (max - min) * i as f64 / (n - 1) as f64).collect()
    }

    /// 32-beam spinning sensor, −30.67° to +10.67°.
    pub fn nuscenes_32() -> Self {
        Self {
            id: "nuscenes-32".into(),
            elevations: Self::uniform_elevations(32, deg(-30.67), deg(10.67)),
            azimuth_resolution: deg(0.33),
            fov: [-PI, PI],
            range: [1.0, 100.0],
            constant_intensity: None,
        }
    }

    /// 64-beam spinning sensor: an upper block of 32 beams from +2° at 1/3°
    /// spacing and a lower block of 32 beams from −8.83° at 1/2° spacing.
    pub fn lyft_64() -> Self {
        let mut elevations: Vec<f64> = (0..32).map(|k| deg(2.0 - f64::from(k) / 3.0)).chain((0..32).map(|k| deg(-8.83 - 0.5 * f64::from(k)))).collect();
        elevations.sort_by(f64::total_cmp);
        Self {
            id: "lyft-64".into(),
            elevations,
            azimuth_resolution: deg(0.1728),
            fov: [-PI, PI],
            range: [1.0, 120.0],
            constant_intensity: Some(1.0),
        }
    }

    pub fn preset(id: &str) -> Option<Self> {
        match id {
            "nuscenes-32" => Some(Self::nuscenes_32()),
            "lyft-64" => Some(Self::lyft_64()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), PointCloudError> {
        let bad = |m: String| Err(PointCloudError::InvalidSensor(m));
        if self.elevations.is_empty() {
            return bad("at least one beam is required".into());
        }
        if self.elevations.windows(2).any(|w| !(w[0] < w[1])) || self.elevations.iter().any(|e| !e.is_finite()) {
            return bad("elevations must be finite and strictly increasing".into());
        }
        if !(self.azimuth_resolution > 0.0) {
            return bad(format!("azimuth resolution {} must be positive", self.azimuth_resolution));
        }
        let span = self.fov[1] - self.fov[0];
        if !(span > 0.0 && span <= 2.0 * PI + 1e-12) {
            return bad(format!("fov {:?} must be a non-empty interval of at most 2π", self.fov));
        }
        if !(0.0 < self.range[0] && self.range[0] < self.range[1]) {
            return bad(format!("range limits {:?} must satisfy 0 < r_min < r_max", self.range));
        }
        if let Some(c) = self.constant_intensity {
            if !(0.0..=1.0).contains(&c) {
                return bad(format!("constant intensity {c} outside [0,1]"));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.elevations.len()
    }

    pub fn cols(&self) -> usize {
        (((self.fov[1] - self.fov[0]) / self.azimuth_resolution) - 1e-9).ceil().max(1.0) as usize
    }

    fn full_circle(&self) -> bool {
        self.fov[1] - self.fov[0] >= 2.0 * PI - 1e-12
    }

    /// Nearest beam, rejected beyond half the gap to the adjacent beam on the
    /// deviation side (the inner gap for outer beams). A single beam accepts
    /// half an azimuth step either way.
    pub fn beam_for(&self, elevation: f64) -> Option<usize> {
        let e = &self.elevations;
        if e.len() == 1 {
            return ((elevation - e[0]).abs() <= 0.5 * self.azimuth_resolution).then_some(0);
        }
        let i = e.partition_point(|b| *b < elevation);
        let nearest = if i == 0 {
            0
        } else if i == e.len() {
            e.len() - 1
        } else if elevation - e[i - 1] <= e[i] - elevation {
            i - 1
        } else {
            i
        };
        let dev = elevation - e[nearest];
        let gap = if dev >= 0.0 {
            if nearest + 1 < e.len() { e[nearest + 1] - e[nearest] } else { e[nearest] - e[nearest - 1] }
        } else if nearest > 0 {
            e[nearest] - e[nearest - 1]
        } else {
            e[1] - e[0]
        };
        (dev.abs() <= 0.5 * gap).then_some(nearest)
    }

    /// Azimuth column, or `None` outside the horizontal field of view.
    pub fn column_for(&self, azimuth: f64) -> Option<usize> {
        let mut a = azimuth - self.fov[0];
        if self.full_circle() {
            a = a.rem_euclid(2.0 * PI);
        } else if a < 0.0 || azimuth >= self.fov[1] {
            return None;
        }
        Some(((a / self.azimuth_resolution).floor() as usize).min(self.cols() - 1))
    }

    /// Center azimuth of a column; the last column may be partial.
    pub fn column_center(&self, col: usize) -> f64 {
        let lo = self.fov[0] + col as f64 * self.azimuth_resolution;
        let hi = (lo + self.azimuth_resolution).min(self.fov[0] + (self.fov[1] - self.fov[0]));
        0.5 * (lo + hi)
    }

    /// Grid cell and range of a sensor-frame point after FOV and range clipping.
    pub fn bin(&self, p: &Point3<f64>) -> Option<(usize, usize, f64)> {
        let r = p.coords.norm();
        if !(r >= self.range[0] && r <= self.range[1]) {
            return None;
        }
        let elevation = p.z.atan2(p.x.hypot(p.y));
        let row = self.beam_for(elevation)?;
        let col = self.column_for(p.y.atan2(p.x))?;
        Some((row, col, r))
    }
}

/// Sensor-grid raster. Ranges and intensities are stored at 32-bit
/// precision, the precision of the persisted format.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub rows: usize,
    pub cols: usize,
    pub range: Vec<f32>,
    pub intensity: Option<Vec<f32>>,
    pub valid: Vec<bool>,
}

impl RangeImage {
    pub fn empty(rows: usize, cols: usize, with_intensity: bool) -> Self {
        Self { rows, cols, range: vec![0.0; rows * cols], intensity: with_intensity.then(|| vec![0.0; rows * cols]), valid: vec![false; rows * cols] }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let f32s = |v: &[f32]| B64.encode(v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>());
        let mut bitset = vec![0u8; self.valid.len().div_ceil(8)];
        for (i, v) in self.valid.iter().enumerate() {
            if *v {
                bitset[i / 8] |= 1 << (i % 8);
            }
        }
        serde_json::json!({
            "rows": self.rows,
            "cols": self.cols,
            "range_f32_le": f32s(&self.range),
            "intensity_f32_le": self.intensity.as_deref().map(f32s),
            "valid_bitset": B64.encode(bitset),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, PointCloudError> {
        let bad = |m: &str| PointCloudError::Malformed(m.to_string());
        let rows = v["rows"].as_u64().ok_or_else(|| bad("rows"))? as usize;
        let cols = v["cols"].as_u64().ok_or_else(|| bad("cols"))? as usize;
        let n = rows * cols;
        let f32s = |s: &str| -> Result<Vec<f32>, PointCloudError> {
            let b = B64.decode(s).map_err(|e| PointCloudError::Malformed(e.to_string()))?;
            if b.len() != 4 * n {
                return Err(bad("payload length"));
            }
            Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        };
        let range = f32s(v["range_f32_le"].as_str().ok_or_else(|| bad("range_f32_le"))?)?;
        let intensity = match &v["intensity_f32_le"] {
            serde_json::Value::Null => None,
            s => Some(f32s(s.as_str().ok_or_else(|| bad("intensity_f32_le"))?)?),
        };
        let bits = B64.decode(v["valid_bitset"].as_str().ok_or_else(|| bad("valid_bitset"))?).map_err(|e| PointCloudError::Malformed(e.to_string()))?;
        if bits.len() != n.div_ceil(8) {
            return Err(bad("bitset length"));
        }
        let valid = (0..n).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect();
        Ok(Self { rows, cols, range, intensity, valid })
    }
}

/// Rasterizes a sensor-frame cloud. Each cell keeps its nearest point;
/// equal ranges resolve to the lower point index.
pub fn to_range_image(cloud: &PointCloud, sensor: &SensorSpec) -> RangeImage {
    let (rows, cols) = (sensor.rows(), sensor.cols());
    let mut ri = RangeImage::empty(rows, cols, cloud.intensity.is_some());
    let mut best: Vec<Option<(f64, usize)>> = vec![None; rows * cols];
    for (i, p) in cloud.points.iter().enumerate() {
        if let Some((row, col, r)) = sensor.bin(p) {
            let cell = row * cols + col;
            if best[cell].is_none_or(|(br, _)| r < br) {
                best[cell] = Some((r, i));
            }
        }
    }
    for (cell, b) in best.iter().enumerate() {
        if let Some((r, i)) = b {
            ri.valid[cell] = true;
            ri.range[cell] = *r as f32;
            if let (Some(dst), Some(src)) = (ri.intensity.as_mut(), cloud.intensity.as_ref()) {
                dst[cell] = src[*i] as f32;
            }
        }
    }
    ri
}

/// One point per valid cell at the beam elevation and column-center azimuth.
pub fn from_range_image(ri: &RangeImage, sensor: &SensorSpec) -> PointCloud {
    let mut points = Vec::new();
    let mut intensity = ri.intensity.as_ref().map(|_| Vec::new());
    for row in 0..ri.rows {
        let el = sensor.elevations[row];
        for col in 0..ri.cols {
            let cell = row * ri.cols + col;
            if !ri.valid[cell] {
                continue;
            }
            let r = f64::from(ri.range[cell]);
            let az = sensor.column_center(col);
            points.push(Point3::new(r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin()));
            if let (Some(out), Some(src)) = (intensity.as_mut(), ri.intensity.as_ref()) {
                out.push(f64::from(src[cell]));
            }
        }
    }
    PointCloud { points, intensity, source_pixels: None }
}

/// Unit normals from the covariance of each point's `k` nearest neighbours
/// (the point included), flipped to face `viewpoint`.
pub fn estimate_normals(cloud: &PointCloud, k: usize, viewpoint: &Point3<f64>) -> Result<Vec<Vector3<f64>>, PointCloudError> {
    let n = cloud.len();
    if k == 0 || n < k + 1 {
        return Err(PointCloudError::TooFewPoints { needed: k + 1, have: n });
    }
    let pts = &cloud.points;
    let coords: Vec<[f64; 3]> = pts.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&coords);
    let m = NonZeroUsize::new(k + 1).expect("k + 1 > 0");
    Ok((0..n)
        .map(|i| {
            let mut nb: Vec<(f64, usize)> = tree.nearest_n::<SquaredEuclidean>(&coords[i], m).into_iter().map(|nn| (nn.distance, nn.item as usize)).collect();
            nb.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mean = nb.iter().fold(Vector3::zeros(), |acc, (_, j)| acc + pts[*j].coords) / nb.len() as f64;
            let cov = nb.iter().fold(Matrix3::zeros(), |acc, (_, j)| {
                let c = pts[*j].coords - mean;
                acc + c * c.transpose()
            });
            let eig = SymmetricEigen::new(cov);
            let min = eig.eigenvalues.imin();
            let mut normal = eig.eigenvectors.column(min).into_owned().normalize();
            if normal.dot(&(viewpoint - pts[i])) < 0.0 {
                normal = -normal;
            }
            normal
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum IntensityMode {
    /// Gray value modulated by incidence angle and inverse-square falloff
    /// beyond `r_ref`.
    Simulate { r_ref: f64, k: usize },
    Constant { value: f64 },
}

impl Default for IntensityMode {
    fn default() -> Self {
        IntensityMode::Simulate { r_ref: 10.0, k: 8 }
    }
}

/// `clamp(gray · max(0, n·v) · min(1, (r_ref/r)²), 0, 1)` with `v` the unit
/// direction from the point to the sensor and `r` the distance to it.
pub fn intensity_value(gray: f64, normal: &Vector3<f64>, point: &Point3<f64>, origin: &Point3<f64>, r_ref: f64) -> f64 {
    let to_sensor = origin - point;
    let r = to_sensor.norm();
    if r == 0.0 {
        return gray.clamp(0.0, 1.0);
    }
    let cos = normal.dot(&(to_sensor / r)).max(0.0);
    let atten = (r_ref / r).powi(2).min(1.0);
    (gray * cos * atten).clamp(0.0, 1.0)
}

/// Replaces intensities using `gray` (one per point). With fewer than `k+1`
/// points normals are unavailable and the incidence factor is taken as 1.
pub fn simulate_intensity(cloud: &PointCloud, gray: &[f64], origin: &Point3<f64>, mode: IntensityMode) -> Result<PointCloud, PointCloudError> {
    if gray.len() != cloud.len() {
        return Err(PointCloudError::Mismatch(format!("{} gray values for {} points", gray.len(), cloud.len())));
    }
    let intensity = match mode {
        IntensityMode::Constant { value } => vec![value.clamp(0.0, 1.0); cloud.len()],
        IntensityMode::Simulate { r_ref, k } => match estimate_normals(cloud, k, origin) {
            Ok(normals) => cloud.points.iter().zip(&normals).zip(gray).map(|((p, n), g)| intensity_value(*g, n, p, origin, r_ref)).collect(),
            Err(_) => cloud
                .points
                .iter()
                .zip(gray)
                .map(|(p, g)| {
                    let facing = (origin - p).try_normalize(0.0).unwrap_or_else(Vector3::z);
                    intensity_value(*g, &facing, p, origin, r_ref)
                })
                .collect(),
        },
    };
    Ok(PointCloud { intensity: Some(intensity), ..cloud.clone() })
}

/// Bytes per persisted point: x, y, z, intensity as little-endian `f32`.
pub const POINT_RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSidecar {
    pub count: usize,
    pub frame: String,
    pub sensor_spec_id: String,
    pub has_intensity: bool,
}

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_RECORD_BYTES);
    for (i, p) in cloud.points.iter().enumerate() {
        let it = cloud.intensity.as_ref().map_or(0.0, |v| v[i]);
        for v in [p.x, p.y, p.z, it] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_cloud(bytes: &[u8], has_intensity: bool) -> Result<PointCloud, PointCloudError> {
    if bytes.len() % POINT_RECORD_BYTES != 0 {
        return Err(PointCloudError::Malformed(format!("{} bytes is not a whole number of point records", bytes.len())));
    }
    let mut points = Vec::with_capacity(bytes.len() / POINT_RECORD_BYTES);
    let mut intensity = Vec::new();
    for rec in bytes.chunks_exact(POINT_RECORD_BYTES) {
        let f = |k: usize| f64::from(f32::from_le_bytes([rec[4 * k], rec[4 * k + 1], rec[4 * k + 2], rec[4 * k + 3]]));
        points.push(Point3::new(f(0), f(1), f(2)));
        intensity.push(f(3));
    }
    Ok(PointCloud { points, intensity: has_intensity.then_some(intensity), source_pixels: None })
}

/// Rounds coordinates and intensities to `f32`, the persisted precision.
pub fn quantize(cloud: &PointCloud) -> PointCloud {
    decode_cloud(&encode_cloud(cloud), cloud.intensity.is_some()).expect("encoded records are well formed")
}
