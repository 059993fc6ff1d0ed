//! Camera and rigid-body geometry: oriented boxes, pinhole projection,
//! box-to-mask rasterization and depth backprojection.
//!
//! Frames: the sensor (LiDAR) frame is x forward, y left, z up. The camera
//! frame is x right, y down, z along the optical axis. A [`RigidTransform`]
//! passed as `pose` maps sensor-frame points into the camera frame.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points with camera-frame depth at or below this are never projected.
pub const EPS_DEPTH: f64 = 1e-6;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("box is not visible from the camera")]
    NotVisible,
    #[error("invalid depth {0} (must be > 0)")]
    InvalidDepth(f64),
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        t -= 2.0 * PI;
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let cam = Self { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return bad("focal lengths must be positive and finite");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be at least 1 px");
        }
        if !(self.cx >= 0.0 && self.cx < f64::from(self.width)) || !(self.cy >= 0.0 && self.cy < f64::from(self.height)) {
            return bad("principal point must lie inside the image");
        }
        Ok(())
    }

    /// Intrinsics of the sub-image `rect` (same focal lengths, shifted principal point).
    /// The principal point may fall outside the sub-image, so no validation is applied.
    pub fn cropped(&self, rect: &PixelRect) -> Self {
        Self {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx - f64::from(rect.left),
            cy: self.cy - f64::from(rect.top),
            width: rect.width(),
            height: rect.height(),
        }
    }
}

/// Rotation followed by translation: `p' = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform", into = "RawTransform")]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Row-major on-disk form.
#[derive(Serialize, Deserialize)]
struct RawTransform {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl TryFrom<RawTransform> for RigidTransform {
    type Error = GeometryError;
    fn try_from(raw: RawTransform) -> Result<Self, Self::Error> {
        RigidTransform::from_row_major(raw.rotation, raw.translation)
    }
}

impl From<RigidTransform> for RawTransform {
    fn from(t: RigidTransform) -> Self {
        let r = t.rotation;
        RawTransform {
            rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if orth > ORTHONORMAL_TOL || !orth.is_finite() {
            return Err(GeometryError::InvalidTransform(format!("rotation not orthonormal (|RᵀR−I| = {orth:e})")));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::InvalidTransform(format!("rotation determinant {det} != 1")));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidTransform("translation not finite".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_row_major(rotation: [f64; 9], translation: [f64; 3]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_row_slice(&rotation), Vector3::from(translation))
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Rotation by `angle` about +z.
    pub fn rotation_z(angle: f64) -> Self {
        Self { rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix(), translation: Vector3::zeros() }
    }

    /// Sensor-to-camera pose for a forward-looking camera whose optical center
    /// sits at `camera_position` in the sensor frame.
    pub fn forward_camera(camera_position: Vector3<f64>) -> Self {
        // camera x = -sensor y, camera y = -sensor z, camera z = sensor x
        let rotation = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        Self { rotation, translation: -(rotation * camera_position) }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self { rotation: self.rotation * other.rotation, translation: self.rotation * other.translation + self.translation }
    }

    /// Position of the frame origin that this transform maps to zero.
    pub fn source_origin(&self) -> Point3<f64> {
        self.inverse().apply(&Point3::origin())
    }
}

/// 7-DoF oriented box: center, size `(length, width, height)` along the box's
/// local x/y/z axes, and yaw about +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: Point3<f64>,
    pub size: Vector3<f64>,
    pub yaw: f64,
}

impl Box3D {
    /// Validating constructor. Yaw is wrapped into `[-π, π)`.
    pub fn new(center: Point3<f64>, size: Vector3<f64>, yaw: f64) -> Result<Self, GeometryError> {
        if !size.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(GeometryError::InvalidBox(format!("sizes must be positive, got {:?}", size.as_slice())));
        }
        if !center.iter().all(|c| c.is_finite()) || !yaw.is_finite() {
            return Err(GeometryError::InvalidBox("non-finite center or yaw".into()));
        }
        Ok(Self { center, size, yaw: wrap_angle(yaw) })
    }

    pub fn from_box7(b: [f64; 7]) -> Result<Self, GeometryError> {
        Self::new(Point3::new(b[0], b[1], b[2]), Vector3::new(b[3], b[4], b[5]), b[6])
    }

    pub fn to_box7(&self) -> [f64; 7] {
        [self.center.x, self.center.y, self.center.z, self.size.x, self.size.y, self.size.z, self.yaw]
    }

    /// Unit heading vector in the XY plane.
    pub fn heading(&self) -> (f64, f64) {
        (self.yaw.cos(), self.yaw.sin())
    }

    /// Corners: bottom face counter-clockwise seen from +z starting at local
    /// (-l/2, -w/2), then the top face in the same order.
    pub fn corners(&self) -> [Point3<f64>; 8] {
        let (c, s) = self.heading();
        let h = self.size * 0.5;
        let local = [(-h.x, -h.y), (h.x, -h.y), (h.x, h.y), (-h.x, h.y)];
        let mut out = [Point3::origin(); 8];
        for (layer, dz) in [-h.z, h.z].into_iter().enumerate() {
            for (i, (lx, ly)) in local.iter().enumerate() {
                out[layer * 4 + i] = Point3::new(
                    self.center.x + c * lx - s * ly,
                    self.center.y + s * lx + c * ly,
                    self.center.z + dz,
                );
            }
        }
        out
    }

    /// Point containment with an additive tolerance on every half-extent.
    pub fn contains(&self, p: &Point3<f64>, tol: f64) -> bool {
        let (c, s) = self.heading();
        let d = p - self.center;
        let lx = c * d.x + s * d.y;
        let ly = -s * d.x + c * d.y;
        lx.abs() <= self.size.x * 0.5 + tol && ly.abs() <= self.size.y * 0.5 + tol && d.z.abs() <= self.size.z * 0.5 + tol
    }

    /// Euclidean distance of the center from the sensor origin.
    pub fn center_range(&self) -> f64 {
        self.center.coords.norm()
    }

    pub fn z_interval(&self) -> (f64, f64) {
        (self.center.z - self.size.z * 0.5, self.center.z + self.size.z * 0.5)
    }
}

/// Half-open pixel rectangle `[left, right) × [top, bottom)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.right.saturating_sub(self.left)
    }

    pub fn height(&self) -> u32 {
        self.bottom.saturating_sub(self.top)
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }

    pub fn contains_rect(&self, other: &PixelRect) -> bool {
        self.left <= other.left && self.top <= other.top && self.right >= other.right && self.bottom >= other.bottom
    }

    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        x >= self.left && x < self.right && y >= self.top && y < self.bottom
    }
}

/// Per-pixel occupancy, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl PixelMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    /// Mask with exactly the pixels of `rect` (clipped to the mask bounds) set.
    pub fn from_rect(width: u32, height: u32, rect: &PixelRect) -> Self {
        let mut m = Self::empty(width, height);
        for y in rect.top..rect.bottom.min(height) {
            for x in rect.left..rect.right.min(width) {
                m.set(x, y, true);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let idx = (y * self.width + x) as usize;
        self.bits[idx] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    /// Tight bounding rectangle of set pixels.
    pub fn bounding_rect(&self) -> Option<PixelRect> {
        let mut r: Option<PixelRect> = None;
        for (x, y) in self.iter_set() {
            r = Some(match r {
                None => PixelRect { left: x, top: y, right: x + 1, bottom: y + 1 },
                Some(r) => PixelRect {
                    left: r.left.min(x),
                    top: r.top.min(y),
                    right: r.right.max(x + 1),
                    bottom: r.bottom.max(y + 1),
                },
            });
        }
        r
    }

    /// Mean pixel-center position of set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (x, y) in self.iter_set() {
            sx += f64::from(x) + 0.5;
            sy += f64::from(y) + 0.5;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Sub-mask covering `rect`; `rect` must lie inside the mask.
    pub fn crop(&self, rect: &PixelRect) -> PixelMask {
        let mut out = PixelMask::empty(rect.width(), rect.height());
        for y in 0..rect.height() {
            for x in 0..rect.width() {
                out.set(x, y, self.get(rect.left + x, rect.top + y));
            }
        }
        out
    }

    /// Grows the mask by `radius` pixels (Chebyshev / square structuring element).
    pub fn dilate(&self, radius: u32) -> PixelMask {
        let mut out = PixelMask::empty(self.width, self.height);
        let r = radius as i64;
        for (x, y) in self.iter_set() {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx >= 0 && ny >= 0 && (nx as u32) < self.width && (ny as u32) < self.height {
                        out.set(nx as u32, ny as u32, true);
                    }
                }
            }
        }
        out
    }
}

/// Result of projecting one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub valid: bool,
}

fn pinhole(p: &Point3<f64>, cam: &CameraIntrinsics) -> (f64, f64) {
    (cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy)
}

/// Projects sensor-frame points through `pose` and the pinhole model. Points
/// at or behind `EPS_DEPTH` or outside `[0,width)×[0,height)` are invalid.
pub fn project_points(points: &[Point3<f64>], cam: &CameraIntrinsics, pose: &RigidTransform) -> Vec<Projection> {
    points
        .iter()
        .map(|p| {
            let pc = pose.apply(p);
            if pc.z <= EPS_DEPTH {
                return Projection { u: f64::NAN, v: f64::NAN, valid: false };
            }
            let (u, v) = pinhole(&pc, cam);
            let valid = u >= 0.0 && u < f64::from(cam.width) && v >= 0.0 && v < f64::from(cam.height);
            Projection { u, v, valid }
        })
        .collect()
}

/// Inverse pinhole: `depth · K⁻¹ · [u, v, 1]ᵀ` in the camera frame.
pub fn backproject(u: f64, v: f64, depth: f64, cam: &CameraIntrinsics) -> Result<Point3<f64>, GeometryError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::InvalidDepth(depth));
    }
    Ok(Point3::new((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth))
}

const BOX_EDGES: [(usize, usize); 12] =
    [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)];

/// Image-plane convex hull of the box, with edges clipped against the
/// near plane so partially-behind boxes project correctly. The hull is not
/// clipped to the image. Errors with `NotVisible` when the box lies entirely
/// behind the camera or its hull misses the image.
pub fn project_box_hull(bx: &Box3D, cam: &CameraIntrinsics, pose: &RigidTransform) -> Result<Vec<[f64; 2]>, GeometryError> {
    let cam_corners: Vec<Point3<f64>> = bx.corners().iter().map(|c| pose.apply(c)).collect();
    let near = EPS_DEPTH * 2.0;
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(24);
    for c in &cam_corners {
        if c.z > near {
            let (u, v) = pinhole(c, cam);
            pts.push([u, v]);
        }
    }
    if pts.is_empty() {
        return Err(GeometryError::NotVisible);
    }
    for (a, b) in BOX_EDGES {
        let (pa, pb) = (cam_corners[a], cam_corners[b]);
        if (pa.z > near) != (pb.z > near) {
            let t = (near - pa.z) / (pb.z - pa.z);
            let hit = pa + (pb - pa) * t;
            let hit = Point3::new(hit.x, hit.y, near);
            let (u, v) = pinhole(&hit, cam);
            pts.push([u, v]);
        }
    }
    let hull = convex_hull(&pts);
    let inside = clip_polygon_to_rect(&hull, 0.0, 0.0, f64::from(cam.width), f64::from(cam.height));
    if polygon_area(&inside) <= 0.0 {
        return Err(GeometryError::NotVisible);
    }
    Ok(hull)
}

/// Filled convex hull of the projected box, clipped to the image.
pub fn box_to_mask(bx: &Box3D, cam: &CameraIntrinsics, pose: &RigidTransform) -> Result<PixelMask, GeometryError> {
    let hull = project_box_hull(bx, cam, pose)?;
    let mask = rasterize_convex(&hull, cam.width, cam.height);
    if mask.is_empty() {
        return Err(GeometryError::NotVisible);
    }
    Ok(mask)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Monotone-chain convex hull with positive signed area. Collinear points
/// are dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.iter().copied().filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], *p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], *p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Shoelace area (absolute).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc.abs() * 0.5
}

/// Sutherland–Hodgman clip of a convex polygon against an axis-aligned rectangle.
pub fn clip_polygon_to_rect(poly: &[[f64; 2]], x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    // (axis, bound, keep_greater)
    let planes = [(0usize, x0, true), (0, x1, false), (1, y0, true), (1, y1, false)];
    let mut out: Vec<[f64; 2]> = poly.to_vec();
    for (axis, bound, keep_greater) in planes {
        if out.is_empty() {
            break;
        }
        let inside = |p: &[f64; 2]| if keep_greater { p[axis] >= bound } else { p[axis] <= bound };
        let input = std::mem::take(&mut out);
        for i in 0..input.len() {
            let cur = input[i];
            let prev = input[(i + input.len() - 1) % input.len()];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                let mut hit = [prev[0] + (cur[0] - prev[0]) * t, prev[1] + (cur[1] - prev[1]) * t];
                hit[axis] = bound;
                out.push(hit);
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out
}

/// Rasterizes a convex polygon: a pixel is set when its center lies inside
/// or on the boundary.
pub fn rasterize_convex(poly: &[[f64; 2]], width: u32, height: u32) -> PixelMask {
    let mut mask = PixelMask::empty(width, height);
    if poly.len() < 3 {
        return mask;
    }
    let (mut minx, mut miny, mut maxx, mut maxy) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in poly {
        minx = minx.min(p[0]);
        miny = miny.min(p[1]);
        maxx = maxx.max(p[0]);
        maxy = maxy.max(p[1]);
    }
    let x_lo = (minx - 0.5).ceil().max(0.0) as i64;
    let y_lo = (miny - 0.5).ceil().max(0.0) as i64;
    let x_hi = ((maxx - 0.5).floor() as i64).min(i64::from(width) - 1);
    let y_hi = ((maxy - 0.5).floor() as i64).min(i64::from(height) - 1);
    let scale = (maxx - minx).abs().max((maxy - miny).abs()).max(1.0);
    let tol = -1e-9 * scale;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let c = [x as f64 + 0.5, y as f64 + 0.5];
            let inside = (0..poly.len()).all(|i| cross(poly[i], poly[(i + 1) % poly.len()], c) >= tol);
            if inside {
                mask.set(x as u32, y as u32, true);
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn unit_cube_corners() {
        let b = Box3D::new(Point3::origin(), Vector3::new(1.0, 1.0, 1.0), 0.0).unwrap();
        for c in b.corners() {
            for v in c.iter() {
                assert_abs_diff_eq!(v.abs(), 0.5, epsilon = 1e-15);
            }
        }
        let c = b.corners();
        assert_eq!(c[0], Point3::new(-0.5, -0.5, -0.5));
        assert_eq!(c[2], Point3::new(0.5, 0.5, -0.5));
        assert_eq!(c[4], Point3::new(-0.5, -0.5, 0.5));
    }

    #[test]
    fn quarter_turn_swaps_extents() {
        let b = Box3D::new(Point3::origin(), Vector3::new(2.0, 1.0, 1.0), std::f64::consts::FRAC_PI_2).unwrap();
        let c = b.corners();
        let xmax = c.iter().map(|p| p.x.abs()).fold(0.0, f64::max);
        let ymax = c.iter().map(|p| p.y.abs()).fold(0.0, f64::max);
        assert_abs_diff_eq!(xmax, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(ymax, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eighth_turn_matches_explicit_rotation() {
        let theta = std::f64::consts::FRAC_PI_4;
        let b = Box3D::new(Point3::origin(), Vector3::new(2.0, 1.0, 1.0), theta).unwrap();
        let rot = nalgebra::Matrix2::new(theta.cos(), -theta.sin(), theta.sin(), theta.cos());
        let halves = [(-1.0, -0.5), (1.0, -0.5), (1.0, 0.5), (-1.0, 0.5)];
        let c = b.corners();
        for (i, (hx, hy)) in halves.iter().enumerate() {
            let r = rot * nalgebra::Vector2::new(*hx, *hy);
            for layer in 0..2 {
                assert_abs_diff_eq!(c[layer * 4 + i].x, r.x, epsilon = 1e-12);
                assert_abs_diff_eq!(c[layer * 4 + i].y, r.y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let cam = cam();
        let id = RigidTransform::identity();
        let p = project_points(&[Point3::new(0.0, 0.0, 10.0), Point3::new(0.0, 0.0, -5.0), Point3::new(1.0, 2.0, 4.0)], &cam, &id);
        assert_eq!((p[0].u, p[0].v, p[0].valid), (320.0, 240.0, true));
        assert!(!p[1].valid);
        assert_abs_diff_eq!(p[2].u, 445.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2].v, 490.0, epsilon = 1e-12);
        // v = 490 lies outside a 480-row image
        assert!(!p[2].valid);
        let tall = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 640).unwrap();
        assert!(project_points(&[Point3::new(1.0, 2.0, 4.0)], &tall, &id)[0].valid);
    }

    #[test]
    fn backprojection_examples() {
        let cam = cam();
        assert_eq!(backproject(320.0, 240.0, 7.0, &cam).unwrap(), Point3::new(0.0, 0.0, 7.0));
        let p = backproject(445.0, 490.0, 4.0, &cam).unwrap();
        assert_abs_diff_eq!(p.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 2.0, epsilon = 1e-12);
        assert_eq!(p.z, 4.0);
        assert_eq!(backproject(1.0, 1.0, 0.0, &cam), Err(GeometryError::InvalidDepth(0.0)));
        assert!(backproject(1.0, 1.0, -3.0, &cam).is_err());
    }

    #[test]
    fn box_behind_camera_is_not_visible() {
        let cam = cam();
        let pose = RigidTransform::forward_camera(Vector3::zeros());
        let b = Box3D::new(Point3::new(-10.0, 0.0, 0.0), Vector3::new(2.0, 2.0, 2.0), 0.3).unwrap();
        assert_eq!(box_to_mask(&b, &cam, &pose), Err(GeometryError::NotVisible));
    }

    #[test]
    fn centered_box_mask_centroid_at_principal_point() {
        let cam = cam();
        let pose = RigidTransform::forward_camera(Vector3::zeros());
        let b = Box3D::new(Point3::new(15.0, 0.0, 0.0), Vector3::new(2.0, 2.0, 2.0), 0.0).unwrap();
        let m = box_to_mask(&b, &cam, &pose).unwrap();
        let (u, v) = m.centroid().unwrap();
        assert!((u - cam.cx).abs() <= 1.0 && (v - cam.cy).abs() <= 1.0, "centroid {u},{v}");
    }

    #[test]
    fn partially_behind_box_clips_against_near_plane() {
        let cam = cam();
        let pose = RigidTransform::forward_camera(Vector3::zeros());
        // straddles the camera plane; still produces a mask
        let b = Box3D::new(Point3::new(0.5, 0.0, 0.0), Vector3::new(4.0, 1.0, 1.0), 0.0).unwrap();
        let m = box_to_mask(&b, &cam, &pose).unwrap();
        assert!(m.count() > 0);
    }

    fn ray_crossing_inside(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
        let mut inside = false;
        let n = poly.len();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if (a[1] > y) != (b[1] > y) {
                let xi = a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if x < xi {
                    inside = !inside;
                }
            }
        }
        inside
    }

    #[test]
    fn mask_area_matches_scanline_oracle() {
        let cam = cam();
        let pose = RigidTransform::forward_camera(Vector3::new(0.0, 0.0, 1.5));
        let mut rng = crate::rng::stream(3, 0, "mask-oracle");
        use rand::Rng;
        for _ in 0..20 {
            let b = Box3D::new(
                Point3::new(rng.random_range(6.0..30.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)),
                Vector3::new(rng.random_range(0.5..5.0), rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)),
                rng.random_range(-3.0..3.0),
            )
            .unwrap();
            let pts: Vec<[f64; 2]> = project_points(&b.corners(), &cam, &pose)
                .iter()
                .map(|p| {
                    assert!(p.u.is_finite());
                    [p.u, p.v]
                })
                .collect();
            let hull = convex_hull(&pts);
            let mut oracle = 0usize;
            for y in 0..cam.height {
                for x in 0..cam.width {
                    if ray_crossing_inside(&hull, f64::from(x) + 0.5, f64::from(y) + 0.5) {
                        oracle += 1;
                    }
                }
            }
            let mask = box_to_mask(&b, &cam, &pose).map(|m| m.count()).unwrap_or(0);
            assert_eq!(mask, oracle);
        }
    }

    #[test]
    fn frame_composition_consistency() {
        // rotating the box by θ about the sensor z axis while rotating the camera
        // extrinsics by −θ about the same axis leaves the image unchanged
        let cam = cam();
        let pose = RigidTransform::forward_camera(Vector3::new(0.2, 0.0, 1.5));
        let b = Box3D::new(Point3::new(12.0, 1.0, -0.5), Vector3::new(3.0, 1.5, 1.2), 0.4).unwrap();
        let theta = 0.7;
        let rot = RigidTransform::rotation_z(theta);
        let rotated = Box3D::new(rot.apply(&b.center), b.size, b.yaw + theta).unwrap();
        let pose_rot = pose.compose(&RigidTransform::rotation_z(-theta));
        let m1 = box_to_mask(&b, &cam, &pose).unwrap();
        let m2 = box_to_mask(&rotated, &cam, &pose_rot).unwrap();
        let diff = m1.bits.iter().zip(&m2.bits).filter(|(a, b)| a != b).count();
        let r1 = m1.bounding_rect().unwrap();
        let r2 = m2.bounding_rect().unwrap();
        assert!(r1.left.abs_diff(r2.left) <= 1 && r1.right.abs_diff(r2.right) <= 1);
        assert!(r1.top.abs_diff(r2.top) <= 1 && r1.bottom.abs_diff(r2.bottom) <= 1);
        // differences only along the 1-px rasterization boundary
        assert!(diff <= m1.dilate(1).count() - m1.count() + 4);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 10.0, 0.0, 10, 10).is_err());
        assert!(Box3D::new(Point3::origin(), Vector3::new(1.0, 0.0, 1.0), 0.0).is_err());
        assert!(RigidTransform::from_row_major([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0], [0.0; 3]).is_err());
        assert!(RigidTransform::from_row_major([2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], [0.0; 3]).is_err());
    }

    #[test]
    fn transform_serializes_row_major() {
        let t = RigidTransform::forward_camera(Vector3::new(1.0, 2.0, 3.0));
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.starts_with("{\"rotation\":[0.0,-1.0,0.0,0.0,0.0,-1.0,1.0,0.0,0.0]"), "{json}");
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn project_backproject_roundtrip(u in 0.0f64..640.0, v in 0.0f64..480.0, d in 0.1f64..200.0) {
            let cam = cam();
            let p = backproject(u, v, d, &cam).unwrap();
            let proj = project_points(&[p], &cam, &RigidTransform::identity())[0];
            prop_assert!(proj.valid);
            prop_assert!((proj.u - u).abs() < 1e-6 && (proj.v - v).abs() < 1e-6);
        }

        #[test]
        fn corners_preserve_center(cx in -50.0f64..50.0, cy in -50.0f64..50.0, cz in -3.0f64..3.0,
                                    sx in 0.1f64..10.0, sy in 0.1f64..10.0, sz in 0.1f64..5.0, yaw in -4.0f64..4.0) {
            let b = Box3D::new(Point3::new(cx, cy, cz), Vector3::new(sx, sy, sz), yaw).unwrap();
            let mean = b.corners().iter().fold(Vector3::zeros(), |acc, c| acc + c.coords) / 8.0;
            prop_assert!((mean - b.center.coords).abs().max() <= 1e-12 * (1.0 + b.center.coords.abs().max()));
            prop_assert!(b.yaw >= -PI && b.yaw < PI);
        }

        #[test]
        fn mask_invariant_under_full_turn(x in 5.0f64..30.0, y in -6.0f64..6.0, yaw in -3.1f64..3.1) {
            let cam = cam();
            let pose = RigidTransform::forward_camera(Vector3::new(0.0, 0.0, 1.5));
            let size = Vector3::new(2.0, 1.0, 1.5);
            let a = Box3D::new(Point3::new(x, y, 0.0), size, yaw).unwrap();
            let b = Box3D::new(Point3::new(x, y, 0.0), size, yaw + 2.0 * PI).unwrap();
            prop_assert_eq!(box_to_mask(&a, &cam, &pose).ok(), box_to_mask(&b, &cam, &pose).ok());
        }
    }
}
