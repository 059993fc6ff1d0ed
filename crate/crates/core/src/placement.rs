//! Candidate box sampling, the visibility pre-filter and inpainting crop selection.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    clip_polygon_to_rect, polygon_area, project_box_hull, rasterize_convex, wrap_angle, Box3D, CameraIntrinsics,
    PixelMask, PixelRect, RigidTransform,
};

pub type CropRect = PixelRect;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("invalid size prior: {0}")]
    InvalidPrior(String),
    #[error("invalid placement region: {0}")]
    InvalidRegion(String),
}

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn point(v: f64) -> Self {
        Self { min: v, max: v }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    fn is_ordered(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min <= self.max
    }

    /// Uniform draw; a degenerate interval returns its single value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let v = self.min + (self.max - self.min) * u;
        v.clamp(self.min, self.max)
    }
}

/// Per-axis physical size ranges in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizePrior {
    pub length: Interval,
    pub width: Interval,
    pub height: Interval,
}

impl SizePrior {
    pub fn new(length: Interval, width: Interval, height: Interval) -> Result<Self, PlacementError> {
        let p = Self { length, width, height };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PlacementError> {
        for (name, iv) in self.axes() {
            if !(iv.is_ordered() && iv.min > 0.0) {
                return Err(PlacementError::InvalidPrior(format!("{name}: need 0 < min <= max, got [{}, {}]", iv.min, iv.max)));
            }
        }
        Ok(())
    }

    pub fn axes(&self) -> [(&'static str, Interval); 3] {
        [("length", self.length), ("width", self.width), ("height", self.height)]
    }

    pub fn midpoint(&self) -> Vector3<f64> {
        Vector3::new(self.length.midpoint(), self.width.midpoint(), self.height.midpoint())
    }
}

/// Sensor-frame region candidate poses are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementRegion {
    pub x: Interval,
    pub y: Interval,
    pub z_ground: f64,
    pub yaw: Interval,
    /// When set, `c_z` is drawn uniformly from this interval instead of
    /// resting the box on `z_ground`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_z: Option<Interval>,
}

impl PlacementRegion {
    pub fn validate(&self) -> Result<(), PlacementError> {
        let checks = [("x", Some(self.x)), ("y", Some(self.y)), ("yaw", Some(self.yaw)), ("free_z", self.free_z)];
        for (name, iv) in checks {
            if let Some(iv) = iv {
                if !iv.is_ordered() {
                    return Err(PlacementError::InvalidRegion(format!("{name} range [{}, {}] is not ordered", iv.min, iv.max)));
                }
            }
        }
        if !self.z_ground.is_finite() {
            return Err(PlacementError::InvalidRegion("ground height must be finite".into()));
        }
        Ok(())
    }
}

/// Draws one candidate box. Draw order is fixed (x, y, yaw, length, width,
/// height, then z when `free_z` is set) so a stream always yields the same box.
pub fn sample_box<R: Rng + ?Sized>(prior: &SizePrior, region: &PlacementRegion, rng: &mut R) -> Box3D {
    let cx = region.x.sample(rng);
    let cy = region.y.sample(rng);
    let yaw = wrap_angle(region.yaw.sample(rng));
    let size = Vector3::new(prior.length.sample(rng), prior.width.sample(rng), prior.height.sample(rng));
    let cz = match region.free_z {
        Some(z) => z.sample(rng),
        None => region.z_ground + 0.5 * size.z,
    };
    Box3D { center: Point3::new(cx, cy, cz), size, yaw }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityConfig {
    /// Minimum fraction of the projected hull area inside the image.
    pub min_inside_fraction: f64,
    /// Minimum mask area in pixels.
    pub min_area_px: usize,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        Self { min_inside_fraction: 0.8, min_area_px: 32 * 32 }
    }
}

/// Pre-filter run before spending an inpainting call on a candidate.
pub fn visibility_gate(bx: &Box3D, cam: &CameraIntrinsics, pose: &RigidTransform, cfg: &VisibilityConfig) -> bool {
    visible_mask(bx, cam, pose, cfg).is_some()
}

/// The candidate's mask when it passes the visibility gate.
pub fn visible_mask(bx: &Box3D, cam: &CameraIntrinsics, pose: &RigidTransform, cfg: &VisibilityConfig) -> Option<PixelMask> {
    let hull = project_box_hull(bx, cam, pose).ok()?;
    let total = polygon_area(&hull);
    let inside = polygon_area(&clip_polygon_to_rect(&hull, 0.0, 0.0, f64::from(cam.width), f64::from(cam.height)));
    if !(total > 0.0) || inside / total < cfg.min_inside_fraction {
        return None;
    }
    let mask = rasterize_convex(&hull, cam.width, cam.height);
    (mask.count() >= cfg.min_area_px).then_some(mask)
}

const CROP_QUANTUM: u32 = 64;

/// Square crop around the mask: the tight bounding rectangle dilated by
/// `margin_frac` of its larger side on every side, rounded up to a multiple
/// of 64 px (64 px minimum), then shifted and clipped to fit the image.
///
/// # Panics
/// If the mask is empty.
pub fn inpaint_crop(mask: &PixelMask, margin_frac: f64) -> CropRect {
    let rect = mask.bounding_rect().expect("inpaint_crop requires a non-empty mask");
    let (w, h) = (rect.width(), rect.height());
    let margin = (margin_frac.max(0.0) * f64::from(w.max(h))).ceil() as u32;
    let side = (w.max(h) + 2 * margin).max(1);
    let side = side.div_ceil(CROP_QUANTUM) * CROP_QUANTUM;
    let tw = side.min(mask.width);
    let th = side.min(mask.height);
    let place = |lo: u32, extent: u32, target: u32, limit: u32| -> u32 {
        let start = i64::from(lo) - i64::from(target - extent) / 2;
        start.clamp(0, i64::from(limit - target)) as u32
    };
    let left = place(rect.left, w, tw, mask.width);
    let top = place(rect.top, h, th, mask.height);
    CropRect { left, top, right: left + tw, bottom: top + th }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::box_to_mask;
    use crate::rng::stream;

    fn prior() -> SizePrior {
        SizePrior::new(Interval::new(1.6, 2.0), Interval::new(0.5, 0.8), Interval::new(1.0, 1.4)).unwrap()
    }

    fn region() -> PlacementRegion {
        PlacementRegion {
            x: Interval::new(0.0, 54.0),
            y: Interval::new(-10.0, 10.0),
            z_ground: -1.8,
            yaw: Interval::new(-std::f64::consts::PI, std::f64::consts::PI),
            free_z: None,
        }
    }

    #[test]
    fn degenerate_region_and_prior_give_unique_box() {
        let p = SizePrior::new(Interval::point(2.0), Interval::point(1.0), Interval::point(1.5)).unwrap();
        let r = PlacementRegion { x: Interval::point(10.0), y: Interval::point(-2.0), z_ground: -1.0, yaw: Interval::point(0.25), free_z: None };
        let b = sample_box(&p, &r, &mut stream(1, 0, "t"));
        assert_eq!(b.to_box7(), [10.0, -2.0, -0.25, 2.0, 1.0, 1.5, 0.25]);
    }

    #[test]
    fn samples_stay_in_support_and_mean_matches_uniform_law() {
        let (p, r) = (prior(), region());
        let mut rng = stream(42, 0, "support");
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let b = sample_box(&p, &r, &mut rng);
            assert!(p.length.contains(b.size.x) && p.width.contains(b.size.y) && p.height.contains(b.size.z));
            assert!((b.center.z - (r.z_ground + b.size.z / 2.0)).abs() < 1e-12);
            assert!(b.yaw >= -std::f64::consts::PI && b.yaw < std::f64::consts::PI);
            sum += b.center.x;
        }
        let mean = sum / n as f64;
        // uniform on [0, 54]: mean 27, sd 54/sqrt(12)
        let se = 54.0 / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 27.0).abs() < 3.0 * se, "mean {mean}, 3σ {}", 3.0 * se);
    }

    #[test]
    fn sampling_is_a_pure_function_of_the_stream() {
        let (p, r) = (prior(), region());
        let a: Vec<_> = (0..50).map(|i| sample_box(&p, &r, &mut stream(42, i, "box"))).collect();
        let b: Vec<_> = (0..50).rev().map(|i| sample_box(&p, &r, &mut stream(42, i, "box"))).collect::<Vec<_>>().into_iter().rev().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn free_z_draws_center_height() {
        let mut r = region();
        r.free_z = Some(Interval::new(-1.0, 1.0));
        let mut rng = stream(5, 0, "z");
        for _ in 0..100 {
            let b = sample_box(&prior(), &r, &mut rng);
            assert!((-1.0..=1.0).contains(&b.center.z));
        }
    }

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn visibility_examples() {
        let cam = cam();
        let pose = RigidTransform::forward_camera(Vector3::zeros());
        let cfg = VisibilityConfig::default();
        let behind = Box3D::new(Point3::new(-8.0, 0.0, 0.0), Vector3::new(2.0, 2.0, 2.0), 0.0).unwrap();
        assert!(!visibility_gate(&behind, &cam, &pose, &cfg));
        let center = Box3D::new(Point3::new(10.0, 0.0, 0.0), Vector3::new(2.0, 2.0, 2.0), 0.0).unwrap();
        assert!(visibility_gate(&center, &cam, &pose, &cfg));
        let tiny = Box3D::new(Point3::new(80.0, 0.0, 0.0), Vector3::new(0.3, 0.3, 0.3), 0.0).unwrap();
        assert!(!visibility_gate(&tiny, &cam, &pose, &cfg));
    }

    #[test]
    fn box_straddling_left_border_by_half_is_rejected() {
        let cam = cam();
        let pose = RigidTransform::forward_camera(Vector3::zeros());
        // fronto-parallel slab whose projection is centered on u = 0
        let depth = 10.0;
        let y = cam.cx / cam.fx * depth; // sensor +y is image left
        let b = Box3D::new(Point3::new(depth, y, 0.0), Vector3::new(0.01, 2.0, 2.0), 0.0).unwrap();
        // oracle: pixel counts of the hull rasterized on a canvas wide enough to hold it
        let pts: Vec<[f64; 2]> = crate::geometry::project_points(&b.corners(), &cam, &pose)
            .iter()
            .map(|p| [p.u + 200.0, p.v])
            .collect();
        let hull = crate::geometry::convex_hull(&pts);
        let full = rasterize_convex(&hull, cam.width + 400, cam.height);
        let inside = full.iter_set().filter(|(x, _)| *x >= 200 && *x < 200 + cam.width).count();
        let frac = inside as f64 / full.count() as f64;
        assert!((frac - 0.5).abs() < 0.02, "oracle fraction {frac}");
        assert!(!visibility_gate(&b, &cam, &pose, &VisibilityConfig::default()));
        // fully inside twin is accepted
        let b2 = Box3D::new(Point3::new(depth, 0.0, 0.0), b.size, 0.0).unwrap();
        assert!(visibility_gate(&b2, &cam, &pose, &VisibilityConfig::default()));
        assert!(box_to_mask(&b, &cam, &pose).is_ok());
    }

    #[test]
    fn crop_examples() {
        let full = PixelMask::from_rect(900, 900, &PixelRect { left: 0, top: 0, right: 900, bottom: 900 });
        assert_eq!(inpaint_crop(&full, 0.5), PixelRect { left: 0, top: 0, right: 900, bottom: 900 });

        let center = PixelMask::from_rect(900, 900, &PixelRect { left: 400, top: 400, right: 500, bottom: 500 });
        let c = inpaint_crop(&center, 0.5);
        // 100 + 2*50 = 200, rounded up to 256
        assert_eq!((c.width(), c.height()), (256, 256));
        assert_eq!(c, PixelRect { left: 322, top: 322, right: 578, bottom: 578 });

        let dot = PixelMask::from_rect(900, 900, &PixelRect { left: 450, top: 450, right: 451, bottom: 451 });
        let c = inpaint_crop(&dot, 0.5);
        assert_eq!((c.width(), c.height()), (64, 64));
        assert!(c.contains_pixel(450, 450));
        assert!(c.left.abs_diff(450 - 32) <= 1 && c.top.abs_diff(450 - 32) <= 1);
    }

    #[test]
    fn crop_near_border_is_shifted_inside() {
        let m = PixelMask::from_rect(300, 200, &PixelRect { left: 0, top: 150, right: 30, bottom: 200 });
        let c = inpaint_crop(&m, 0.5);
        assert!(c.right <= 300 && c.bottom <= 200);
        assert!(c.contains_rect(&m.bounding_rect().unwrap()));
    }

    proptest::proptest! {
        #[test]
        fn crop_contains_mask_rect(w in 1u32..400, h in 1u32..400, l in 0u32..400, t in 0u32..400,
                                   rw in 1u32..200, rh in 1u32..200, margin in 0.0f64..1.5) {
            let l = l % w;
            let t = t % h;
            let rect = PixelRect { left: l, top: t, right: (l + rw).min(w), bottom: (t + rh).min(h) };
            let m = PixelMask::from_rect(w, h, &rect);
            let c = inpaint_crop(&m, margin);
            proptest::prop_assert!(c.contains_rect(&rect));
            proptest::prop_assert!(c.right <= w && c.bottom <= h);
            proptest::prop_assert!(c.width() == w || c.width() % 64 == 0);
            proptest::prop_assert!(c.height() == h || c.height() % 64 == 0);
        }
    }
}
