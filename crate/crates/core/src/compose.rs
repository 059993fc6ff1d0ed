//! Scene composition: collision-aware instance selection, painter's-order
//! RGB compositing, LiDAR occlusion carving and label box recovery.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Box3D, CameraIntrinsics, PixelMask, RigidTransform};
use crate::geoverify::{fit_obb_xy, GeoError};
use crate::pointcloud::{PointCloud, SensorSpec};
use crate::providers::ImageBuffer;

/// A verified synthetic instance ready for insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAsset {
    pub id: String,
    pub category: String,
    pub subclass: String,
    /// Inpainted crop and the object's mask inside it.
    pub cutout: ImageBuffer,
    pub cutout_mask: PixelMask,
    /// Top-left corner of the crop in the source image.
    pub offset: (u32, u32),
    /// Pseudo-LiDAR in the sensor frame.
    pub cloud: PointCloud,
    pub bbox: Box3D,
    pub source_scene: String,
    pub center_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub category: String,
    pub box7: [f64; 7],
    pub instance_id: String,
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub scene_id: String,
    pub image: ImageBuffer,
    pub cloud: PointCloud,
    pub camera: CameraIntrinsics,
    /// Sensor-to-camera pose.
    pub pose: RigidTransform,
    pub labels: Vec<Label>,
    pub sensor: SensorSpec,
}

/// Default per-scene insertion caps for the 32-beam dataset.
pub fn default_caps() -> BTreeMap<String, usize> {
    [("construction vehicle", 7), ("motorcycle", 5), ("bicycle", 5)].into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Default per-scene cap for the 64-beam dataset, applied to every category.
pub const LYFT_CAP: usize = 6;

fn xy_corners(b: &Box3D) -> [[f64; 2]; 4] {
    let c = b.corners();
    [[c[0].x, c[0].y], [c[1].x, c[1].y], [c[2].x, c[2].y], [c[3].x, c[3].y]]
}

fn project_interval(poly: &[[f64; 2]; 4], axis: [f64; 2]) -> (f64, f64) {
    poly.iter().map(|p| p[0] * axis[0] + p[1] * axis[1]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Smallest overlap of the two footprints over the separating-axis
/// candidates; negative when some axis separates them.
pub fn xy_penetration(a: &Box3D, b: &Box3D) -> f64 {
    let (pa, pb) = (xy_corners(a), xy_corners(b));
    let axes = [a.yaw, a.yaw + std::f64::consts::FRAC_PI_2, b.yaw, b.yaw + std::f64::consts::FRAC_PI_2].map(|t| [t.cos(), t.sin()]);
    axes.iter()
        .map(|ax| {
            let (a0, a1) = project_interval(&pa, *ax);
            let (b0, b1) = project_interval(&pb, *ax);
            a1.min(b1) - a0.max(b0)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Closed-set overlap test: rotated footprints intersect and the vertical
/// intervals overlap. Touching boxes count as overlapping.
pub fn boxes_overlap(a: &Box3D, b: &Box3D) -> bool {
    let (az0, az1) = a.z_interval();
    let (bz0, bz1) = b.z_interval();
    az0 <= bz1 && bz0 <= az1 && xy_penetration(a, b) >= 0.0
}

/// Greedy selection over a seeded shuffle. An asset is accepted when its box
/// overlaps no existing box and no accepted asset, and its category is under
/// its cap (categories without a cap are unlimited). Returns database indices
/// in acceptance order.
pub fn select_instances<R: Rng + ?Sized>(db: &[InstanceAsset], existing: &[Box3D], caps: &BTreeMap<String, usize>, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..db.len()).collect();
    order.shuffle(rng);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut placed: Vec<Box3D> = existing.to_vec();
    let mut chosen = Vec::new();
    for i in order {
        let a = &db[i];
        let cap = caps.get(&a.category).copied().unwrap_or(usize::MAX);
        let n = counts.entry(a.category.as_str()).or_default();
        if *n >= cap || placed.iter().any(|b| boxes_overlap(&a.bbox, b)) {
            continue;
        }
        *n += 1;
        placed.push(a.bbox);
        chosen.push(i);
    }
    chosen
}

fn painter_order<'a>(assets: &[&'a InstanceAsset]) -> Vec<&'a InstanceAsset> {
    let mut v = assets.to_vec();
    v.sort_by(|a, b| b.center_range.total_cmp(&a.center_range).then_with(|| a.id.cmp(&b.id)));
    v
}

/// Paints each asset's masked cutout pixels far to near by center range.
pub fn composite_rgb(image: &ImageBuffer, assets: &[&InstanceAsset]) -> ImageBuffer {
    let mut out = image.clone();
    for a in painter_order(assets) {
        let (ox, oy) = a.offset;
        for (x, y) in a.cutout_mask.iter_set() {
            let (tx, ty) = (ox + x, oy + y);
            if tx < out.width && ty < out.height {
                out.set(tx, ty, a.cutout.get(x, y));
            }
        }
    }
    out
}

/// Outcome of occlusion carving.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionResult {
    /// Surviving scene points followed by every inserted cloud in order.
    pub cloud: PointCloud,
    /// Indices of removed scene points, ascending.
    pub removed: Vec<usize>,
}

/// Removes scene points that lie strictly behind an inserted point in the
/// same sensor cell, then appends the inserted clouds.
pub fn remove_occluded(scene: &PointCloud, inserted: &[&InstanceAsset], sensor: &SensorSpec) -> OcclusionResult {
    let mut nearest: HashMap<(usize, usize), f64> = HashMap::new();
    for a in inserted {
        for p in &a.cloud.points {
            if let Some((row, col, r)) = sensor.bin(p) {
                nearest.entry((row, col)).and_modify(|m| *m = m.min(r)).or_insert(r);
            }
        }
    }
    let removed: Vec<usize> = scene
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| sensor.bin(p).is_some_and(|(row, col, r)| nearest.get(&(row, col)).is_some_and(|m| r > *m)))
        .map(|(i, _)| i)
        .collect();
    let mut drop = vec![false; scene.len()];
    for i in &removed {
        drop[*i] = true;
    }
    let mut cloud = scene.filter_indices(|i| !drop[i]);
    cloud.source_pixels = None;
    for a in inserted {
        cloud = cloud.merge(&a.cloud);
    }
    OcclusionResult { cloud, removed }
}

/// Label box from the sensor-grid cloud, falling back to the union with the
/// dense reconstruction when the sparse cloud is degenerate in XY.
pub fn recover_box(lidar: &PointCloud, dense: Option<&PointCloud>) -> Result<Box3D, GeoError> {
    match (fit_obb_xy(lidar), dense) {
        (Ok(b), _) => Ok(b),
        (Err(_), Some(d)) => fit_obb_xy(&lidar.merge(d)),
        (Err(e), None) => Err(e),
    }
}

/// Points of `cloud` inside `b` (with a 1e-6 m tolerance).
pub fn points_in_box(cloud: &PointCloud, b: &Box3D) -> usize {
    cloud.points.iter().filter(|p| b.contains(p, 1e-6)).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedScene {
    pub image: ImageBuffer,
    pub cloud: PointCloud,
    pub labels: Vec<Label>,
    pub inserted: Vec<String>,
    /// Selected assets dropped for having fewer than `p_n` points in their box.
    pub dropped: Vec<String>,
    pub removed_points: usize,
}

/// Selects, validates and inserts assets into one scene. Real labels are kept
/// unchanged.
pub fn compose_scene<R: Rng + ?Sized>(scene: &SceneSample, db: &[InstanceAsset], caps: &BTreeMap<String, usize>, p_n: usize, rng: &mut R) -> ComposedScene {
    let existing: Vec<Box3D> = scene.labels.iter().filter_map(|l| Box3D::from_box7(l.box7).ok()).collect();
    let picked = select_instances(db, &existing, caps, rng);
    let (mut keep, mut dropped) = (Vec::new(), Vec::new());
    for i in picked {
        let a = &db[i];
        if points_in_box(&a.cloud, &a.bbox) >= p_n {
            keep.push(a);
        } else {
            log::warn!("dropping asset {}: fewer than {p_n} points in its box", a.id);
            dropped.push(a.id.clone());
        }
    }
    let image = composite_rgb(&scene.image, &keep);
    let occ = remove_occluded(&scene.cloud, &keep, &scene.sensor);
    let mut labels = scene.labels.clone();
    labels.extend(keep.iter().map(|a| Label { category: a.category.clone(), box7: a.bbox.to_box7(), instance_id: a.id.clone(), synthetic: true }));
    ComposedScene { image, cloud: occ.cloud, labels, inserted: keep.iter().map(|a| a.id.clone()).collect(), dropped, removed_points: occ.removed.len() }
}
