//! Candidate generation and scene composition drivers.
//!
//! Each candidate runs subclass description, box placement, inpainting,
//! semantic verification, then reconstruction and geometric verification.
//! Every candidate that reaches the inpainter is logged whatever its
//! outcome; only dual-pass candidates become assets. All randomness is drawn
//! from per-candidate streams, so results do not depend on worker count or
//! scheduling, and the log is rewritten in candidate-id order at the end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{CandidateError, CandidateRecord, CandidateStatus, SemanticOutcome};
use crate::compose::{compose_scene, recover_box, InstanceAsset, SceneSample};
use crate::dataset_io::{
    canonicalize_log, list_assets, list_manifests, load_asset, load_manifest, load_scene, logged_ids, resolve_sensor,
    store_asset, write_atomic, write_composed_scene, write_manifest, Calibration, CandidateLog, CategoryConfig, DatasetError, ExistingBox,
    ProviderConfig, RunConfig, RunLayout, SceneManifest,
};
use crate::geometry::{project_points, Box3D, CameraIntrinsics, PixelRect, RigidTransform};
use crate::geoverify::{evaluate_fit, fit_obb_xy, GeoFailReason, GeoVerdict};
use crate::placement::{inpaint_crop, sample_box, visible_mask, Interval, PlacementRegion};
use crate::pointcloud::{
    anchor_scale, backproject_region, contour_band_filter, encode_cloud, from_range_image, quantize, simulate_intensity, to_range_image, PointCloud,
    SensorSpec,
};
use crate::prompts::{build_subclass_prompt, build_verification_turns, decide, parse_subclass_response, ImageRef, PromptError, SubclassSpec};
use crate::providers::http::HttpProviders;
use crate::providers::stub::{OutcomeModel, StubConfig};
use crate::providers::wire::image_to_png;
use crate::providers::{timed, CallContext, GeometryHint, ImageBuffer, ProviderError, ProviderSet};
use crate::rng::{id_index, stream};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// A loaded scene and the ground height boxes rest on.
#[derive(Debug, Clone)]
pub struct PipelineScene {
    pub sample: SceneSample,
    pub ground_height: f64,
}

pub fn load_scenes(dir: &Path, cfg: &RunConfig) -> Result<Vec<PipelineScene>, DatasetError> {
    list_manifests(dir)?
        .iter()
        .map(|p| {
            let m = load_manifest(p, &cfg.sensors)?;
            Ok(PipelineScene { sample: load_scene(p, &m, &cfg.sensors)?, ground_height: m.ground_height })
        })
        .collect()
}

pub fn build_providers(cfg: &RunConfig) -> Result<ProviderSet, PipelineError> {
    match &cfg.providers {
        ProviderConfig::Stub(s) => Ok(ProviderSet::stub(s.clone())),
        ProviderConfig::Http(endpoint) => {
            let http = HttpProviders::new(endpoint.clone()).map_err(|e| PipelineError::Config(e.to_string()))?;
            let health = http.health().map_err(|e| PipelineError::ProviderUnreachable(e.to_string()))?;
            if health.status != "ok" {
                return Err(PipelineError::ProviderUnreachable(format!("gateway status is {:?}", health.status)));
            }
            let h = Arc::new(http);
            Ok(ProviderSet { describer: h.clone(), inpainter: h.clone(), segmenter: h.clone(), depth: h.clone(), verifier: h })
        }
    }
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

pub fn candidate_id(scene_id: &str, category: &str, k: usize) -> String {
    format!("{scene_id}/{}/{k:05}", slug(category))
}

/// Provider seed forwarded with every call for a candidate.
pub fn candidate_seed(run_seed: u64, id: &str) -> u64 {
    run_seed ^ id_index(id)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSlot {
    pub id: String,
    pub scene: usize,
    pub category: String,
}

/// All candidate slots of a run in canonical order.
pub fn plan(cfg: &RunConfig, scenes: &[PipelineScene]) -> Vec<CandidateSlot> {
    let mut out = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        for (cat, c) in &cfg.categories {
            out.extend((0..c.candidates_per_scene).map(|k| CandidateSlot { id: candidate_id(&s.sample.scene_id, cat, k), scene: i, category: cat.clone() }));
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// Caps the number of provider calls in flight across workers.
struct InFlight {
    max: usize,
    busy: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(max: usize) -> Self {
        Self { max: max.max(1), busy: Mutex::new(0), freed: Condvar::new() }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        let mut n = self.busy.lock().expect("in-flight mutex poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("in-flight mutex poisoned");
        }
        *n += 1;
        drop(n);
        let out = f();
        *self.busy.lock().expect("in-flight mutex poisoned") -= 1;
        self.freed.notify_one();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CandidateOutcome {
    /// No sampled pose passed the visibility gate; nothing was synthesized.
    Unplaced,
    Finished { record: Box<CandidateRecord>, asset: Option<Box<InstanceAsset>> },
}

enum Stop {
    Provider(&'static str, ProviderError),
    Prompt(&'static str, PromptError),
}

impl Stop {
    fn into_error(self) -> CandidateError {
        match self {
            Stop::Provider(stage, e) => CandidateError { stage: stage.into(), code: e.code().into(), message: e.to_string() },
            Stop::Prompt(stage, e) => {
                let code = match e {
                    PromptError::ImplausibleDimensions(_) => "implausible_dimensions",
                    PromptError::UnknownCategory(_) => "unknown_category",
                    _ => "malformed_response",
                };
                CandidateError { stage: stage.into(), code: code.into(), message: e.to_string() }
            }
        }
    }
}

fn degenerate(point_count: usize) -> GeoVerdict {
    GeoVerdict { passed: false, fitted_sizes: None, size_ratios: None, point_count, fail_reason: GeoFailReason::TooFewPoints }
}

/// Text the inpainter is conditioned on.
pub fn condition_text(spec: &SubclassSpec) -> String {
    format!("{}. {}", spec.subclass_name, spec.description)
}

pub struct Pipeline {
    cfg: RunConfig,
    providers: ProviderSet,
    gate: InFlight,
}

struct Reconstruction {
    verdict: GeoVerdict,
    lidar: Option<PointCloud>,
    dense: Option<PointCloud>,
    object_mask: Option<crate::geometry::PixelMask>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig, providers: ProviderSet) -> Self {
        let gate = InFlight::new(cfg.max_in_flight);
        Self { cfg, providers, gate }
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn call<T>(&self, stage: &'static str, nominal: Option<f64>, rec: &mut CandidateRecord, f: impl FnOnce() -> Result<T, ProviderError>) -> Result<T, Stop> {
        let (out, secs) = self.gate.run(|| timed(nominal, f));
        *rec.timings.entry(stage.to_string()).or_insert(0.0) += secs;
        out.map_err(|e| Stop::Provider(stage, e))
    }

    fn subclass(&self, ctx: &CallContext, category: &str, rec: &mut CandidateRecord) -> Result<SubclassSpec, Stop> {
        let known: Vec<String> = self.cfg.categories.keys().cloned().collect();
        let prompt = build_subclass_prompt(category, &known).map_err(|e| Stop::Prompt("describe", e))?;
        let d = &self.providers.describer;
        let mut last = None;
        // one retry on an unparseable answer
        for attempt in 0..2u64 {
            let actx = CallContext { seed: ctx.seed.wrapping_add(attempt), ..ctx.clone() };
            let text = self.call("describe", d.nominal_seconds(), rec, || d.describe(&actx, &prompt))?;
            match parse_subclass_response(category, &text) {
                Ok(spec) => return Ok(spec),
                Err(e) => last = Some(e),
            }
        }
        let err = last.expect("loop ran");
        match self.cfg.categories.get(category).and_then(|c| c.prior) {
            Some(prior) => Ok(SubclassSpec {
                category: category.to_string(),
                subclass_name: category.to_string(),
                description: format!("A typical {category}."),
                size_prior: prior,
                rider_included: crate::prompts::requires_rider_clause(category).then_some(false),
                reference_product: String::new(),
            }),
            None => Err(Stop::Prompt("describe", err)),
        }
    }

    /// Runs one candidate end to end.
    pub fn run_candidate(&self, scene: &PipelineScene, slot: &CandidateSlot) -> CandidateOutcome {
        let s = &scene.sample;
        let seed = candidate_seed(self.cfg.run_seed, &slot.id);
        let mut rec = CandidateRecord {
            candidate_id: slot.id.clone(),
            scene_id: s.scene_id.clone(),
            category: slot.category.clone(),
            subclass: None,
            condition_text: None,
            seed,
            sampled_box7: None,
            semantic: None,
            geometric: None,
            point_count: None,
            timings: BTreeMap::new(),
            status: CandidateStatus::ProviderError,
            error: None,
            asset_id: None,
        };
        let mut asset = None;
        match self.stages(scene, slot, &mut rec, &mut asset) {
            Ok(true) => {}
            Ok(false) => return CandidateOutcome::Unplaced,
            Err(stop) => rec.error = Some(stop.into_error()),
        }
        rec.point_count = rec.geometric.as_ref().map(|g| g.point_count);
        rec.status = rec.derive_status();
        if rec.status != CandidateStatus::Pass {
            asset = None;
        }
        CandidateOutcome::Finished { record: Box::new(rec), asset: asset.map(Box::new) }
    }

    /// Returns `Ok(false)` when the candidate could not be placed.
    fn stages(&self, scene: &PipelineScene, slot: &CandidateSlot, rec: &mut CandidateRecord, asset: &mut Option<InstanceAsset>) -> Result<bool, Stop> {
        let s = &scene.sample;
        let cfg = &self.cfg;
        let ctx0 = CallContext::new(slot.id.clone(), rec.seed);
        let spec = self.subclass(&ctx0, &slot.category, rec)?;
        rec.subclass = Some(spec.subclass_name.clone());
        let condition = condition_text(&spec);
        rec.condition_text = Some(condition.clone());

        let region = PlacementRegion { z_ground: scene.ground_height, ..cfg.placement };
        let mut rng = stream(rec.seed, 0, "placement");
        let mut placed = None;
        for _ in 0..cfg.placement_attempts {
            let b = sample_box(&spec.size_prior, &region, &mut rng);
            if let Some(m) = visible_mask(&b, &s.camera, &s.pose, &cfg.visibility) {
                placed = Some((b, m));
                break;
            }
        }
        let Some((target, mask)) = placed else {
            return Ok(false);
        };
        rec.sampled_box7 = Some(target.to_box7());

        let rect: PixelRect = inpaint_crop(&mask, cfg.crop_margin);
        let patch = s.image.crop(&rect);
        let patch_mask = mask.crop(&rect);
        let cam_crop = s.camera.cropped(&rect);
        let ctx = CallContext { geometry: Some(GeometryHint { target, camera: cam_crop, pose: s.pose }), ..ctx0 };
        let p = &self.providers;
        let inpainted = self.call("inpaint", p.inpainter.nominal_seconds(), rec, || p.inpainter.inpaint(&ctx, &patch, &condition, &patch_mask))?;

        let mut marked = s.image.clone();
        marked.paste(&inpainted, rect.left, rect.top);
        marked.draw_rect_outline(&mask.bounding_rect().expect("gate ensures a non-empty mask"), cfg.marker.width_px, cfg.marker.rgb);
        let turns = build_verification_turns(&ImageRef("scene_marked".into()), &ImageRef("crop".into()), &[]);
        let mut verdict = self.call("verify", p.verifier.nominal_seconds(), rec, || p.verifier.verify_semantic(&ctx, &marked, &inpainted, &turns));
        if let Err(Stop::Provider(_, ProviderError::MalformedResponse(_))) = verdict {
            verdict = self.call("verify", p.verifier.nominal_seconds(), rec, || p.verifier.verify_semantic(&ctx, &marked, &inpainted, &turns));
        }
        let verdict = verdict?;
        let decision = decide(&verdict);
        let sem_pass = decision.passed;
        rec.semantic = Some(SemanticOutcome { verdict, decision });
        if !sem_pass && !cfg.full_marginals {
            return Ok(true);
        }

        let recon = self.reconstruct(&ctx, scene, &target, &inpainted, &patch_mask, &cam_crop, rec)?;
        rec.geometric = Some(recon.verdict.clone());
        if sem_pass && recon.verdict.passed {
            if let (Some(lidar), Some(dense), Some(obj_mask)) = (recon.lidar, recon.dense, recon.object_mask) {
                match recover_box(&lidar, Some(&dense)) {
                    Ok(bbox) => {
                        // the content id is assigned when the asset is stored
                        *asset = Some(InstanceAsset {
                            id: String::new(),
                            category: slot.category.clone(),
                            subclass: spec.subclass_name.clone(),
                            cutout: inpainted,
                            cutout_mask: obj_mask,
                            offset: (rect.left, rect.top),
                            cloud: lidar,
                            bbox,
                            source_scene: s.scene_id.clone(),
                            center_range: bbox.center_range(),
                        });
                    }
                    Err(e) => log::warn!("{}: no label box recoverable: {e}", slot.id),
                }
            }
        }
        Ok(true)
    }

    #[allow(clippy::too_many_arguments)]
    fn reconstruct(
        &self,
        ctx: &CallContext,
        scene: &PipelineScene,
        target: &Box3D,
        inpainted: &ImageBuffer,
        patch_mask: &crate::geometry::PixelMask,
        cam_crop: &CameraIntrinsics,
        rec: &mut CandidateRecord,
    ) -> Result<Reconstruction, Stop> {
        let s = &scene.sample;
        let cfg = &self.cfg;
        let p = &self.providers;
        let fail = |n: usize| Ok(Reconstruction { verdict: degenerate(n), lidar: None, dense: None, object_mask: None });
        let hint = patch_mask.bounding_rect().expect("non-empty mask");
        let obj_mask = match self.call("segment", p.segmenter.nominal_seconds(), rec, || p.segmenter.segment(ctx, inpainted, &hint)) {
            Ok(m) => m,
            Err(Stop::Provider(_, ProviderError::EmptySegmentation)) => return fail(0),
            Err(e) => return Err(e),
        };
        let depth = self.call("depth", p.depth.nominal_seconds(), rec, || p.depth.estimate_depth(ctx, inpainted))?;
        if (depth.width, depth.height) != (obj_mask.width, obj_mask.height) {
            return Err(Stop::Provider("depth", ProviderError::MalformedResponse("depth and mask dimensions differ".into())));
        }
        let Ok(cloud) = backproject_region(&depth, &obj_mask, cam_crop) else {
            return fail(0);
        };
        let Ok(filtered) = contour_band_filter(&cloud, &obj_mask, cfg.band_px, cfg.tau_edge) else {
            return fail(0);
        };
        let cam_to_sensor = s.pose.inverse();
        let Ok(anchored) = anchor_scale(&filtered, target.size.z, &cam_to_sensor) else {
            return fail(0);
        };
        let mut dense = anchored.transform(&cam_to_sensor);
        dense.source_pixels = None;
        let sensor = &s.sensor;
        let lidar = from_range_image(&to_range_image(&dense, sensor), sensor);
        let projections = project_points(&lidar.points, cam_crop, &s.pose);
        let gray: Vec<f64> = projections
            .iter()
            .map(|pr| {
                let x = (pr.u.max(0.0) as u32).min(inpainted.width - 1);
                let y = (pr.v.max(0.0) as u32).min(inpainted.height - 1);
                inpainted.gray(x, y)
            })
            .collect();
        let lidar = simulate_intensity(&lidar, &gray, &Point3::origin(), cfg.intensity_for(sensor)).map_err(|e| Stop::Provider("reconstruct", ProviderError::InvalidInput(e.to_string())))?;
        let lidar = quantize(&lidar);
        let target_sizes = [target.size.x, target.size.y, target.size.z];
        let verdict = match fit_obb_xy(&dense) {
            Ok(b) => evaluate_fit([b.size.x, b.size.y, b.size.z], lidar.len(), target_sizes, &cfg.geo()),
            Err(_) => degenerate(lidar.len()),
        };
        Ok(Reconstruction { verdict, lidar: Some(lidar), dense: Some(dense), object_mask: Some(obj_mask) })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub planned: usize,
    pub skipped_existing: usize,
    pub logged: usize,
    pub unplaced: usize,
    pub passed: usize,
    pub assets_stored: usize,
    pub provider_errors: usize,
    /// Records in the canonical log after the run.
    pub log_records: usize,
}

/// Runs every planned candidate not already in the log, appending records
/// as they finish and canonicalizing the log at the end.
pub fn generate(cfg: &RunConfig, providers: ProviderSet, scenes: &[PipelineScene], layout: &RunLayout, workers: usize) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    layout.create()?;
    write_atomic(&layout.config(), serde_json::to_string_pretty(cfg).expect("config serializes").as_bytes())?;
    let done = logged_ids(&layout.log())?;
    let slots = plan(cfg, scenes);
    let planned = slots.len();
    let todo: Vec<CandidateSlot> = slots.into_iter().filter(|s| !done.contains(&s.id)).collect();
    let skipped_existing = planned - todo.len();
    let log = CandidateLog::open(&layout.log())?;
    let pipeline = Pipeline::new(cfg.clone(), providers);
    let counters: [AtomicUsize; 5] = Default::default();
    let [logged, unplaced, passed, stored, perr] = &counters;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| PipelineError::Config(e.to_string()))?;
    let assets_dir = layout.assets();
    pool.install(|| {
        todo.par_iter().try_for_each(|slot| -> Result<(), DatasetError> {
            match pipeline.run_candidate(&scenes[slot.scene], slot) {
                CandidateOutcome::Unplaced => {
                    unplaced.fetch_add(1, Ordering::Relaxed);
                }
                CandidateOutcome::Finished { mut record, asset } => {
                    if let (Some(a), true) = (&asset, cfg.store_assets) {
                        record.asset_id = Some(store_asset(a, &assets_dir)?);
                        stored.fetch_add(1, Ordering::Relaxed);
                    }
                    match record.status {
                        CandidateStatus::Pass => passed.fetch_add(1, Ordering::Relaxed),
                        CandidateStatus::ProviderError => perr.fetch_add(1, Ordering::Relaxed),
                        _ => 0,
                    };
                    log.append(&record)?;
                    logged.fetch_add(1, Ordering::Relaxed);
                }
            }
            Ok(())
        })
    })?;
    drop(log);
    let log_records = canonicalize_log(&layout.log())?;
    Ok(RunSummary {
        planned,
        skipped_existing,
        logged: logged.load(Ordering::Relaxed),
        unplaced: unplaced.load(Ordering::Relaxed),
        passed: passed.load(Ordering::Relaxed),
        assets_stored: stored.load(Ordering::Relaxed),
        provider_errors: perr.load(Ordering::Relaxed),
        log_records,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposeSummary {
    pub scenes: usize,
    pub assets_available: usize,
    pub inserted: usize,
    pub dropped: usize,
    pub removed_points: usize,
}

/// Inserts stored assets into every scene and writes `scenes_out/<scene_id>/`.
pub fn compose_run(cfg: &RunConfig, scenes: &[PipelineScene], layout: &RunLayout) -> Result<ComposeSummary, PipelineError> {
    let ids = list_assets(&layout.assets())?;
    let db: Vec<InstanceAsset> = ids.iter().map(|id| load_asset(&layout.assets(), id)).collect::<Result<_, _>>()?;
    let caps = cfg.caps();
    let mut summary = ComposeSummary { scenes: scenes.len(), assets_available: db.len(), ..Default::default() };
    for (i, scene) in scenes.iter().enumerate() {
        let s = &scene.sample;
        let fits: Vec<InstanceAsset> = db
            .iter()
            .filter(|a| cfg.cross_scene_assets || a.source_scene == s.scene_id)
            .filter(|a| a.offset.0 + a.cutout.width <= s.image.width && a.offset.1 + a.cutout.height <= s.image.height)
            .cloned()
            .collect();
        let mut rng = stream(cfg.run_seed, i as u64, "compose");
        let out = compose_scene(s, &fits, &caps, cfg.p_n, &mut rng);
        summary.inserted += out.inserted.len();
        summary.dropped += out.dropped.len();
        summary.removed_points += out.removed_points;
        write_composed_scene(&layout.scenes_out().join(slug(&s.scene_id)), &out.image, &out.cloud, &out.labels)?;
    }
    Ok(summary)
}

fn ray_box(origin: &Point3<f64>, dir: &Vector3<f64>, b: &Box3D) -> Option<f64> {
    let (c, s) = b.heading();
    let local = |v: Vector3<f64>| Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z);
    let o = local(origin - b.center);
    let d = local(*dir);
    let half = b.size * 0.5;
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let (a, bb) = ((-half[k] - o[k]) / d[k], (half[k] - o[k]) / d[k]);
        t0 = t0.max(a.min(bb));
        t1 = t1.min(a.max(bb));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// Geometry of the built-in synthetic scenes.
pub const DEMO_GROUND: f64 = -1.8;
pub const DEMO_WIDTH: u32 = 960;
pub const DEMO_HEIGHT: u32 = 540;

/// Demo camera at `scale` times the full `DEMO_WIDTH`×`DEMO_HEIGHT` resolution.
pub fn demo_calibration(scale: f64) -> Calibration {
    let (w, h) = ((f64::from(DEMO_WIDTH) * scale).round().max(2.0) as u32, (f64::from(DEMO_HEIGHT) * scale).round().max(2.0) as u32);
    let f = 700.0 * f64::from(w) / f64::from(DEMO_WIDTH);
    Calibration {
        intrinsics: CameraIntrinsics::new(f, f, f64::from(w) / 2.0, f64::from(h) / 2.0, w, h).expect("valid intrinsics"),
        sensor_to_camera: RigidTransform::forward_camera(Vector3::new(0.3, 0.0, 0.3)),
    }
}

/// A synthetic road scene: sky and road image, one sensor sweep of the
/// ground plane and a few parked cars, and the cars as annotated boxes.
pub fn demo_scene(scene_id: &str, sensor: &SensorSpec, seed: u64, scale: f64) -> PipelineScene {
    let mut rng = stream(seed, id_index(scene_id), "demo-scene");
    let cal = demo_calibration(scale);
    let (w, h) = (cal.intrinsics.width, cal.intrinsics.height);
    let mut image = ImageBuffer::filled(w, h, [0, 0, 0]);
    let horizon = h / 2;
    let tint: u8 = rng.random_range(0..40);
    for y in 0..h {
        for x in 0..w {
            let px = if y < horizon {
                let t = (y * 120 / horizon) as u8;
                [90 + t / 2, 140 + t / 2, 200u8.saturating_add(tint)]
            } else {
                let lane = (x as i64 - i64::from(w / 2)).abs() < 3 + (y as i64 - horizon as i64) / 20 && (y * 540 / h / 12) % 2 == 0;
                if lane {
                    [220, 220, 210]
                } else {
                    let g = 80 + ((x * 31 + y * 17) % 23) as u8 + tint / 4;
                    [g, g, g + 4]
                }
            };
            image.set(x, y, px);
        }
    }
    let mut boxes = Vec::new();
    for side in [-1.0, 1.0] {
        if rng.random_bool(0.8) {
            let b = Box3D::new(
                Point3::new(rng.random_range(10.0..40.0), side * rng.random_range(5.5..8.0), DEMO_GROUND + 0.8),
                Vector3::new(4.5, 1.9, 1.6),
                rng.random_range(-0.2..0.2),
            )
            .expect("positive sizes");
            boxes.push(b);
        }
    }
    let origin = Point3::origin();
    let mut points = Vec::new();
    let mut intensity = Vec::new();
    for row in 0..sensor.rows() {
        let el = sensor.elevations[row];
        for col in 0..sensor.cols() {
            let az = sensor.column_center(col);
            let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let mut best = if dir.z < 0.0 { Some((DEMO_GROUND / dir.z, 0.15)) } else { None };
            for b in &boxes {
                if let Some(t) = ray_box(&origin, &dir, b) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, 0.6));
                    }
                }
            }
            if let Some((t, it)) = best {
                if t >= sensor.range[0] && t <= sensor.range[1] {
                    points.push(Point3::from(dir * t));
                    intensity.push(it);
                }
            }
        }
    }
    let cloud = quantize(&PointCloud { points, intensity: Some(intensity), source_pixels: None });
    let labels = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| crate::compose::Label { category: "car".into(), box7: b.to_box7(), instance_id: format!("{scene_id}/gt{i}"), synthetic: false })
        .collect();
    PipelineScene {
        sample: SceneSample { scene_id: scene_id.into(), image, cloud, camera: cal.intrinsics, pose: cal.sensor_to_camera, labels, sensor: sensor.clone() },
        ground_height: DEMO_GROUND,
    }
}

/// Writes `n` synthetic scenes as manifests plus assets under `dir`.
pub fn write_demo_scenes(dir: &Path, n: usize, sensor: &SensorSpec, seed: u64, scale: f64) -> Result<Vec<PathBuf>, DatasetError> {
    std::fs::create_dir_all(dir).map_err(|source| DatasetError::Io { path: dir.to_path_buf(), source })?;
    (0..n)
        .map(|i| {
            let id = format!("demo-{i:03}");
            let scene = demo_scene(&id, sensor, seed, scale);
            let s = &scene.sample;
            write_atomic(&dir.join(format!("{id}.png")), &image_to_png(&s.image))?;
            write_atomic(&dir.join(format!("{id}.bin")), &encode_cloud(&s.cloud))?;
            let m = SceneManifest {
                scene_id: id.clone(),
                image: format!("{id}.png").into(),
                cloud: format!("{id}.bin").into(),
                cloud_has_intensity: true,
                calibration: Calibration { intrinsics: s.camera, sensor_to_camera: s.pose },
                sensor_spec_id: sensor.id.clone(),
                ground_height: scene.ground_height,
                boxes: s.labels.iter().map(|l| ExistingBox { category: l.category.clone(), box7: l.box7 }).collect(),
            };
            let path = dir.join(format!("{id}.json"));
            write_manifest(&path, &m)?;
            Ok(path)
        })
        .collect()
}

/// Run config matched to the synthetic scenes: stub providers following
/// `outcomes`, candidates drawn in front of the camera.
pub fn demo_config(categories: &[&str], candidates_per_scene: usize, outcomes: OutcomeModel) -> RunConfig {
    let base = RunConfig::default();
    let categories = categories
        .iter()
        .map(|c| {
            let cap = base.categories.get(*c).map_or(crate::compose::LYFT_CAP, |k| k.max_per_class);
            (c.to_string(), CategoryConfig { prior: None, max_per_class: cap, candidates_per_scene })
        })
        .collect();
    RunConfig {
        categories,
        placement: PlacementRegion { x: Interval::new(8.0, 24.0), y: Interval::new(-3.0, 3.0), z_ground: DEMO_GROUND, yaw: Interval::new(-std::f64::consts::PI, std::f64::consts::PI), free_z: None },
        providers: ProviderConfig::Stub(StubConfig { outcomes, ..StubConfig::default() }),
        ..base
    }
}

/// Sensor spec a scene set uses, checked for consistency.
pub fn scenes_sensor(scenes: &[PipelineScene], cfg: &RunConfig) -> Result<SensorSpec, PipelineError> {
    let first = scenes.first().ok_or_else(|| PipelineError::Config("no scenes".into()))?;
    resolve_sensor(&first.sample.sensor.id, &cfg.sensors).map_err(PipelineError::from)
}
