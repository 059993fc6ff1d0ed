//! Deterministic model-free providers.
//!
//! Every output is a pure function of the inputs, the stub seed and the
//! candidate id, so runs are reproducible regardless of call order or
//! thread count. Outcomes are drawn from a configurable joint distribution
//! over (semantic pass, clean reconstruction), which lets fixtures reproduce
//! any target set of stage-wise acceptance rates.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{
    CallContext, DepthEstimator, DepthMap, GeometryHint, ImageBuffer, Inpainter, ProviderError, SemanticVerifier,
    Segmenter, SubclassDescriber,
};
use crate::benchmarks::{latency, YieldRow};
use crate::geometry::{project_box_hull, PixelMask, PixelRect};
use crate::placement::{Interval, SizePrior};
use crate::prompts::{requires_rider_clause, Answer, SemanticVerdict, Severity, SubclassSpec, Turn};
use crate::rng::{fnv1a64, mix64, unit_hash};

/// Joint distribution of stub outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeModel {
    /// Semantic pass probability, clean-reconstruction probability and the
    /// probability of both; `fail_mix` weights the first failing question
    /// (category, scale, artifact) among semantic failures.
    Joint { p_sem: f64, p_geo: f64, p_joint: f64, fail_mix: [f64; 3] },
    /// Independent per-question rates plus an independent clean-reconstruction rate.
    Questions { q1_yes: f64, q2_yes: f64, q3_none: f64, p_geo: f64 },
}

impl OutcomeModel {
    pub fn always_pass() -> Self {
        OutcomeModel::Questions { q1_yes: 1.0, q2_yes: 1.0, q3_none: 1.0, p_geo: 1.0 }
    }

    /// Joint model matching a reported yield row.
    pub fn from_row(row: &YieldRow) -> Self {
        OutcomeModel::Joint { p_sem: row.p_sem / 100.0, p_geo: row.p_geo / 100.0, p_joint: row.p_joint / 100.0, fail_mix: [1.0, 1.0, 1.0] }
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, p: f64| if (0.0..=1.0).contains(&p) { Ok(()) } else { Err(format!("{name}={p} outside [0,1]")) };
        match *self {
            OutcomeModel::Joint { p_sem, p_geo, p_joint, fail_mix } => {
                unit("p_sem", p_sem)?;
                unit("p_geo", p_geo)?;
                unit("p_joint", p_joint)?;
                if p_joint > p_sem.min(p_geo) + 1e-12 || p_joint < p_sem + p_geo - 1.0 - 1e-12 {
                    return Err(format!("p_joint={p_joint} violates the Fréchet bounds for p_sem={p_sem}, p_geo={p_geo}"));
                }
                if fail_mix.iter().any(|w| !(*w >= 0.0)) || fail_mix.iter().sum::<f64>() <= 0.0 {
                    return Err("fail_mix weights must be non-negative with a positive sum".into());
                }
                Ok(())
            }
            OutcomeModel::Questions { q1_yes, q2_yes, q3_none, p_geo } => {
                unit("q1_yes", q1_yes)?;
                unit("q2_yes", q2_yes)?;
                unit("q3_none", q3_none)?;
                unit("p_geo", p_geo)
            }
        }
    }
}

/// Analytic depth scene returned by the stub depth estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DepthScene {
    /// Fronto-parallel plane at `d0` meters.
    Plane { d0: f64 },
    /// `d(v) = a + b·v` for pixel row `v`.
    Ramp { a: f64, b: f64 },
    /// Ray-cast the candidate's target box (from the call's geometry hint);
    /// rays that miss are invalid. Falls back to `Plane { d0: fallback }`
    /// without a hint.
    RenderBox { fallback: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StubLatencies {
    pub describe: f64,
    pub inpaint: f64,
    pub verify: f64,
    pub segment: f64,
    pub depth: f64,
}

impl Default for StubLatencies {
    fn default() -> Self {
        Self {
            describe: latency::VERIFIER_QWEN3VL,
            inpaint: latency::INPAINTER,
            verify: latency::VERIFIER_QWEN3VL,
            segment: latency::SEGMENTER,
            depth: latency::DEPTH_MOGE2,
        }
    }
}

const KEEP_SALT: u64 = 0x6b65_6570;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubConfig {
    #[serde(default)]
    pub seed: u64,
    pub outcomes: OutcomeModel,
    pub depth: DepthScene,
    #[serde(default)]
    pub latencies: StubLatencies,
    /// Per-category priors used for categories missing from the built-in
    /// subclass library.
    #[serde(default)]
    pub fallback_priors: BTreeMap<String, SizePrior>,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            outcomes: OutcomeModel::always_pass(),
            depth: DepthScene::RenderBox { fallback: 10.0 },
            latencies: StubLatencies::default(),
            fallback_priors: BTreeMap::new(),
        }
    }
}

/// What the stubs decided for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubOutcome {
    pub semantic_pass: bool,
    pub clean_reconstruction: bool,
}

#[derive(Debug, Clone)]
pub struct StubProviders {
    cfg: StubConfig,
}

struct LibraryEntry {
    name: &'static str,
    product: &'static str,
    description: &'static str,
    dims: [(f64, f64); 3],
    rider: bool,
}

const fn entry(name: &'static str, product: &'static str, description: &'static str, dims: [(f64, f64); 3], rider: bool) -> LibraryEntry {
    LibraryEntry { name, product, description, dims, rider }
}

fn library(category: &str) -> &'static [LibraryEntry] {
    const BICYCLE: &[LibraryEntry] = &[
        entry("Road bicycle", "Trek Domane AL 2", "Lightweight aluminium frame, drop handlebars and narrow 700c tyres.", [(1.68, 1.76), (0.42, 0.46), (0.95, 1.05)], false),
        entry("Mountain bicycle", "Specialized Rockhopper", "Front suspension fork, flat wide handlebar and knobby 29-inch tyres.", [(1.75, 1.85), (0.70, 0.78), (1.00, 1.12)], false),
        entry("City bicycle with rider", "Gazelle Esprit", "Upright commuter bike with fenders and rear rack, carrying a seated adult rider.", [(1.80, 1.90), (0.58, 0.66), (1.65, 1.85)], true),
        entry("Cargo bicycle", "Urban Arrow Family", "Long-wheelbase bike with a front cargo box ahead of the handlebar.", [(2.50, 2.60), (0.65, 0.70), (1.05, 1.15)], false),
    ];
    const MOTORCYCLE: &[LibraryEntry] = &[
        entry("Sport motorcycle", "Yamaha YZF-R6", "Full fairing, clip-on bars and a tall tail section.", [(2.03, 2.05), (0.69, 0.71), (1.14, 1.16)], false),
        entry("Scooter", "Honda PCX 125", "Step-through body with floorboard and small wheels.", [(1.92, 1.94), (0.74, 0.76), (1.10, 1.12)], false),
        entry("Cruiser with rider", "Harley-Davidson Softail Standard", "Low seat, raked front fork and chrome exhaust, ridden by a seated adult.", [(2.30, 2.40), (0.90, 1.00), (1.60, 1.75)], true),
        entry("Touring motorcycle", "BMW R 1250 RT", "Large fairing with tall windscreen and hard side cases.", [(2.21, 2.23), (0.98, 0.99), (1.41, 1.56)], false),
    ];
    const CONSTRUCTION: &[LibraryEntry] = &[
        entry("Compact track loader", "CAT 259D3", "Tracked skid-steer with front bucket and enclosed cab.", [(3.60, 3.70), (1.90, 2.00), (2.05, 2.12)], false),
        entry("Backhoe loader", "JCB 3CX", "Wheeled tractor with front loader bucket and rear digging arm.", [(5.60, 5.70), (2.30, 2.40), (3.50, 3.60)], false),
        entry("Road roller", "BOMAG BW 120 AD-5", "Tandem vibratory drum roller with ROPS canopy.", [(2.40, 2.50), (1.20, 1.30), (2.55, 2.70)], false),
        entry("Mini excavator", "Kubota KX040-4", "Tracked excavator with short boom and rotating upper structure.", [(4.90, 5.00), (1.90, 2.00), (2.45, 2.55)], false),
    ];
    match category {
        "bicycle" => BICYCLE,
        "motorcycle" => MOTORCYCLE,
        "construction vehicle" | "construction_vehicle" => CONSTRUCTION,
        _ => &[],
    }
}

fn weighted_pick(u: f64, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

impl StubProviders {
    pub fn new(cfg: StubConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &StubConfig {
        &self.cfg
    }

    fn u(&self, ctx: &CallContext, label: &str) -> f64 {
        unit_hash(self.cfg.seed, &ctx.candidate_id, label)
    }

    /// Joint outcome for a candidate, a pure function of its id.
    pub fn outcome(&self, candidate_id: &str) -> StubOutcome {
        let u = |label: &str| unit_hash(self.cfg.seed, candidate_id, label);
        match self.cfg.outcomes {
            OutcomeModel::Joint { p_sem, p_geo, p_joint, .. } => {
                let x = u("outcome");
                let (semantic_pass, clean_reconstruction) = if x < p_joint {
                    (true, true)
                } else if x < p_sem {
                    (true, false)
                } else if x < p_sem + p_geo - p_joint {
                    (false, true)
                } else {
                    (false, false)
                };
                StubOutcome { semantic_pass, clean_reconstruction }
            }
            OutcomeModel::Questions { q1_yes, q2_yes, q3_none, p_geo } => StubOutcome {
                semantic_pass: u("q1") < q1_yes && u("q2") < q2_yes && u("q3") < q3_none,
                clean_reconstruction: u("geo") < p_geo,
            },
        }
    }

    fn verdict(&self, ctx: &CallContext) -> SemanticVerdict {
        let yn = |b: bool| if b { Answer::Yes } else { Answer::No };
        let bad_severity = |u: f64| [Severity::Minor, Severity::Medium, Severity::Severe][((u * 3.0) as usize).min(2)];
        let (q1, q2, q3) = match self.cfg.outcomes {
            OutcomeModel::Questions { q1_yes, q2_yes, q3_none, .. } => {
                let q3 = if self.u(ctx, "q3") < q3_none { Severity::None } else { bad_severity(self.u(ctx, "q3-sev")) };
                (yn(self.u(ctx, "q1") < q1_yes), yn(self.u(ctx, "q2") < q2_yes), q3)
            }
            OutcomeModel::Joint { fail_mix, .. } => {
                if self.outcome(&ctx.candidate_id).semantic_pass {
                    (Answer::Yes, Answer::Yes, Severity::None)
                } else {
                    let later_q2 = yn(self.u(ctx, "later-q2") < 0.5);
                    let later_q3 = if self.u(ctx, "later-q3") < 0.5 { Severity::None } else { bad_severity(self.u(ctx, "q3-sev")) };
                    match weighted_pick(self.u(ctx, "fail-kind"), &fail_mix) {
                        0 => (Answer::No, later_q2, later_q3),
                        1 => (Answer::Yes, Answer::No, later_q3),
                        _ => (Answer::Yes, Answer::Yes, bad_severity(self.u(ctx, "q3-sev"))),
                    }
                }
            }
        };
        let q4_comment = match (q1, q2, q3) {
            (Answer::Yes, Answer::Yes, Severity::None) => "Object matches the subclass and sits plausibly in the scene.".to_string(),
            (Answer::No, _, _) => "Generated object does not match the requested subclass.".to_string(),
            (_, Answer::No, _) => "Object scale or placement is inconsistent with the scene.".to_string(),
            (_, _, s) => format!("Visible {s} artifacts in the object region."),
        };
        SemanticVerdict { q1_category_match: q1, q2_scene_plausible: q2, q3_artifact_severity: q3, q4_comment }
    }

    /// Canonical subclass response for a candidate.
    pub fn subclass_response(&self, ctx: &CallContext, category: &str) -> Result<String, ProviderError> {
        let lib = library(category);
        let spec = if lib.is_empty() {
            let prior = self
                .cfg
                .fallback_priors
                .get(category)
                .copied()
                .ok_or_else(|| ProviderError::Rejected(format!("no subclass knowledge for {category:?}")))?;
            SubclassSpec {
                category: category.to_string(),
                subclass_name: format!("Standard {category}"),
                description: format!("A typical {category} seen on public roads."),
                size_prior: prior,
                rider_included: requires_rider_clause(category).then_some(false),
                reference_product: String::new(),
            }
        } else {
            let e = &lib[((self.u(ctx, "subclass") * lib.len() as f64) as usize).min(lib.len() - 1)];
            let iv = |(a, b): (f64, f64)| Interval::new(a, b);
            SubclassSpec {
                category: category.to_string(),
                subclass_name: e.name.to_string(),
                description: e.description.to_string(),
                size_prior: SizePrior { length: iv(e.dims[0]), width: iv(e.dims[1]), height: iv(e.dims[2]) },
                rider_included: requires_rider_clause(category).then_some(e.rider),
                reference_product: e.product.to_string(),
            }
        };
        Ok(spec.to_response_text())
    }

    fn render_box(&self, ctx: &CallContext, hint: &GeometryHint, width: u32, height: u32) -> DepthMap {
        let n = width as usize * height as usize;
        let mut depth = vec![0f32; n];
        let mut valid = vec![false; n];
        let cam = hint.camera;
        let bx = hint.target;
        let inv = hint.pose.inverse();
        let origin = inv.apply(&Point3::origin());
        let (c, s) = bx.heading();
        let to_local = |v: Vector3<f64>| Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z);
        let o_local = to_local(origin - bx.center);
        let half = bx.size * 0.5;
        let diag = bx.size.norm();

        // only pixels under the projected hull can hit the box
        let Ok(hull) = project_box_hull(&bx, &cam, &hint.pose) else {
            return DepthMap { width, height, depth, valid };
        };
        let lo_x = hull.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
        let hi_x = (hull.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max).ceil().max(0.0) as u32).min(width);
        let lo_y = hull.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
        let hi_y = (hull.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max).ceil().max(0.0) as u32).min(height);

        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let d_cam = Vector3::new((f64::from(x) + 0.5 - cam.cx) / cam.fx, (f64::from(y) + 0.5 - cam.cy) / cam.fy, 1.0);
                let d = to_local(inv.apply_vector(&d_cam));
                let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        if o_local[k].abs() > half[k] {
                            tmin = f64::INFINITY;
                        }
                        continue;
                    }
                    let t1 = (-half[k] - o_local[k]) / d[k];
                    let t2 = (half[k] - o_local[k]) / d[k];
                    tmin = tmin.max(t1.min(t2));
                    tmax = tmax.min(t1.max(t2));
                }
                if tmin <= tmax && tmin > 0.0 {
                    let i = y as usize * width as usize + x as usize;
                    // x-ray depth: each pixel reports a point spread along its ray
                    // segment through the box, kept with probability proportional
                    // to the segment length so the cloud fills the volume evenly
                    let key = (u64::from(x) << 32) | u64::from(y);
                    let keep = (mix64(key ^ KEEP_SALT) >> 11) as f64 / (1u64 << 53) as f64;
                    if keep * diag > tmax - tmin {
                        continue;
                    }
                    let u = (mix64(key) >> 11) as f64 / (1u64 << 53) as f64;
                    depth[i] = (tmin + u * (tmax - tmin)) as f32;
                    valid[i] = true;
                }
            }
        }

        if !self.outcome(&ctx.candidate_id).clean_reconstruction {
            // flat billboard: every pixel collapses onto the nearest hit depth
            let near = (0..n).filter(|i| valid[*i]).map(|i| depth[i]).fold(f32::INFINITY, f32::min);
            for i in 0..n {
                if valid[i] {
                    depth[i] = near;
                }
            }
        }
        DepthMap { width, height, depth, valid }
    }
}

impl SubclassDescriber for StubProviders {
    fn describe(&self, ctx: &CallContext, prompt: &str) -> Result<String, ProviderError> {
        let category = prompt
            .strip_prefix("Provide one subclass of ")
            .and_then(|rest| rest.split_once(". "))
            .map(|(c, _)| c.trim())
            .ok_or_else(|| ProviderError::Rejected("unrecognized prompt".into()))?;
        self.subclass_response(ctx, category)
    }

    fn nominal_seconds(&self) -> Option<f64> {
        Some(self.cfg.latencies.describe)
    }
}

impl Inpainter for StubProviders {
    fn inpaint(&self, ctx: &CallContext, patch: &ImageBuffer, condition: &str, mask: &PixelMask) -> Result<ImageBuffer, ProviderError> {
        if mask.width != patch.width || mask.height != patch.height {
            return Err(ProviderError::InvalidInput(format!(
                "mask {}x{} does not match patch {}x{}",
                mask.width, mask.height, patch.width, patch.height
            )));
        }
        let key = fnv1a64(condition.as_bytes()) ^ crate::rng::mix64(ctx.seed);
        let base = [(key & 0xff) as u8, ((key >> 8) & 0xff) as u8, ((key >> 16) & 0xff) as u8];
        let period = 3 + ((key >> 24) % 6) as u32;
        let mut out = patch.clone();
        for (x, y) in mask.iter_set() {
            let stripe = ((x / period + y / period) % 2) as u8;
            let shade = ((x * 7 + y * 13) % 32) as u8;
            let px = [
                base[0].wrapping_add(stripe * 48).wrapping_add(shade),
                base[1].wrapping_add(stripe * 48).wrapping_add(shade / 2),
                base[2].wrapping_add(shade),
            ];
            out.set(x, y, px);
        }
        Ok(out)
    }

    fn nominal_seconds(&self) -> Option<f64> {
        Some(self.cfg.latencies.inpaint)
    }
}

/// Pixels removed from each side of the hint rectangle.
pub const SEGMENT_EROSION_PX: u32 = 2;

impl Segmenter for StubProviders {
    fn segment(&self, _ctx: &CallContext, image: &ImageBuffer, hint: &PixelRect) -> Result<PixelMask, ProviderError> {
        if hint.left >= image.width || hint.top >= image.height || hint.is_empty() {
            return Err(ProviderError::InvalidInput(format!("hint {hint:?} lies outside the {}x{} image", image.width, image.height)));
        }
        let e = SEGMENT_EROSION_PX;
        let r = PixelRect {
            left: hint.left + e,
            top: hint.top + e,
            right: hint.right.min(image.width).saturating_sub(e),
            bottom: hint.bottom.min(image.height).saturating_sub(e),
        };
        if r.is_empty() || r.right <= r.left || r.bottom <= r.top {
            return Err(ProviderError::EmptySegmentation);
        }
        Ok(PixelMask::from_rect(image.width, image.height, &r))
    }

    fn nominal_seconds(&self) -> Option<f64> {
        Some(self.cfg.latencies.segment)
    }
}

impl DepthEstimator for StubProviders {
    fn estimate_depth(&self, ctx: &CallContext, image: &ImageBuffer) -> Result<DepthMap, ProviderError> {
        let (w, h) = (image.width, image.height);
        if w == 0 || h == 0 {
            return Err(ProviderError::InvalidInput("zero-size image".into()));
        }
        let n = w as usize * h as usize;
        let plane = |d0: f64| DepthMap { width: w, height: h, depth: vec![d0 as f32; n], valid: vec![d0 > 0.0; n] };
        Ok(match self.cfg.depth {
            DepthScene::Plane { d0 } => plane(d0),
            DepthScene::Ramp { a, b } => {
                let depth: Vec<f32> = (0..n).map(|i| (a + b * (i / w as usize) as f64) as f32).collect();
                let valid = depth.iter().map(|d| *d > 0.0).collect();
                DepthMap { width: w, height: h, depth, valid }
            }
            DepthScene::RenderBox { fallback } => match &ctx.geometry {
                Some(hint) => self.render_box(ctx, hint, w, h),
                None => plane(fallback),
            },
        })
    }

    fn nominal_seconds(&self) -> Option<f64> {
        Some(self.cfg.latencies.depth)
    }
}

impl SemanticVerifier for StubProviders {
    fn verify_semantic(&self, ctx: &CallContext, _scene_marked: &ImageBuffer, _crop: &ImageBuffer, turns: &[Turn]) -> Result<SemanticVerdict, ProviderError> {
        if turns.len() != 4 {
            return Err(ProviderError::InvalidInput(format!("expected 4 turns, got {}", turns.len())));
        }
        Ok(self.verdict(ctx))
    }

    fn nominal_seconds(&self) -> Option<f64> {
        Some(self.cfg.latencies.verify)
    }
}
