//! Generative capabilities behind narrow traits: inpainting, segmentation,
//! monocular depth, semantic verification and subclass description.
//!
//! [`stub`] holds deterministic, model-free implementations used by the test
//! and acceptance suites; [`http`] speaks the gateway wire protocol defined in
//! [`wire`].

pub mod http;
pub mod stub;
pub mod wire;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box3D, CameraIntrinsics, PixelMask, PixelRect, RigidTransform};
use crate::prompts::{SemanticVerdict, Turn};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider rejected the request: {0}")]
    Rejected(String),
    #[error("provider timed out")]
    Timeout,
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("segmentation produced an empty mask")]
    EmptySegmentation,
    #[error("invalid provider input: {0}")]
    InvalidInput(String),
}

impl ProviderError {
    /// Only transport-level failures are retried.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Unavailable(_) | ProviderError::Timeout)
    }

    pub fn code(&self) -> &'static str {
        match self {
            ProviderError::Unavailable(_) => "unavailable",
            ProviderError::Rejected(_) => "rejected",
            ProviderError::Timeout => "timeout",
            ProviderError::MalformedResponse(_) => "malformed_response",
            ProviderError::EmptySegmentation => "empty_segmentation",
            ProviderError::InvalidInput(_) => "invalid_input",
        }
    }
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ProviderError> {
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(ProviderError::InvalidInput(format!("{}x{} image needs {} bytes, got {}", width, height, width as usize * height as usize * 3, pixels.len())));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self { width, height, pixels }
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luma in `[0, 1]`.
    pub fn gray(&self, x: u32, y: u32) -> f64 {
        let [r, g, b] = self.get(x, y);
        (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0
    }

    /// Copy of `rect`, which must lie inside the image.
    pub fn crop(&self, rect: &PixelRect) -> ImageBuffer {
        let mut out = ImageBuffer::filled(rect.width(), rect.height(), [0, 0, 0]);
        for y in 0..rect.height() {
            let src = self.offset(rect.left, rect.top + y);
            let dst = out.offset(0, y);
            let n = rect.width() as usize * 3;
            out.pixels[dst..dst + n].copy_from_slice(&self.pixels[src..src + n]);
        }
        out
    }

    /// Writes `patch` with its top-left corner at `(left, top)`, clipped to the image.
    pub fn paste(&mut self, patch: &ImageBuffer, left: u32, top: u32) {
        for y in 0..patch.height {
            for x in 0..patch.width {
                let (tx, ty) = (left + x, top + y);
                if tx < self.width && ty < self.height {
                    self.set(tx, ty, patch.get(x, y));
                }
            }
        }
    }

    /// Rectangle outline of the given stroke width drawn inward from `rect`'s edges.
    pub fn draw_rect_outline(&mut self, rect: &PixelRect, stroke: u32, rgb: [u8; 3]) {
        let r = PixelRect { left: rect.left, top: rect.top, right: rect.right.min(self.width), bottom: rect.bottom.min(self.height) };
        for y in r.top..r.bottom {
            for x in r.left..r.right {
                let edge = x < r.left + stroke || x + stroke >= r.right || y < r.top + stroke || y + stroke >= r.bottom;
                if edge {
                    self.set(x, y, rgb);
                }
            }
        }
    }
}

/// Per-pixel metric depth with validity flags.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f32>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// Validates sizes and clears the valid flag of non-positive or
    /// non-finite depths.
    pub fn new(width: u32, height: u32, depth: Vec<f32>, mut valid: Vec<bool>) -> Result<Self, ProviderError> {
        let n = width as usize * height as usize;
        if depth.len() != n || valid.len() != n {
            return Err(ProviderError::MalformedResponse(format!("depth map {width}x{height} has {} depths and {} flags", depth.len(), valid.len())));
        }
        for (v, d) in valid.iter_mut().zip(&depth) {
            *v = *v && d.is_finite() && *d > 0.0;
        }
        Ok(Self { width, height, depth, valid })
    }

    pub fn at(&self, x: u32, y: u32) -> Option<f64> {
        let i = y as usize * self.width as usize + x as usize;
        self.valid[i].then(|| f64::from(self.depth[i]))
    }
}

/// Scene geometry a stub may use to synthesize consistent depth. HTTP
/// providers ignore it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryHint {
    pub target: Box3D,
    /// Intrinsics of the image handed to the provider.
    pub camera: CameraIntrinsics,
    /// Sensor-to-camera pose.
    pub pose: RigidTransform,
}

/// Per-call context: which candidate is being processed and its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct CallContext {
    pub candidate_id: String,
    pub seed: u64,
    pub geometry: Option<GeometryHint>,
}

impl CallContext {
    pub fn new(candidate_id: impl Into<String>, seed: u64) -> Self {
        Self { candidate_id: candidate_id.into(), seed, geometry: None }
    }
}

pub trait Inpainter: Send + Sync {
    fn inpaint(&self, ctx: &CallContext, patch: &ImageBuffer, condition: &str, mask: &PixelMask) -> Result<ImageBuffer, ProviderError>;
    /// Fixed per-call latency reported instead of wall-clock time, if any.
    fn nominal_seconds(&self) -> Option<f64> {
        None
    }
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, ctx: &CallContext, image: &ImageBuffer, hint: &PixelRect) -> Result<PixelMask, ProviderError>;
    fn nominal_seconds(&self) -> Option<f64> {
        None
    }
}

pub trait DepthEstimator: Send + Sync {
    fn estimate_depth(&self, ctx: &CallContext, image: &ImageBuffer) -> Result<DepthMap, ProviderError>;
    fn nominal_seconds(&self) -> Option<f64> {
        None
    }
}

pub trait SemanticVerifier: Send + Sync {
    fn verify_semantic(&self, ctx: &CallContext, scene_marked: &ImageBuffer, crop: &ImageBuffer, turns: &[Turn]) -> Result<SemanticVerdict, ProviderError>;
    fn nominal_seconds(&self) -> Option<f64> {
        None
    }
}

/// Answers the subclass-specification prompt with free text.
pub trait SubclassDescriber: Send + Sync {
    fn describe(&self, ctx: &CallContext, prompt: &str) -> Result<String, ProviderError>;
    fn nominal_seconds(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    pub models: ModelNames,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelNames {
    pub inpainter: String,
    pub verifier: String,
    pub segmenter: String,
    pub depth: String,
}

/// One implementation per capability.
#[derive(Clone)]
pub struct ProviderSet {
    pub describer: Arc<dyn SubclassDescriber>,
    pub inpainter: Arc<dyn Inpainter>,
    pub segmenter: Arc<dyn Segmenter>,
    pub depth: Arc<dyn DepthEstimator>,
    pub verifier: Arc<dyn SemanticVerifier>,
}

impl ProviderSet {
    pub fn stub(cfg: stub::StubConfig) -> Self {
        let s = Arc::new(stub::StubProviders::new(cfg));
        Self { describer: s.clone(), inpainter: s.clone(), segmenter: s.clone(), depth: s.clone(), verifier: s }
    }
}

/// Runs `f`, returning its result with the elapsed seconds, or `nominal`
/// when the provider declares a fixed latency.
pub fn timed<T>(nominal: Option<f64>, f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    let secs = nominal.unwrap_or_else(|| start.elapsed().as_secs_f64());
    (out, secs)
}
