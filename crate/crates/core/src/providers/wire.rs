//! Gateway wire protocol: JSON bodies with base64 PNG images and masks.
//!
//! Masks travel as single-channel 8-bit PNGs where 255 marks a set pixel
//! (any non-zero value is accepted on decode). Depth travels as row-major
//! little-endian `f32` bytes plus a validity mask PNG that also fixes the
//! map dimensions.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::stub::StubProviders;
use super::{
    CallContext, DepthEstimator, DepthMap, HealthStatus, ImageBuffer, Inpainter, ModelNames, ProviderError, SemanticVerifier,
    Segmenter, SubclassDescriber,
};
use crate::geometry::{PixelMask, PixelRect};
use crate::prompts::{Answer, QaPair, SemanticVerdict, Turn};

pub const INPAINT: &str = "/v1/inpaint";
pub const SEGMENT: &str = "/v1/segment";
pub const DEPTH: &str = "/v1/depth";
pub const VERIFY: &str = "/v1/verify";
pub const DESCRIBE: &str = "/v1/describe";
pub const HEALTH: &str = "/v1/health";

/// Decoding budget forwarded to language-model backends.
pub const DEFAULT_MAX_NEW_TOKENS: u32 = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub image: String,
    pub mask: String,
    pub prompt: String,
    pub seed: u64,
    pub max_side: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintResponse {
    pub image: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRect {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl From<PixelRect> for WireRect {
    fn from(r: PixelRect) -> Self {
        Self { left: r.left, top: r.top, right: r.right, bottom: r.bottom }
    }
}

impl From<WireRect> for PixelRect {
    fn from(r: WireRect) -> Self {
        PixelRect { left: r.left, top: r.top, right: r.right, bottom: r.bottom }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: String,
    pub hint_rect: WireRect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRequest {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthResponse {
    pub depth_f32_le: String,
    pub valid_mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTurn {
    pub question: String,
    pub history: Vec<QaPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub scene_image: String,
    pub crop_image: String,
    pub turns: Vec<WireTurn>,
    pub seed: u64,
    pub max_new_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyResponse {
    pub q1: String,
    pub q2: String,
    pub q3: String,
    pub q4: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribeRequest {
    pub prompt: String,
    pub seed: u64,
    pub max_new_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribeResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

impl ErrorBody {
    pub fn from_error(e: &ProviderError) -> Self {
        Self { error: ErrorDetail { code: e.code().to_string(), message: e.to_string() } }
    }
}

/// HTTP status a gateway should use for a given error.
pub fn status_for(e: &ProviderError) -> u16 {
    match e {
        ProviderError::Unavailable(_) => 503,
        ProviderError::Timeout => 504,
        ProviderError::Rejected(_) | ProviderError::InvalidInput(_) => 400,
        ProviderError::EmptySegmentation | ProviderError::MalformedResponse(_) => 422,
    }
}

fn malformed(what: &str, e: impl std::fmt::Display) -> ProviderError {
    ProviderError::MalformedResponse(format!("{what}: {e}"))
}

fn png_bytes(encode: impl FnOnce(&mut std::io::Cursor<Vec<u8>>) -> image::ImageResult<()>) -> Vec<u8> {
    let mut cur = std::io::Cursor::new(Vec::new());
    encode(&mut cur).expect("PNG encoding to memory cannot fail");
    cur.into_inner()
}

/// RGB image as PNG bytes.
pub fn image_to_png(img: &ImageBuffer) -> Vec<u8> {
    let buf = RgbImage::from_raw(img.width, img.height, img.pixels.clone()).expect("buffer length checked by ImageBuffer");
    png_bytes(|c| buf.write_to(c, ImageFormat::Png))
}

pub fn image_from_png(bytes: &[u8]) -> Result<ImageBuffer, ProviderError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| malformed("png", e))?.to_rgb8();
    let (w, h) = img.dimensions();
    ImageBuffer::new(w, h, img.into_raw())
}

/// Mask as an 8-bit grayscale PNG, 255 inside.
pub fn mask_to_png(mask: &PixelMask) -> Vec<u8> {
    let raw = mask.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
    let buf = GrayImage::from_raw(mask.width, mask.height, raw).expect("mask length matches dimensions");
    png_bytes(|c| buf.write_to(c, ImageFormat::Png))
}

pub fn mask_from_png(bytes: &[u8]) -> Result<PixelMask, ProviderError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| malformed("png", e))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(PixelMask { width: w, height: h, bits: img.into_raw().into_iter().map(|v| v != 0).collect() })
}

fn unbase64(b64: &str) -> Result<Vec<u8>, ProviderError> {
    B64.decode(b64.trim()).map_err(|e| malformed("base64", e))
}

pub fn encode_image(img: &ImageBuffer) -> String {
    B64.encode(image_to_png(img))
}

pub fn decode_image(b64: &str) -> Result<ImageBuffer, ProviderError> {
    image_from_png(&unbase64(b64)?)
}

pub fn encode_mask(mask: &PixelMask) -> String {
    B64.encode(mask_to_png(mask))
}

pub fn decode_mask(b64: &str) -> Result<PixelMask, ProviderError> {
    mask_from_png(&unbase64(b64)?)
}

pub fn encode_depth(d: &DepthMap) -> DepthResponse {
    let bytes: Vec<u8> = d.depth.iter().flat_map(|v| v.to_le_bytes()).collect();
    let valid = PixelMask { width: d.width, height: d.height, bits: d.valid.clone() };
    DepthResponse { depth_f32_le: B64.encode(bytes), valid_mask: encode_mask(&valid) }
}

pub fn decode_depth(r: &DepthResponse) -> Result<DepthMap, ProviderError> {
    let valid = decode_mask(&r.valid_mask)?;
    let bytes = unbase64(&r.depth_f32_le)?;
    if bytes.len() % 4 != 0 {
        return Err(ProviderError::MalformedResponse(format!("depth payload of {} bytes is not a multiple of 4", bytes.len())));
    }
    let depth = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    DepthMap::new(valid.width, valid.height, depth, valid.bits)
}

pub fn turns_to_wire(turns: &[Turn]) -> Vec<WireTurn> {
    turns.iter().map(|t| WireTurn { question: t.question.clone(), history: t.history.clone() }).collect()
}

pub fn verdict_to_wire(v: &SemanticVerdict) -> VerifyResponse {
    let yn = |a: Answer| if a.is_yes() { "yes" } else { "no" }.to_string();
    VerifyResponse {
        q1: yn(v.q1_category_match),
        q2: yn(v.q2_scene_plausible),
        q3: v.q3_artifact_severity.as_str().to_string(),
        q4: v.q4_comment.clone(),
    }
}

pub fn verdict_from_wire(r: &VerifyResponse) -> Result<SemanticVerdict, ProviderError> {
    SemanticVerdict::from_answers(&[r.q1.clone(), r.q2.clone(), r.q3.clone(), r.q4.clone()]).map_err(|e| malformed("verdict", e))
}

/// Candidate key the stub gateway derives from a request seed, since the
/// wire format carries no candidate id.
pub fn wire_candidate_key(seed: u64) -> String {
    format!("seed-{seed:016x}")
}

/// Reference request handler backed by the stub providers. Used by the mock
/// gateway in tests and to generate golden request/response pairs.
#[derive(Debug, Clone)]
pub struct StubGatewayHandler {
    stub: StubProviders,
    pub models: ModelNames,
}

impl StubGatewayHandler {
    pub fn new(stub: StubProviders) -> Self {
        let models = ModelNames { inpainter: "stub-inpaint".into(), verifier: "stub-verify".into(), segmenter: "stub-segment".into(), depth: "stub-depth".into() };
        Self { stub, models }
    }

    /// Returns the HTTP status and JSON body for a request.
    pub fn handle(&self, method: &str, path: &str, body: &Value) -> (u16, Value) {
        let result = match (method, path) {
            ("GET", HEALTH) => Ok(serde_json::to_value(HealthStatus { status: "ok".into(), models: self.models.clone() }).expect("serializable")),
            ("POST", INPAINT) => self.inpaint(body),
            ("POST", SEGMENT) => self.segment(body),
            ("POST", DEPTH) => self.depth(body),
            ("POST", VERIFY) => self.verify(body),
            ("POST", DESCRIBE) => self.describe(body),
            _ => {
                let err = ErrorBody { error: ErrorDetail { code: "not_found".into(), message: format!("no route for {method} {path}") } };
                return (404, serde_json::to_value(err).expect("serializable"));
            }
        };
        match result {
            Ok(v) => (200, v),
            Err(e) => (status_for(&e), serde_json::to_value(ErrorBody::from_error(&e)).expect("serializable")),
        }
    }

    fn parse<T: for<'de> Deserialize<'de>>(body: &Value) -> Result<T, ProviderError> {
        T::deserialize(body).map_err(|e| ProviderError::InvalidInput(format!("request body: {e}")))
    }

    fn input_image(b64: &str) -> Result<ImageBuffer, ProviderError> {
        decode_image(b64).map_err(|e| ProviderError::InvalidInput(e.to_string()))
    }

    fn inpaint(&self, body: &Value) -> Result<Value, ProviderError> {
        let req: InpaintRequest = Self::parse(body)?;
        let patch = Self::input_image(&req.image)?;
        let mask = decode_mask(&req.mask).map_err(|e| ProviderError::InvalidInput(e.to_string()))?;
        let ctx = CallContext::new(wire_candidate_key(req.seed), req.seed);
        let out = self.stub.inpaint(&ctx, &patch, &req.prompt, &mask)?;
        Ok(serde_json::to_value(InpaintResponse { image: encode_image(&out) }).expect("serializable"))
    }

    fn segment(&self, body: &Value) -> Result<Value, ProviderError> {
        let req: SegmentRequest = Self::parse(body)?;
        let img = Self::input_image(&req.image)?;
        let mask = self.stub.segment(&CallContext::new("segment", 0), &img, &req.hint_rect.into())?;
        Ok(serde_json::to_value(SegmentResponse { mask: encode_mask(&mask) }).expect("serializable"))
    }

    fn depth(&self, body: &Value) -> Result<Value, ProviderError> {
        let req: DepthRequest = Self::parse(body)?;
        let img = Self::input_image(&req.image)?;
        let d = self.stub.estimate_depth(&CallContext::new("depth", 0), &img)?;
        Ok(serde_json::to_value(encode_depth(&d)).expect("serializable"))
    }

    fn verify(&self, body: &Value) -> Result<Value, ProviderError> {
        let req: VerifyRequest = Self::parse(body)?;
        let scene = Self::input_image(&req.scene_image)?;
        let crop = Self::input_image(&req.crop_image)?;
        let turns: Vec<Turn> = req.turns.iter().map(|t| Turn { question: t.question.clone(), images: Vec::new(), history: t.history.clone() }).collect();
        let ctx = CallContext::new(wire_candidate_key(req.seed), req.seed);
        let v = self.stub.verify_semantic(&ctx, &scene, &crop, &turns)?;
        Ok(serde_json::to_value(verdict_to_wire(&v)).expect("serializable"))
    }

    fn describe(&self, body: &Value) -> Result<Value, ProviderError> {
        let req: DescribeRequest = Self::parse(body)?;
        let ctx = CallContext::new(wire_candidate_key(req.seed), req.seed);
        let text = self.stub.describe(&ctx, &req.prompt)?;
        Ok(serde_json::to_value(DescribeResponse { text }).expect("serializable"))
    }
}
