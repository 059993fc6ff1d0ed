//! Blocking HTTP client for the gateway wire protocol.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{self, DescribeRequest, DescribeResponse, DepthRequest, DepthResponse, ErrorBody, InpaintRequest, InpaintResponse, SegmentRequest, SegmentResponse, VerifyRequest, VerifyResponse};
use super::{
    CallContext, DepthEstimator, DepthMap, HealthStatus, ImageBuffer, Inpainter, ProviderError, SemanticVerifier, Segmenter, SubclassDescriber,
};
use crate::geometry::{PixelMask, PixelRect};
use crate::prompts::{SemanticVerdict, Turn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderEndpoint {
    pub base_url: String,
    /// Per-request timeout in seconds.
    pub timeout: f64,
    #[serde(default)]
    pub max_retries: u32,
    #[serde(default)]
    pub auth_token: Option<String>,
}

impl ProviderEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self { base_url: base_url.into(), timeout: 60.0, max_retries: 2, auth_token: None }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(format!("timeout must be positive, got {}", self.timeout));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(format!("base_url must be an http(s) URL, got {:?}", self.base_url));
        }
        Ok(())
    }
}

/// Maps a non-success HTTP status and body to a provider error.
pub fn classify_failure(status: u16, body: &str) -> ProviderError {
    let parsed: Option<ErrorBody> = serde_json::from_str(body).ok();
    let message = parsed.as_ref().map(|b| b.error.message.clone()).unwrap_or_else(|| body.chars().take(200).collect());
    let code = parsed.as_ref().map(|b| b.error.code.as_str()).unwrap_or("");
    match (status, code) {
        (_, "empty_segmentation") => ProviderError::EmptySegmentation,
        (_, "malformed_response") => ProviderError::MalformedResponse(message),
        (408 | 504, _) | (_, "timeout") => ProviderError::Timeout,
        (500..=599, _) => ProviderError::Unavailable(format!("HTTP {status}: {message}")),
        _ => ProviderError::Rejected(format!("HTTP {status}: {message}")),
    }
}

/// Runs `attempt` until it succeeds, fails with a non-retryable error, or
/// `max_retries` retries are spent. Returns the result and the attempt count.
pub fn with_retries<T>(max_retries: u32, mut attempt: impl FnMut() -> Result<T, ProviderError>) -> (Result<T, ProviderError>, u32) {
    let mut calls = 0;
    loop {
        calls += 1;
        match attempt() {
            Err(e) if e.is_retryable() && calls <= max_retries => {
                log::debug!("retrying after {e} (attempt {calls})");
                continue;
            }
            other => return (other, calls),
        }
    }
}

/// All five capabilities served by one gateway.
#[derive(Debug, Clone)]
pub struct HttpProviders {
    endpoint: ProviderEndpoint,
    client: reqwest::blocking::Client,
    pub max_new_tokens: u32,
    pub max_side: u32,
}

impl HttpProviders {
    pub fn new(endpoint: ProviderEndpoint) -> Result<Self, ProviderError> {
        endpoint.validate().map_err(ProviderError::InvalidInput)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.timeout))
            .build()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        Ok(Self { endpoint, client, max_new_tokens: wire::DEFAULT_MAX_NEW_TOKENS, max_side: 1024 })
    }

    pub fn endpoint(&self) -> &ProviderEndpoint {
        &self.endpoint
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), path)
    }

    fn send(&self, req: reqwest::blocking::RequestBuilder) -> Result<String, ProviderError> {
        let req = match &self.endpoint.auth_token {
            Some(t) => req.bearer_auth(t),
            None => req,
        };
        let resp = req.send().map_err(|e| if e.is_timeout() { ProviderError::Timeout } else { ProviderError::Unavailable(e.to_string()) })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        if (200..300).contains(&status) {
            Ok(text)
        } else {
            Err(classify_failure(status, &text))
        }
    }

    fn decode<R: DeserializeOwned>(text: &str) -> Result<R, ProviderError> {
        serde_json::from_str(text).map_err(|e| ProviderError::MalformedResponse(e.to_string()))
    }

    fn post<Q: Serialize, R: DeserializeOwned>(&self, path: &str, body: &Q) -> Result<R, ProviderError> {
        let url = self.url(path);
        let (res, _) = with_retries(self.endpoint.max_retries, || {
            let text = self.send(self.client.post(&url).json(body))?;
            Self::decode(&text)
        });
        res
    }

    pub fn health(&self) -> Result<HealthStatus, ProviderError> {
        let url = self.url(wire::HEALTH);
        let (res, _) = with_retries(self.endpoint.max_retries, || Self::decode(&self.send(self.client.get(&url))?));
        res
    }
}

impl Inpainter for HttpProviders {
    fn inpaint(&self, ctx: &CallContext, patch: &ImageBuffer, condition: &str, mask: &PixelMask) -> Result<ImageBuffer, ProviderError> {
        let req = InpaintRequest { image: wire::encode_image(patch), mask: wire::encode_mask(mask), prompt: condition.to_string(), seed: ctx.seed, max_side: self.max_side };
        let resp: InpaintResponse = self.post(wire::INPAINT, &req)?;
        let out = wire::decode_image(&resp.image)?;
        if (out.width, out.height) != (patch.width, patch.height) {
            return Err(ProviderError::MalformedResponse(format!("inpainted image is {}x{}, expected {}x{}", out.width, out.height, patch.width, patch.height)));
        }
        Ok(out)
    }
}

impl Segmenter for HttpProviders {
    fn segment(&self, _ctx: &CallContext, image: &ImageBuffer, hint: &PixelRect) -> Result<PixelMask, ProviderError> {
        let req = SegmentRequest { image: wire::encode_image(image), hint_rect: (*hint).into() };
        let resp: SegmentResponse = self.post(wire::SEGMENT, &req)?;
        let mask = wire::decode_mask(&resp.mask)?;
        if (mask.width, mask.height) != (image.width, image.height) {
            return Err(ProviderError::MalformedResponse("mask dimensions differ from the image".into()));
        }
        if mask.is_empty() {
            return Err(ProviderError::EmptySegmentation);
        }
        Ok(mask)
    }
}

impl DepthEstimator for HttpProviders {
    fn estimate_depth(&self, _ctx: &CallContext, image: &ImageBuffer) -> Result<DepthMap, ProviderError> {
        let resp: DepthResponse = self.post(wire::DEPTH, &DepthRequest { image: wire::encode_image(image) })?;
        let d = wire::decode_depth(&resp)?;
        if (d.width, d.height) != (image.width, image.height) {
            return Err(ProviderError::MalformedResponse("depth dimensions differ from the image".into()));
        }
        Ok(d)
    }
}

impl SemanticVerifier for HttpProviders {
    fn verify_semantic(&self, ctx: &CallContext, scene_marked: &ImageBuffer, crop: &ImageBuffer, turns: &[Turn]) -> Result<SemanticVerdict, ProviderError> {
        let req = VerifyRequest {
            scene_image: wire::encode_image(scene_marked),
            crop_image: wire::encode_image(crop),
            turns: wire::turns_to_wire(turns),
            seed: ctx.seed,
            max_new_tokens: self.max_new_tokens,
        };
        let resp: VerifyResponse = self.post(wire::VERIFY, &req)?;
        wire::verdict_from_wire(&resp)
    }
}

impl SubclassDescriber for HttpProviders {
    fn describe(&self, ctx: &CallContext, prompt: &str) -> Result<String, ProviderError> {
        let req = DescribeRequest { prompt: prompt.to_string(), seed: ctx.seed, max_new_tokens: self.max_new_tokens };
        let resp: DescribeResponse = self.post(wire::DESCRIBE, &req)?;
        Ok(resp.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_classification() {
        assert_eq!(classify_failure(503, "down"), ProviderError::Unavailable("HTTP 503: down".into()));
        assert_eq!(classify_failure(504, ""), ProviderError::Timeout);
        assert_eq!(classify_failure(408, ""), ProviderError::Timeout);
        assert!(matches!(classify_failure(400, r#"{"error":{"code":"rejected","message":"nsfw"}}"#), ProviderError::Rejected(m) if m.contains("nsfw")));
        assert_eq!(classify_failure(422, r#"{"error":{"code":"empty_segmentation","message":"x"}}"#), ProviderError::EmptySegmentation);
    }

    #[test]
    fn retries_bounded_and_selective() {
        let (r, n) = with_retries::<()>(3, || Err(ProviderError::Timeout));
        assert_eq!((r, n), (Err(ProviderError::Timeout), 4));
        let (_, n) = with_retries::<()>(3, || Err(ProviderError::Rejected("no".into())));
        assert_eq!(n, 1);
        let (_, n) = with_retries::<()>(0, || Err(ProviderError::Unavailable("x".into())));
        assert_eq!(n, 1);
        let mut k = 0;
        let (r, n) = with_retries(5, || {
            k += 1;
            if k < 3 { Err(ProviderError::Unavailable("x".into())) } else { Ok(k) }
        });
        assert_eq!((r, n), (Ok(3), 3));
    }

    #[test]
    fn endpoint_validation() {
        assert!(ProviderEndpoint::new("http://localhost:8000").validate().is_ok());
        assert!(ProviderEndpoint { timeout: 0.0, ..ProviderEndpoint::new("http://x") }.validate().is_err());
        assert!(ProviderEndpoint::new("localhost").validate().is_err());
    }
}
