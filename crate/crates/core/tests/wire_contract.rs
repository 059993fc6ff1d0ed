//! Gateway wire contract: shared JSON schemas, golden request/response pairs,
//! and the HTTP client exercised against a mock gateway.
//!
//! Set `VERIA_BLESS_GOLDEN=1` to regenerate `schemas/golden/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::http::{Method, StatusCode, Uri};
use axum::response::IntoResponse;
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use veria_core::geometry::{PixelMask, PixelRect};
use veria_core::prompts::{build_subclass_prompt, build_verification_turns, ImageRef};
use veria_core::providers::http::{HttpProviders, ProviderEndpoint};
use veria_core::providers::stub::{DepthScene, OutcomeModel, StubConfig, StubProviders};
use veria_core::providers::wire::{self, StubGatewayHandler};
use veria_core::providers::{CallContext, DepthEstimator, ImageBuffer, Inpainter, ProviderError, Segmenter, SemanticVerifier, SubclassDescriber};

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

struct Schemas(BTreeMap<String, jsonschema::Validator>);

impl Schemas {
    fn load() -> Self {
        let mut map = BTreeMap::new();
        for entry in std::fs::read_dir(schema_dir()).unwrap() {
            let path = entry.unwrap().path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".schema.json")) else { continue };
            let schema: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
            map.insert(name.to_string(), jsonschema::validator_for(&schema).unwrap_or_else(|e| panic!("{name}: {e}")));
        }
        assert_eq!(map.len(), 12, "schema files: {:?}", map.keys().collect::<Vec<_>>());
        Schemas(map)
    }

    fn errors(&self, name: &str, v: &Value) -> Vec<String> {
        self.0[name].iter_errors(v).map(|e| format!("{name}: {e} at {}", e.instance_path)).collect()
    }

    /// Schema names for a route: (request, success response).
    fn route(path: &str) -> Option<(Option<&'static str>, &'static str)> {
        Some(match path {
            wire::HEALTH => (None, "health_response"),
            wire::INPAINT => (Some("inpaint_request"), "inpaint_response"),
            wire::SEGMENT => (Some("segment_request"), "segment_response"),
            wire::DEPTH => (Some("depth_request"), "depth_response"),
            wire::VERIFY => (Some("verify_request"), "verify_response"),
            wire::DESCRIBE => (Some("describe_request"), "describe_response"),
            _ => return None,
        })
    }

    /// All violations for one exchange. Requests are only checked when the
    /// exchange is expected to be well-formed.
    fn check_exchange(&self, path: &str, request: &Value, status: u16, response: &Value, request_valid: bool) -> Vec<String> {
        let mut out = Vec::new();
        let route = Self::route(path);
        if request_valid {
            if let Some((Some(req), _)) = route {
                out.extend(self.errors(req, request));
            }
        }
        if status == 200 {
            match route {
                Some((_, resp)) => out.extend(self.errors(resp, response)),
                None => out.push(format!("200 on unknown route {path}")),
            }
        } else {
            out.extend(self.errors("error", response));
        }
        out
    }
}

fn golden_stub() -> StubProviders {
    StubProviders::new(StubConfig {
        seed: 7,
        outcomes: OutcomeModel::Questions { q1_yes: 0.5, q2_yes: 0.5, q3_none: 0.5, p_geo: 1.0 },
        depth: DepthScene::Ramp { a: 5.0, b: 0.01 },
        ..StubConfig::default()
    })
}

fn test_image(w: u32, h: u32) -> ImageBuffer {
    let mut img = ImageBuffer::filled(w, h, [90, 90, 95]);
    for y in 0..h {
        for x in 0..w {
            if (x / 4 + y / 4) % 2 == 0 {
                img.set(x, y, [(x * 13 % 256) as u8, (y * 7 % 256) as u8, 40]);
            }
        }
    }
    img
}

fn center_mask(w: u32, h: u32) -> PixelMask {
    let mut m = PixelMask::empty(w, h);
    for y in h / 4..3 * h / 4 {
        for x in w / 4..3 * w / 4 {
            m.set(x, y, true);
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Golden {
    name: String,
    method: String,
    path: String,
    /// Whether `request` is a conforming request body.
    valid_request: bool,
    request: Value,
    status: u16,
    response: Value,
}

fn golden_requests() -> Vec<(&'static str, &'static str, &'static str, bool, Value)> {
    let img = wire::encode_image(&test_image(16, 16));
    let turns = build_verification_turns(&ImageRef("scene".into()), &ImageRef("crop".into()), &[]);
    let verify = |seed: u64| {
        json!({"scene_image": img, "crop_image": wire::encode_image(&test_image(8, 8)), "turns": wire::turns_to_wire(&turns), "seed": seed, "max_new_tokens": 512})
    };
    vec![
        ("health", "GET", wire::HEALTH, true, Value::Null),
        ("inpaint", "POST", wire::INPAINT, true, json!({"image": img, "mask": wire::encode_mask(&center_mask(16, 16)), "prompt": "a cargo bicycle", "seed": 42, "max_side": 1024})),
        ("segment", "POST", wire::SEGMENT, true, json!({"image": img, "hint_rect": {"left": 2, "top": 3, "right": 14, "bottom": 13}})),
        ("depth", "POST", wire::DEPTH, true, json!({"image": wire::encode_image(&test_image(8, 8))})),
        ("verify_a", "POST", wire::VERIFY, true, verify(42)),
        ("verify_b", "POST", wire::VERIFY, true, verify(43)),
        ("describe", "POST", wire::DESCRIBE, true, json!({"prompt": build_subclass_prompt("bicycle", &["bicycle".to_string()]).unwrap(), "seed": 42, "max_new_tokens": 512})),
        ("error_not_found", "GET", "/v1/unknown", true, Value::Null),
        ("error_invalid_input", "POST", wire::SEGMENT, false, json!({"image": 3})),
        ("error_empty_segmentation", "POST", wire::SEGMENT, true, json!({"image": img, "hint_rect": {"left": 0, "top": 0, "right": 3, "bottom": 3}})),
    ]
}

fn generate_goldens() -> Vec<Golden> {
    let handler = StubGatewayHandler::new(golden_stub());
    golden_requests()
        .into_iter()
        .map(|(name, method, path, valid_request, request)| {
            let (status, response) = handler.handle(method, path, &request);
            Golden { name: name.into(), method: method.into(), path: path.into(), valid_request, request, status, response }
        })
        .collect()
}

fn golden_dir() -> PathBuf {
    schema_dir().join("golden")
}

fn load_goldens() -> Vec<Golden> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(golden_dir()).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|e| e == "json")).collect();
    files.sort();
    files.iter().map(|p| serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).collect()
}

#[test]
fn golden_pairs_conform_and_replay() {
    if std::env::var_os("VERIA_BLESS_GOLDEN").is_some() {
        for g in generate_goldens() {
            std::fs::write(golden_dir().join(format!("{}.json", g.name)), serde_json::to_string_pretty(&g).unwrap() + "\n").unwrap();
        }
    }
    let schemas = Schemas::load();
    let goldens = load_goldens();
    assert_eq!(goldens.len(), golden_requests().len());
    let fresh: BTreeMap<String, Golden> = generate_goldens().into_iter().map(|g| (g.name.clone(), g)).collect();
    for g in &goldens {
        let errs = schemas.check_exchange(&g.path, &g.request, g.status, &g.response, g.valid_request);
        assert!(errs.is_empty(), "{}: {errs:?}", g.name);
        assert_eq!(Some(g), fresh.get(&g.name), "{} no longer replays identically", g.name);
    }
    let statuses: BTreeMap<&str, u16> = goldens.iter().map(|g| (g.name.as_str(), g.status)).collect();
    assert_eq!(statuses["error_not_found"], 404);
    assert_eq!(statuses["error_invalid_input"], 400);
    assert_eq!(statuses["error_empty_segmentation"], 422);
    let verdicts: Vec<&Value> = goldens.iter().filter(|g| g.path == wire::VERIFY).map(|g| &g.response).collect();
    assert!(verdicts.iter().all(|v| ["q1", "q2", "q3", "q4"].iter().all(|k| v[k].is_string())));
}

#[test]
fn golden_payload_sizes() {
    let goldens: BTreeMap<String, Golden> = load_goldens().into_iter().map(|g| (g.name.clone(), g)).collect();
    let depth = wire::decode_depth(&serde_json::from_value(goldens["depth"].response.clone()).unwrap()).unwrap();
    assert_eq!((depth.width, depth.height, depth.depth.len()), (8, 8, 64));
    let mask = wire::decode_mask(goldens["segment"].response["mask"].as_str().unwrap()).unwrap();
    assert_eq!(mask.count(), 8 * 6);
    let out = wire::decode_image(goldens["inpaint"].response["image"].as_str().unwrap()).unwrap();
    let input = wire::decode_image(goldens["inpaint"].request["image"].as_str().unwrap()).unwrap();
    let m = center_mask(16, 16);
    for y in 0..16 {
        for x in 0..16 {
            if !m.get(x, y) {
                assert_eq!(out.get(x, y), input.get(x, y));
            }
        }
    }
}

#[test]
fn schemas_reject_malformed_bodies() {
    let s = Schemas::load();
    assert!(!s.errors("verify_response", &json!({"q1": "yes", "q2": "yes", "q3": "none"})).is_empty());
    assert!(!s.errors("depth_request", &json!({"image": "not base64!"})).is_empty());
    assert!(!s.errors("segment_request", &json!({"image": "AAAA", "hint_rect": {"left": -1, "top": 0, "right": 1, "bottom": 1}})).is_empty());
    assert!(!s.errors("error", &json!({"error": {"code": "x"}})).is_empty());
    assert!(!s.errors("health_response", &json!({"status": "ok", "models": {}})).is_empty());
    assert!(s.errors("health_response", &json!({"status": "loading", "models": {"inpainter": "", "verifier": "", "segmenter": "", "depth": ""}})).is_empty());
}

#[derive(Clone)]
struct Mock {
    handler: Arc<StubGatewayHandler>,
    schemas: Arc<Schemas>,
    violations: Arc<Mutex<Vec<String>>>,
    hits: Arc<AtomicUsize>,
    /// Reply 503 to everything.
    down: bool,
}

async fn serve(state: Mock, method: Method, uri: Uri, body: Bytes) -> impl IntoResponse {
    state.hits.fetch_add(1, Ordering::SeqCst);
    let request: Value = if body.is_empty() { Value::Null } else { serde_json::from_slice(&body).unwrap_or(Value::Null) };
    let (status, response) = if state.down {
        (503, json!({"error": {"code": "unavailable", "message": "model not loaded"}}))
    } else {
        state.handler.handle(method.as_str(), uri.path(), &request)
    };
    let errs = state.schemas.check_exchange(uri.path(), &request, status, &response, true);
    state.violations.lock().unwrap().extend(errs);
    (StatusCode::from_u16(status).unwrap(), axum::Json(response))
}

fn spawn_gateway(down: bool) -> (String, Mock) {
    let mock = Mock {
        handler: Arc::new(StubGatewayHandler::new(golden_stub())),
        schemas: Arc::new(Schemas::load()),
        violations: Arc::default(),
        hits: Arc::default(),
        down,
    };
    let state = mock.clone();
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(1).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new().fallback(move |m: Method, u: Uri, b: Bytes| serve(state.clone(), m, u, b));
            axum::serve(listener, app).await.unwrap();
        });
    });
    (format!("http://{}", rx.recv().unwrap()), mock)
}

#[test]
fn http_client_matches_stub_through_mock_gateway() {
    let (url, mock) = spawn_gateway(false);
    let client = HttpProviders::new(ProviderEndpoint::new(url)).unwrap();
    let stub = golden_stub();
    assert_eq!(client.health().unwrap().status, "ok");

    let img = test_image(32, 24);
    let mask = center_mask(32, 24);
    let ctx = CallContext::new(wire::wire_candidate_key(42), 42);
    assert_eq!(client.inpaint(&ctx, &img, "a cargo bicycle", &mask).unwrap(), stub.inpaint(&ctx, &img, "a cargo bicycle", &mask).unwrap());

    let hint = PixelRect { left: 4, top: 4, right: 20, bottom: 18 };
    assert_eq!(client.segment(&ctx, &img, &hint).unwrap(), stub.segment(&ctx, &img, &hint).unwrap());
    let tiny = PixelRect { left: 0, top: 0, right: 3, bottom: 3 };
    assert_eq!(client.segment(&ctx, &img, &tiny), Err(ProviderError::EmptySegmentation));

    let d = client.estimate_depth(&ctx, &img).unwrap();
    assert_eq!(d, stub.estimate_depth(&ctx, &img).unwrap());
    assert_eq!(d.at(0, 4), Some(f64::from(5.04f32)));

    let turns = build_verification_turns(&ImageRef("s".into()), &ImageRef("c".into()), &[]);
    for seed in 0..20 {
        let ctx = CallContext::new(wire::wire_candidate_key(seed), seed);
        assert_eq!(client.verify_semantic(&ctx, &img, &img, &turns).unwrap(), stub.verify_semantic(&ctx, &img, &img, &turns).unwrap());
    }

    let prompt = build_subclass_prompt("motorcycle", &["motorcycle".to_string()]).unwrap();
    assert_eq!(client.describe(&ctx, &prompt).unwrap(), stub.describe(&ctx, &prompt).unwrap());

    let v = mock.violations.lock().unwrap();
    assert!(v.is_empty(), "{v:?}");
}

#[test]
fn unavailable_gateway_is_retried_then_reported() {
    let (url, mock) = spawn_gateway(true);
    let endpoint = ProviderEndpoint { max_retries: 2, ..ProviderEndpoint::new(url) };
    let client = HttpProviders::new(endpoint).unwrap();
    let err = client.estimate_depth(&CallContext::new("c", 1), &test_image(4, 4)).unwrap_err();
    assert!(matches!(err, ProviderError::Unavailable(_)), "{err:?}");
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
    assert!(mock.violations.lock().unwrap().is_empty());
}

#[test]
fn rejected_requests_are_not_retried() {
    let (url, mock) = spawn_gateway(false);
    let endpoint = ProviderEndpoint { max_retries: 4, ..ProviderEndpoint::new(url) };
    let client = HttpProviders::new(endpoint).unwrap();
    let err = client.describe(&CallContext::new("c", 1), "").unwrap_err();
    assert!(matches!(err, ProviderError::Rejected(_)), "{err:?}");
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn unreachable_gateway_reports_unavailable() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let endpoint = ProviderEndpoint { max_retries: 0, timeout: 2.0, ..ProviderEndpoint::new(format!("http://127.0.0.1:{port}")) };
    let client = HttpProviders::new(endpoint).unwrap();
    assert!(matches!(client.health(), Err(ProviderError::Unavailable(_))));
}
