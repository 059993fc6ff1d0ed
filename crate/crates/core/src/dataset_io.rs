//! Scene manifests, run configuration, the content-addressed instance store
//! and the append-only candidate log.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::{CandidateRecord, LOG_SCHEMA};
use crate::compose::{default_caps, InstanceAsset, Label, SceneSample};
use crate::geometry::{Box3D, CameraIntrinsics, PixelMask, RigidTransform};
use crate::geoverify::GeoVerifyConfig;
use crate::placement::{Interval, PlacementRegion, SizePrior, VisibilityConfig};
use crate::pointcloud::{decode_cloud, encode_cloud, IntensityMode, PointCloud, SensorSpec};
use crate::providers::http::ProviderEndpoint;
use crate::providers::stub::StubConfig;
use crate::providers::wire::{image_from_png, image_to_png, mask_from_png, mask_to_png};
use crate::providers::ImageBuffer;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("parse error in {path}: {message}")]
    ParseError { path: PathBuf, message: String },
    #[error("missing asset {0}")]
    MissingAsset(PathBuf),
    #[error("unknown sensor spec {0:?}")]
    UnknownSensor(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::ParseError { path: path.to_path_buf(), message: e.to_string() }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub intrinsics: CameraIntrinsics,
    /// Sensor-to-camera extrinsics.
    pub sensor_to_camera: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistingBox {
    pub category: String,
    pub box7: [f64; 7],
}

/// Self-describing scene: one camera image, one sensor sweep, calibration
/// and the scene's annotated boxes. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: String,
    pub image: PathBuf,
    pub cloud: PathBuf,
    #[serde(default = "yes")]
    pub cloud_has_intensity: bool,
    pub calibration: Calibration,
    pub sensor_spec_id: String,
    pub ground_height: f64,
    #[serde(default)]
    pub boxes: Vec<ExistingBox>,
}

fn yes() -> bool {
    true
}

/// Resolves sensor ids against the built-in presets plus `extra`.
pub fn resolve_sensor(id: &str, extra: &[SensorSpec]) -> Result<SensorSpec, DatasetError> {
    extra.iter().find(|s| s.id == id).cloned().or_else(|| SensorSpec::preset(id)).ok_or_else(|| DatasetError::UnknownSensor(id.to_string()))
}

pub fn load_manifest(path: &Path, sensors: &[SensorSpec]) -> Result<SceneManifest, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| if e.kind() == std::io::ErrorKind::NotFound { DatasetError::MissingAsset(path.to_path_buf()) } else { DatasetError::Io { path: path.to_path_buf(), source: e } })?;
    let m: SceneManifest = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
    m.calibration.intrinsics.validate().map_err(|e| parse_err(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for rel in [&m.image, &m.cloud] {
        let p = base.join(rel);
        if !p.is_file() {
            return Err(DatasetError::MissingAsset(p));
        }
    }
    resolve_sensor(&m.sensor_spec_id, sensors)?;
    for b in &m.boxes {
        Box3D::from_box7(b.box7).map_err(|e| parse_err(path, format!("box of {}: {e}", b.category)))?;
    }
    Ok(m)
}

pub fn write_manifest(path: &Path, m: &SceneManifest) -> Result<(), DatasetError> {
    write_atomic(path, serde_json::to_string_pretty(m).expect("manifest serializes").as_bytes())
}

/// Manifest files (`*.json`) in a directory, sorted by name.
pub fn list_manifests(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.is_file())
        .collect();
    out.sort();
    Ok(out)
}

pub fn read_png(path: &Path) -> Result<ImageBuffer, DatasetError> {
    let bytes = fs::read(path).map_err(|_| DatasetError::MissingAsset(path.to_path_buf()))?;
    image_from_png(&bytes).map_err(|e| parse_err(path, e))
}

pub fn read_cloud(path: &Path, has_intensity: bool) -> Result<PointCloud, DatasetError> {
    let bytes = fs::read(path).map_err(|_| DatasetError::MissingAsset(path.to_path_buf()))?;
    decode_cloud(&bytes, has_intensity).map_err(|e| parse_err(path, e))
}

/// Loads the image and cloud a manifest refers to.
pub fn load_scene(manifest_path: &Path, m: &SceneManifest, sensors: &[SensorSpec]) -> Result<SceneSample, DatasetError> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let image = read_png(&base.join(&m.image))?;
    let cam = m.calibration.intrinsics;
    if (image.width, image.height) != (cam.width, cam.height) {
        return Err(parse_err(manifest_path, format!("image is {}x{}, intrinsics say {}x{}", image.width, image.height, cam.width, cam.height)));
    }
    let cloud = read_cloud(&base.join(&m.cloud), m.cloud_has_intensity)?;
    let labels = m
        .boxes
        .iter()
        .enumerate()
        .map(|(i, b)| Label { category: b.category.clone(), box7: b.box7, instance_id: format!("{}/gt{i}", m.scene_id), synthetic: false })
        .collect();
    Ok(SceneSample { scene_id: m.scene_id.clone(), image, cloud, camera: cam, pose: m.calibration.sensor_to_camera, labels, sensor: resolve_sensor(&m.sensor_spec_id, sensors)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerStyle {
    pub width_px: u32,
    pub rgb: [u8; 3],
}

impl Default for MarkerStyle {
    fn default() -> Self {
        Self { width_px: 4, rgb: [255, 0, 0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryConfig {
    /// Used when the describer yields no usable subclass.
    #[serde(default)]
    pub prior: Option<SizePrior>,
    pub max_per_class: usize,
    /// Candidates sampled per scene.
    pub candidates_per_scene: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Stub(StubConfig),
    Http(ProviderEndpoint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub categories: BTreeMap<String, CategoryConfig>,
    /// Ground height is taken from each scene manifest.
    pub placement: PlacementRegion,
    pub placement_attempts: u32,
    pub visibility: VisibilityConfig,
    pub lambda: f64,
    pub p_n: usize,
    /// Sensor specs in addition to the built-in presets.
    pub sensors: Vec<SensorSpec>,
    pub providers: ProviderConfig,
    pub run_seed: u64,
    pub band_px: u32,
    pub tau_edge: f64,
    pub crop_margin: f64,
    pub marker: MarkerStyle,
    /// `None` follows the sensor: constant where the sensor declares one,
    /// simulated with `r_ref = 10`, `k = 8` otherwise.
    pub intensity_mode: Option<IntensityMode>,
    pub full_marginals: bool,
    pub workers: Option<usize>,
    pub max_in_flight: usize,
    pub store_assets: bool,
    /// Lets composition draw assets generated for other scenes.
    pub cross_scene_assets: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let caps = default_caps();
        let categories = caps.into_iter().map(|(k, cap)| (k, CategoryConfig { prior: None, max_per_class: cap, candidates_per_scene: 10 })).collect();
        Self {
            categories,
            placement: PlacementRegion { x: Interval::new(6.0, 30.0), y: Interval::new(-8.0, 8.0), z_ground: 0.0, yaw: Interval::new(-std::f64::consts::PI, std::f64::consts::PI), free_z: None },
            placement_attempts: 16,
            visibility: VisibilityConfig::default(),
            lambda: 0.5,
            p_n: 5,
            sensors: Vec::new(),
            providers: ProviderConfig::Stub(StubConfig::default()),
            run_seed: 42,
            band_px: 2,
            tau_edge: 0.3,
            crop_margin: 0.5,
            marker: MarkerStyle::default(),
            intensity_mode: None,
            full_marginals: true,
            workers: None,
            max_in_flight: 16,
            store_assets: true,
            cross_scene_assets: false,
        }
    }
}

impl RunConfig {
    pub fn geo(&self) -> GeoVerifyConfig {
        GeoVerifyConfig { lambda: self.lambda, p_n: self.p_n }
    }

    pub fn caps(&self) -> BTreeMap<String, usize> {
        self.categories.iter().map(|(k, c)| (k.clone(), c.max_per_class)).collect()
    }

    pub fn intensity_for(&self, sensor: &SensorSpec) -> IntensityMode {
        match (self.intensity_mode, sensor.constant_intensity) {
            (Some(m), _) => m,
            (None, Some(value)) => IntensityMode::Constant { value },
            (None, None) => IntensityMode::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::Config(m));
        if self.categories.is_empty() {
            return bad("no categories configured".into());
        }
        for (name, c) in &self.categories {
            if name.trim().is_empty() {
                return bad("empty category name".into());
            }
            if let Some(p) = &c.prior {
                p.validate().map_err(|e| DatasetError::Config(format!("{name}: {e}")))?;
            }
        }
        self.placement.validate().map_err(|e| DatasetError::Config(e.to_string()))?;
        self.geo().validate().map_err(|e| DatasetError::Config(e.to_string()))?;
        for s in &self.sensors {
            s.validate().map_err(|e| DatasetError::Config(format!("sensor {}: {e}", s.id)))?;
        }
        if !(self.tau_edge >= 0.0) || !(self.crop_margin >= 0.0) {
            return bad("tau_edge and crop_margin must be non-negative".into());
        }
        if let Some(IntensityMode::Simulate { r_ref, .. }) = self.intensity_mode {
            if !(r_ref > 0.0) {
                return bad("r_ref must be positive".into());
            }
        }
        if self.workers == Some(0) || self.max_in_flight == 0 || self.placement_attempts == 0 {
            return bad("workers, max_in_flight and placement_attempts must be positive".into());
        }
        match &self.providers {
            ProviderConfig::Stub(s) => s.outcomes.validate().map_err(DatasetError::Config)?,
            ProviderConfig::Http(e) => e.validate().map_err(DatasetError::Config)?,
        }
        if !(0.0..=1.0).contains(&self.visibility.min_inside_fraction) {
            return bad("visibility.min_inside_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `runs/<run_id>/` layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn log(&self) -> PathBuf {
        self.root.join("candidates.jsonl")
    }
    pub fn assets(&self) -> PathBuf {
        self.root.join("assets")
    }
    pub fn scenes_out(&self) -> PathBuf {
        self.root.join("scenes_out")
    }
    pub fn create(&self) -> Result<(), DatasetError> {
        for d in [self.root.clone(), self.assets(), self.scenes_out()] {
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AssetMeta {
    id: String,
    category: String,
    subclass: String,
    offset: (u32, u32),
    bbox: Box3D,
    source_scene: String,
    center_range: f64,
    has_intensity: bool,
    point_count: usize,
}

struct AssetPayload {
    meta: AssetMeta,
    cutout: Vec<u8>,
    mask: Vec<u8>,
    cloud: Vec<u8>,
}

fn payload_meta(asset: &InstanceAsset) -> AssetMeta {
    AssetMeta {
        id: String::new(),
        category: asset.category.clone(),
        subclass: asset.subclass.clone(),
        offset: asset.offset,
        bbox: asset.bbox,
        source_scene: asset.source_scene.clone(),
        center_range: asset.center_range,
        has_intensity: asset.cloud.intensity.is_some(),
        point_count: asset.cloud.len(),
    }
}

fn payload(asset: &InstanceAsset) -> AssetPayload {
    AssetPayload { meta: payload_meta(asset), cutout: image_to_png(&asset.cutout), mask: mask_to_png(&asset.cutout_mask), cloud: encode_cloud(&asset.cloud) }
}

/// Content id of an asset; independent of its current `id` field. Hashes
/// the metadata, raw cutout pixels, mask bits and the `f32` cloud records.
pub fn asset_content_id(asset: &InstanceAsset) -> String {
    let mut meta = payload_meta(asset);
    meta.id.clear();
    let dims = |w: u32, h: u32| [w.to_le_bytes(), h.to_le_bytes()].concat();
    let mask: Vec<u8> = asset.cutout_mask.bits.iter().map(|b| u8::from(*b)).collect();
    let mut h = Sha256::new();
    for part in [
        serde_json::to_vec(&meta).expect("meta serializes"),
        dims(asset.cutout.width, asset.cutout.height),
        asset.cutout.pixels.clone(),
        dims(asset.cutout_mask.width, asset.cutout_mask.height),
        mask,
        encode_cloud(&asset.cloud),
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(&part);
    }
    hex::encode(&h.finalize()[..16])
}

/// Persists an asset under `db_root/<id>/`. The id is a hash of the payload,
/// so storing the same asset twice is a no-op. Clouds are stored at `f32`
/// precision.
pub fn store_asset(asset: &InstanceAsset, db_root: &Path) -> Result<String, DatasetError> {
    let id = asset_content_id(asset);
    let dir = db_root.join(&id);
    if dir.join("meta.json").is_file() {
        return Ok(id);
    }
    let mut p = payload(asset);
    p.meta.id = id.clone();
    let tmp = db_root.join(format!(".{id}.tmp{}", std::process::id()));
    let _ = fs::remove_dir_all(&tmp);
    fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
    for (name, bytes) in [("cutout.png", &p.cutout), ("mask.png", &p.mask), ("cloud.bin", &p.cloud)] {
        fs::write(tmp.join(name), bytes).map_err(io_err(&tmp))?;
    }
    fs::write(tmp.join("meta.json"), serde_json::to_vec_pretty(&p.meta).expect("meta serializes")).map_err(io_err(&tmp))?;
    match fs::rename(&tmp, &dir) {
        Ok(()) => Ok(id),
        // Another writer stored the same content first.
        Err(_) if dir.join("meta.json").is_file() => {
            let _ = fs::remove_dir_all(&tmp);
            Ok(id)
        }
        Err(e) => Err(DatasetError::Io { path: dir, source: e }),
    }
}

pub fn load_asset(db_root: &Path, id: &str) -> Result<InstanceAsset, DatasetError> {
    let dir = db_root.join(id);
    let meta_path = dir.join("meta.json");
    let meta: AssetMeta = serde_json::from_slice(&fs::read(&meta_path).map_err(|_| DatasetError::MissingAsset(meta_path.clone()))?).map_err(|e| parse_err(&meta_path, e))?;
    let read = |name: &str| fs::read(dir.join(name)).map_err(|_| DatasetError::MissingAsset(dir.join(name)));
    let cutout = image_from_png(&read("cutout.png")?).map_err(|e| parse_err(&dir, e))?;
    let cutout_mask: PixelMask = mask_from_png(&read("mask.png")?).map_err(|e| parse_err(&dir, e))?;
    let cloud = decode_cloud(&read("cloud.bin")?, meta.has_intensity).map_err(|e| parse_err(&dir, e))?;
    if cloud.len() != meta.point_count {
        return Err(parse_err(&dir, format!("cloud has {} points, meta says {}", cloud.len(), meta.point_count)));
    }
    Ok(InstanceAsset {
        id: meta.id,
        category: meta.category,
        subclass: meta.subclass,
        cutout,
        cutout_mask,
        offset: meta.offset,
        cloud,
        bbox: meta.bbox,
        source_scene: meta.source_scene,
        center_range: meta.center_range,
    })
}

/// Ids of all stored assets, sorted.
pub fn list_assets(db_root: &Path) -> Result<Vec<String>, DatasetError> {
    if !db_root.is_dir() {
        return Ok(Vec::new());
    }
    let mut ids: Vec<String> = fs::read_dir(db_root)
        .map_err(io_err(db_root))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("meta.json").is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| !n.starts_with('.'))
        .collect();
    ids.sort();
    Ok(ids)
}

#[derive(Debug, Serialize, Deserialize)]
struct LogHeader {
    schema: String,
}

fn header_line() -> String {
    format!("{}\n", serde_json::to_string(&LogHeader { schema: LOG_SCHEMA.into() }).expect("header serializes"))
}

/// Append-only JSON Lines log. Each record is written with a single
/// `write` on an `O_APPEND` descriptor, so lines from concurrent writers
/// never interleave. The header is installed by an atomic no-clobber link,
/// so exactly one writer creates it.
pub struct CandidateLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl CandidateLog {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        if !path.exists() {
            let tmp = path.with_extension(format!("hdr{}.{:?}", std::process::id(), std::thread::current().id()).replace(['(', ')'], ""));
            fs::write(&tmp, header_line()).map_err(io_err(&tmp))?;
            let linked = fs::hard_link(&tmp, path);
            let _ = fs::remove_file(&tmp);
            if let Err(e) = linked {
                if e.kind() != std::io::ErrorKind::AlreadyExists {
                    return Err(DatasetError::Io { path: path.to_path_buf(), source: e });
                }
            }
        }
        let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, rec: &CandidateRecord) -> Result<(), DatasetError> {
        let mut line = serde_json::to_string(rec).expect("record serializes");
        line.push('\n');
        let mut f = self.file.lock().expect("log mutex poisoned");
        f.write_all(line.as_bytes()).map_err(io_err(&self.path))
    }
}

/// Appends one record, creating the log if needed.
pub fn append_record(log: &Path, rec: &CandidateRecord) -> Result<(), DatasetError> {
    CandidateLog::open(log)?.append(rec)
}

/// Reads every complete record. A trailing line without a newline (an
/// interrupted write) is ignored.
pub fn read_log(path: &Path) -> Result<Vec<CandidateRecord>, DatasetError> {
    let f = File::open(path).map_err(|e| if e.kind() == std::io::ErrorKind::NotFound { DatasetError::MissingAsset(path.to_path_buf()) } else { DatasetError::Io { path: path.to_path_buf(), source: e } })?;
    let mut reader = BufReader::new(f);
    let mut out = Vec::new();
    let mut line = String::new();
    let mut lineno = 0usize;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(path))?;
        if n == 0 || !line.ends_with('\n') {
            break;
        }
        lineno += 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if lineno == 1 {
            if let Ok(h) = serde_json::from_str::<LogHeader>(text) {
                if h.schema != LOG_SCHEMA {
                    return Err(parse_err(path, format!("unsupported log schema {:?}", h.schema)));
                }
                continue;
            }
        }
        out.push(serde_json::from_str(text).map_err(|e| parse_err(path, format!("line {lineno}: {e}")))?);
    }
    Ok(out)
}

/// Candidate ids already present in a log (empty when it does not exist).
pub fn logged_ids(path: &Path) -> Result<BTreeSet<String>, DatasetError> {
    if !path.exists() {
        return Ok(BTreeSet::new());
    }
    Ok(read_log(path)?.into_iter().map(|r| r.candidate_id).collect())
}

/// Rewrites the log sorted by candidate id, keeping the first record of any
/// duplicated id.
pub fn canonicalize_log(path: &Path) -> Result<usize, DatasetError> {
    let mut by_id = BTreeMap::new();
    for r in read_log(path)? {
        by_id.entry(r.candidate_id.clone()).or_insert(r);
    }
    let mut text = header_line();
    for r in by_id.values() {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(by_id.len())
}

/// Outputs of `compose` for one scene.
pub fn write_composed_scene(dir: &Path, image: &ImageBuffer, cloud: &PointCloud, labels: &[Label]) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_atomic(&dir.join("image.png"), &image_to_png(image))?;
    write_atomic(&dir.join("cloud.bin"), &encode_cloud(cloud))?;
    write_atomic(&dir.join("labels.json"), serde_json::to_string_pretty(labels).expect("labels serialize").as_bytes())
}

/// Sensor origin in its own frame.
pub fn sensor_origin() -> Point3<f64> {
    Point3::origin()
}
