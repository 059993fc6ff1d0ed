//! Subclass-specification and semantic-verification prompts, response
//! parsing, and the pass/fail rule for verifier answers.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::placement::{Interval, SizePrior};

pub const SUBCLASS_PROMPT_TEMPLATE: &str = include_str!("../assets/prompts/subclass_specification.v1.txt");
pub const VERIFICATION_PROMPT_TEMPLATE: &str = include_str!("../assets/prompts/semantic_verification.v1.txt");
pub const PROMPT_TEMPLATE_VERSION: &str = "v1";

/// Categories whose subclass descriptions must state whether a rider is included.
pub const RIDER_CATEGORIES: [&str; 2] = ["bicycle", "motorcycle"];

/// Largest accepted max/min ratio on any axis.
pub const MAX_DIMENSION_RATIO: f64 = 10.0;
/// Largest accepted dimension in meters.
pub const MAX_DIMENSION_M: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("implausible dimensions: {0}")]
    ImplausibleDimensions(String),
    #[error("cache io: {0}")]
    Cache(String),
}

pub fn requires_rider_clause(category: &str) -> bool {
    RIDER_CATEGORIES.contains(&category)
}

/// Fills the subclass-specification template for `category`, which must be
/// one of `known`.
pub fn build_subclass_prompt(category: &str, known: &[String]) -> Result<String, PromptError> {
    if category.trim().is_empty() || !known.iter().any(|k| k == category) {
        return Err(PromptError::UnknownCategory(category.to_string()));
    }
    Ok(SUBCLASS_PROMPT_TEMPLATE.replace("{TARGET_LABEL}", category))
}

/// A fine-grained variant of a category returned by the vision-language
/// model: the text that conditions inpainting and verification, plus size
/// priors for geometric verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclassSpec {
    pub category: String,
    pub subclass_name: String,
    pub description: String,
    pub size_prior: SizePrior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rider_included: Option<bool>,
    #[serde(default)]
    pub reference_product: String,
}

impl SubclassSpec {
    /// Canonical response text; `parse_subclass_response` reads it back exactly.
    pub fn to_response_text(&self) -> String {
        let one_line = |s: &str| s.replace(['\n', '\r'], " ");
        let dim = |iv: &Interval| {
            if iv.min == iv.max {
                format!("{} m", iv.min)
            } else {
                format!("{}–{} m", iv.min, iv.max)
            }
        };
        let mut out = String::new();
        out.push_str(&format!("Subclass: {}\n", one_line(&self.subclass_name)));
        out.push_str(&format!("Length: {}\n", dim(&self.size_prior.length)));
        out.push_str(&format!("Width: {}\n", dim(&self.size_prior.width)));
        out.push_str(&format!("Height: {}\n", dim(&self.size_prior.height)));
        if !self.reference_product.is_empty() {
            out.push_str(&format!("Reference product: {}\n", one_line(&self.reference_product)));
        }
        if let Some(r) = self.rider_included {
            out.push_str(&format!("Rider: {}\n", if r { "included" } else { "none" }));
        }
        out.push_str(&format!("Description: {}\n", one_line(&self.description)));
        out
    }
}

/// Compiles each distinct pattern once per process.
fn cached_regex(pattern: String) -> Regex {
    static CACHE: OnceLock<Mutex<HashMap<String, Regex>>> = OnceLock::new();
    let mut cache = CACHE.get_or_init(Default::default).lock().unwrap_or_else(|p| p.into_inner());
    cache.entry(pattern).or_insert_with_key(|p| Regex::new(p).expect("static pattern")).clone()
}

fn line_field(text: &str, labels: &str) -> Option<String> {
    let re = cached_regex(format!(r"(?im)^[\s\-\*#]*(?:{labels})\**\s*[:：]\s*\**\s*(.+?)\s*$"));
    re.captures(text).map(|c| c[1].trim_matches(|ch: char| ch == '*' || ch.is_whitespace()).to_string()).filter(|s| !s.is_empty())
}

const NUM: &str = r"(\d+(?:\.\d+)?)";
const RANGE_SEP: &str = r"\s*(?:–|—|-|~|to)\s*";

fn parse_dim_value(s: &str) -> Option<Interval> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(&format!(r"^\s*(?:approx(?:imately)?\.?\s*|about\s*|~\s*)?{NUM}(?:{RANGE_SEP}{NUM})?")).unwrap());
    let c = re.captures(s)?;
    let a: f64 = c[1].parse().ok()?;
    let b: f64 = c.get(2).map(|m| m.as_str().parse().ok()).unwrap_or(Some(a))?;
    Some(Interval::new(a.min(b), a.max(b)))
}

fn find_dimension(text: &str, axis: &str) -> Option<Interval> {
    if let Some(v) = line_field(text, axis) {
        if let Some(iv) = parse_dim_value(&v) {
            return Some(iv);
        }
    }
    let re = cached_regex(format!(r"(?i)\b{axis}\b\s*(?:[:=]|of|is|about|approx\.?|approximately)?\s*{NUM}(?:{RANGE_SEP}{NUM})?"));
    let c = re.captures(text)?;
    let a: f64 = c[1].parse().ok()?;
    let b: f64 = c.get(2).map(|m| m.as_str().parse().ok()).unwrap_or(Some(a))?;
    Some(Interval::new(a.min(b), a.max(b)))
}

fn check_plausible(prior: &SizePrior) -> Result<(), PromptError> {
    for (name, iv) in prior.axes() {
        if !(iv.min > 0.0) {
            return Err(PromptError::ImplausibleDimensions(format!("{name} has non-positive lower bound {}", iv.min)));
        }
        if iv.max > MAX_DIMENSION_M {
            return Err(PromptError::ImplausibleDimensions(format!("{name} max {} m exceeds {MAX_DIMENSION_M} m", iv.max)));
        }
        if iv.max / iv.min > MAX_DIMENSION_RATIO {
            return Err(PromptError::ImplausibleDimensions(format!("{name} range {}–{} spans more than {MAX_DIMENSION_RATIO}x", iv.min, iv.max)));
        }
    }
    Ok(())
}

fn json_dim(v: &serde_json::Value) -> Option<Interval> {
    match v {
        serde_json::Value::Number(n) => n.as_f64().map(Interval::point),
        serde_json::Value::String(s) => parse_dim_value(s),
        serde_json::Value::Array(a) if a.len() == 2 => {
            let (x, y) = (a[0].as_f64()?, a[1].as_f64()?);
            Some(Interval::new(x.min(y), x.max(y)))
        }
        serde_json::Value::Object(o) => {
            let (x, y) = (o.get("min")?.as_f64()?, o.get("max")?.as_f64()?);
            Some(Interval::new(x.min(y), x.max(y)))
        }
        _ => None,
    }
}

fn parse_json_response(category: &str, v: &serde_json::Value) -> Result<SubclassSpec, PromptError> {
    let s = |keys: &[&str]| keys.iter().find_map(|k| v.get(*k).and_then(|x| x.as_str()).map(str::to_string));
    let name = s(&["subclass", "subclass_name", "name"]).ok_or_else(|| PromptError::MalformedResponse("missing subclass name".into()))?;
    let description = s(&["description"]).filter(|d| !d.trim().is_empty()).ok_or_else(|| PromptError::MalformedResponse("missing description".into()))?;
    let dims = v.get("dimensions").unwrap_or(v);
    let axis = |k: &str| dims.get(k).and_then(json_dim).ok_or_else(|| PromptError::MalformedResponse(format!("missing {k}")));
    let prior = SizePrior { length: axis("length")?, width: axis("width")?, height: axis("height")? };
    let rider = v.get("rider_included").and_then(|r| r.as_bool());
    finish(category, name, description, prior, rider, s(&["reference_product", "reference"]).unwrap_or_default())
}

fn finish(
    category: &str,
    subclass_name: String,
    description: String,
    size_prior: SizePrior,
    rider: Option<bool>,
    reference_product: String,
) -> Result<SubclassSpec, PromptError> {
    check_plausible(&size_prior)?;
    let rider_included = requires_rider_clause(category).then(|| rider.unwrap_or(false));
    Ok(SubclassSpec { category: category.to_string(), subclass_name, description, size_prior, rider_included, reference_product })
}

/// Parses a subclass response (labelled lines, inline prose, or a JSON
/// object). Dimension ranges may be written `4.5–6.0`, `4.5-6.0` or
/// `4.5 to 6.0`; a single value yields `min = max`.
pub fn parse_subclass_response(category: &str, text: &str) -> Result<SubclassSpec, PromptError> {
    let trimmed = text.trim();
    let json_body = trimmed.trim_start_matches("```json").trim_start_matches("```").trim_end_matches("```").trim();
    if json_body.starts_with('{') {
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(json_body) {
            return parse_json_response(category, &v);
        }
    }
    let name = line_field(text, "subclass(?: name)?|name").ok_or_else(|| PromptError::MalformedResponse("missing subclass name".into()))?;
    let description = line_field(text, "description|visual description").ok_or_else(|| PromptError::MalformedResponse("missing description".into()))?;
    let mut axes = [Interval::point(0.0); 3];
    for (slot, axis) in axes.iter_mut().zip(["length", "width", "height"]) {
        *slot = find_dimension(text, axis).ok_or_else(|| PromptError::MalformedResponse(format!("missing {axis}")))?;
    }
    let prior = SizePrior { length: axes[0], width: axes[1], height: axes[2] };
    let rider = line_field(text, "rider").map(|r| {
        let r = r.to_lowercase();
        !(r.starts_with("no") || r.starts_with("without") || r.starts_with("excluded") || r.starts_with("false"))
    });
    let reference = line_field(text, "reference product|reference|product").unwrap_or_default();
    finish(category, name, description, prior, rider, reference)
}

/// Yes/No answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn is_yes(self) -> bool {
        self == Answer::Yes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    None,
    Minor,
    Medium,
    Severe,
}

impl Severity {
    pub const ALL: [Severity; 4] = [Severity::None, Severity::Minor, Severity::Medium, Severity::Severe];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::None => "none",
            Severity::Minor => "minor",
            Severity::Medium => "medium",
            Severity::Severe => "severe",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticVerdict {
    pub q1_category_match: Answer,
    pub q2_scene_plausible: Answer,
    pub q3_artifact_severity: Severity,
    pub q4_comment: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticFailReason {
    Category,
    Scale,
    Artifact,
    None,
}

impl SemanticFailReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SemanticFailReason::Category => "category",
            SemanticFailReason::Scale => "scale",
            SemanticFailReason::Artifact => "artifact",
            SemanticFailReason::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationDecision {
    pub passed: bool,
    pub fail_reason: SemanticFailReason,
}

/// A sample passes only with Q1 = yes, Q2 = yes and Q3 = none. The reported
/// reason is the first failing question.
pub fn decide(v: &SemanticVerdict) -> VerificationDecision {
    let fail_reason = if !v.q1_category_match.is_yes() {
        SemanticFailReason::Category
    } else if !v.q2_scene_plausible.is_yes() {
        SemanticFailReason::Scale
    } else if v.q3_artifact_severity != Severity::None {
        SemanticFailReason::Artifact
    } else {
        SemanticFailReason::None
    };
    VerificationDecision { passed: fail_reason == SemanticFailReason::None, fail_reason }
}

fn leading_token(text: &str) -> String {
    text.trim()
        .to_lowercase()
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect()
}

pub fn normalize_yes_no(text: &str) -> Result<Answer, PromptError> {
    match leading_token(text).as_str() {
        "yes" => Ok(Answer::Yes),
        "no" => Ok(Answer::No),
        other => Err(PromptError::MalformedResponse(format!("expected yes/no, got {other:?}"))),
    }
}

pub fn normalize_severity(text: &str) -> Result<Severity, PromptError> {
    let tok = leading_token(text);
    Severity::ALL
        .into_iter()
        .find(|s| s.as_str() == tok)
        .ok_or_else(|| PromptError::MalformedResponse(format!("expected none/minor/medium/severe, got {tok:?}")))
}

impl SemanticVerdict {
    /// Builds a verdict from the four raw answers in question order.
    pub fn from_answers(answers: &[String]) -> Result<Self, PromptError> {
        if answers.len() != 4 {
            return Err(PromptError::MalformedResponse(format!("expected 4 answers, got {}", answers.len())));
        }
        Ok(Self {
            q1_category_match: normalize_yes_no(&answers[0])?,
            q2_scene_plausible: normalize_yes_no(&answers[1])?,
            q3_artifact_severity: normalize_severity(&answers[2])?,
            q4_comment: answers[3].trim().to_string(),
        })
    }
}

/// Opaque reference to an image attached to a conversation turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    /// `None` until the verifier has answered.
    pub answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageRef>,
    pub history: Vec<QaPair>,
}

struct VerificationPrompt {
    preamble: String,
    questions: [String; 4],
}

fn verification_prompt() -> &'static VerificationPrompt {
    static PROMPT: OnceLock<VerificationPrompt> = OnceLock::new();
    PROMPT.get_or_init(|| {
        let mut lines = VERIFICATION_PROMPT_TEMPLATE.lines().map(str::trim).filter(|l| !l.is_empty());
        let preamble = lines.next().expect("verification template has a preamble").to_string();
        let qs: Vec<String> = lines.map(str::to_string).collect();
        let questions: [String; 4] = qs.try_into().expect("verification template has four questions");
        VerificationPrompt { preamble, questions }
    })
}

/// The four verification questions, verbatim.
pub fn verification_questions() -> [&'static str; 4] {
    let p = verification_prompt();
    [&p.questions[0], &p.questions[1], &p.questions[2], &p.questions[3]]
}

/// Sequential verification dialogue: turn k asks only question k and carries
/// the k−1 earlier questions with whatever answers are already known. Both
/// images are attached to the first turn, which also carries the preamble.
pub fn build_verification_turns(scene_marked: &ImageRef, crop: &ImageRef, answers: &[String]) -> Vec<Turn> {
    let p = verification_prompt();
    (0..4)
        .map(|k| {
            let question = if k == 0 { format!("{}\n\n{}", p.preamble, p.questions[0]) } else { p.questions[k].clone() };
            let images = if k == 0 { vec![scene_marked.clone(), crop.clone()] } else { Vec::new() };
            let history = (0..k).map(|j| QaPair { question: p.questions[j].clone(), answer: answers.get(j).cloned() }).collect();
            Turn { question, images, history }
        })
        .collect()
}

/// On-disk cache of raw subclass responses keyed by `(category, hash(response))`.
/// Writes go through a temp file and an atomic rename, so concurrent readers
/// never see partial entries.
#[derive(Debug, Clone)]
pub struct SubclassCache {
    root: PathBuf,
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

impl SubclassCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn key(response: &str) -> String {
        hex::encode(&Sha256::digest(response.as_bytes())[..8])
    }

    pub fn put(&self, category: &str, response: &str) -> Result<String, PromptError> {
        let io = |e: std::io::Error| PromptError::Cache(e.to_string());
        let dir = self.root.join(slug(category));
        fs::create_dir_all(&dir).map_err(io)?;
        let key = Self::key(response);
        let path = dir.join(format!("{key}.txt"));
        if path.exists() {
            return Ok(key);
        }
        let tmp = dir.join(format!(".{key}.{}.tmp", std::process::id()));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(response.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)?;
        Ok(key)
    }

    pub fn get(&self, category: &str, key: &str) -> Option<String> {
        fs::read_to_string(self.root.join(slug(category)).join(format!("{key}.txt"))).ok()
    }

    /// All cached responses for a category, ordered by key.
    pub fn entries(&self, category: &str) -> Vec<(String, String)> {
        let dir: &Path = &self.root.join(slug(category));
        let mut out: Vec<(String, String)> = fs::read_dir(dir)
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().to_string();
                let key = name.strip_suffix(".txt")?.to_string();
                if key.starts_with('.') {
                    return None;
                }
                Some((key, fs::read_to_string(e.path()).ok()?))
            })
            .collect();
        out.sort();
        out
    }
}
