//! Reported reference figures used to configure stubs and check yield
//! fixtures: stage-wise acceptance rates for each verifier/depth pairing and
//! mean per-call model latencies.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldRow {
    pub dataset: &'static str,
    /// Number of synthesized candidates the rates were measured over.
    pub candidates: u64,
    pub verifier: &'static str,
    pub depth: &'static str,
    /// Percentages with two decimals.
    pub p_sem: f64,
    pub p_geo: f64,
    pub p_joint: f64,
}

impl YieldRow {
    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.dataset, self.verifier, self.depth)
    }
}

const fn row(dataset: &'static str, candidates: u64, verifier: &'static str, depth: &'static str, p_sem: f64, p_geo: f64, p_joint: f64) -> YieldRow {
    YieldRow { dataset, candidates, verifier, depth, p_sem, p_geo, p_joint }
}

pub const NUSCENES_CANDIDATES: u64 = 550_098;
pub const LYFT_CANDIDATES: u64 = 209_270;

/// Semantic, geometric and joint acceptance rates (percent).
pub const YIELD_TABLE: [YieldRow; 8] = [
    row("nuscenes", NUSCENES_CANDIDATES, "internvl3", "unidepth2", 81.29, 81.73, 71.42),
    row("nuscenes", NUSCENES_CANDIDATES, "internvl3", "moge2", 81.29, 83.60, 72.05),
    row("nuscenes", NUSCENES_CANDIDATES, "qwen3vl", "unidepth2", 91.71, 81.73, 75.99),
    row("nuscenes", NUSCENES_CANDIDATES, "qwen3vl", "moge2", 91.71, 83.60, 76.76),
    row("lyft", LYFT_CANDIDATES, "internvl3", "unidepth2", 89.33, 79.52, 71.17),
    row("lyft", LYFT_CANDIDATES, "internvl3", "moge2", 89.33, 89.27, 79.87),
    row("lyft", LYFT_CANDIDATES, "qwen3vl", "unidepth2", 86.24, 79.52, 70.61),
    row("lyft", LYFT_CANDIDATES, "qwen3vl", "moge2", 86.24, 89.27, 77.16),
];

pub fn yield_row(dataset: &str, verifier: &str, depth: &str) -> Option<&'static YieldRow> {
    YIELD_TABLE.iter().find(|r| r.dataset == dataset && r.verifier == verifier && r.depth == depth)
}

/// Mean per-image latency in seconds on an A100.
pub mod latency {
    pub const INPAINTER: f64 = 1.08;
    pub const VERIFIER_INTERNVL3: f64 = 2.18;
    pub const VERIFIER_QWEN3VL: f64 = 2.36;
    pub const SEGMENTER: f64 = 0.14;
    pub const DEPTH_MOGE2: f64 = 0.39;
    pub const DEPTH_UNIDEPTH2: f64 = 0.37;
}
