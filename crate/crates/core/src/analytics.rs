//! Candidate records, stage-wise yield decomposition, tolerance sweeps and
//! run reports.
//!
//! Counting is exact integer arithmetic; percentages are produced only at
//! the end, rounded half-to-even at two decimals. Count sets from separate
//! log shards merge associatively.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geoverify::{passes_at, GeoFailReason, GeoVerdict};
use crate::prompts::{SemanticVerdict, VerificationDecision};

pub const LOG_SCHEMA: &str = "veria.candidate.v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("candidate log is empty")]
    EmptyLog,
    #[error("record {0} has a size verdict but no stored size ratios")]
    MissingRatios(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Pass,
    FailSemantic,
    FailGeometric,
    ProviderError,
}

impl CandidateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CandidateStatus::Pass => "pass",
            CandidateStatus::FailSemantic => "fail_semantic",
            CandidateStatus::FailGeometric => "fail_geometric",
            CandidateStatus::ProviderError => "provider_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticOutcome {
    pub verdict: SemanticVerdict,
    pub decision: VerificationDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateError {
    pub stage: String,
    pub code: String,
    pub message: String,
}

/// Full provenance of one synthesized candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub candidate_id: String,
    pub scene_id: String,
    pub category: String,
    #[serde(default)]
    pub subclass: Option<String>,
    #[serde(default)]
    pub condition_text: Option<String>,
    pub seed: u64,
    #[serde(default)]
    pub sampled_box7: Option<[f64; 7]>,
    #[serde(default)]
    pub semantic: Option<SemanticOutcome>,
    #[serde(default)]
    pub geometric: Option<GeoVerdict>,
    #[serde(default)]
    pub point_count: Option<usize>,
    /// Seconds per provider stage.
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
    pub status: CandidateStatus,
    #[serde(default)]
    pub error: Option<CandidateError>,
    #[serde(default)]
    pub asset_id: Option<String>,
}

impl CandidateRecord {
    pub fn semantic_passed(&self) -> bool {
        self.semantic.as_ref().is_some_and(|s| s.decision.passed)
    }

    pub fn geometric_passed(&self) -> bool {
        self.geometric.as_ref().is_some_and(|g| g.passed)
    }

    /// Status implied by the recorded verdicts and error.
    pub fn derive_status(&self) -> CandidateStatus {
        match (&self.semantic, &self.geometric) {
            (Some(s), _) if !s.decision.passed => CandidateStatus::FailSemantic,
            (Some(_), Some(g)) if g.passed => CandidateStatus::Pass,
            (Some(_), Some(_)) => CandidateStatus::FailGeometric,
            _ => CandidateStatus::ProviderError,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timings.values().any(|t| !(*t >= 0.0)) {
            return Err(format!("{}: negative timing", self.candidate_id));
        }
        let both = self.semantic_passed() && self.geometric_passed();
        if (self.status == CandidateStatus::Pass) != both {
            return Err(format!("{}: status {} disagrees with verdicts", self.candidate_id, self.status.as_str()));
        }
        Ok(())
    }
}

/// Event counts over a set of records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct YieldCounts {
    pub n: u64,
    pub sem: u64,
    pub geo: u64,
    pub joint: u64,
    pub provider_errors: u64,
}

impl YieldCounts {
    pub fn add(&mut self, sem: bool, geo: bool, provider_error: bool) {
        self.n += 1;
        self.sem += u64::from(sem);
        self.geo += u64::from(geo);
        self.joint += u64::from(sem && geo);
        self.provider_errors += u64::from(provider_error);
    }

    pub fn merge(&mut self, o: &YieldCounts) {
        self.n += o.n;
        self.sem += o.sem;
        self.geo += o.geo;
        self.joint += o.joint;
        self.provider_errors += o.provider_errors;
    }
}

/// `100·k/n` in hundredths of a percent, rounded half to even.
pub fn basis_points(k: u64, n: u64) -> u64 {
    assert!(n > 0);
    let num = u128::from(k) * 10_000;
    let d = u128::from(n);
    let (q, r) = (num / d, num % d);
    let up = match (2 * r).cmp(&d) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Equal => q % 2 == 1,
        std::cmp::Ordering::Less => false,
    };
    (q + u128::from(up)) as u64
}

pub fn percent(k: u64, n: u64) -> f64 {
    basis_points(k, n) as f64 / 100.0
}

fn fmt_bp(bp: u64) -> String {
    format!("{}.{:02}", bp / 100, bp % 100)
}

/// Streaming accumulator for yield statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct YieldAccumulator {
    pub total: YieldCounts,
    pub per_category: BTreeMap<String, YieldCounts>,
    /// `stage:reason` → count over failing records.
    pub fail_reasons: BTreeMap<String, u64>,
    /// Records whose semantic verdict failed and whose geometry was never evaluated.
    pub geo_skipped: u64,
    /// stage → (calls, total seconds).
    pub timings: BTreeMap<String, (u64, f64)>,
}

impl YieldAccumulator {
    pub fn push(&mut self, r: &CandidateRecord) {
        let (sem, geo) = (r.semantic_passed(), r.geometric_passed());
        let perr = r.status == CandidateStatus::ProviderError;
        self.total.add(sem, geo, perr);
        self.per_category.entry(r.category.clone()).or_default().add(sem, geo, perr);
        let key = match r.status {
            CandidateStatus::Pass => None,
            CandidateStatus::FailSemantic => Some(format!("semantic:{}", r.semantic.as_ref().map_or("unknown", |s| s.decision.fail_reason.as_str()))),
            CandidateStatus::FailGeometric => Some(format!("geometric:{}", r.geometric.as_ref().map_or("unknown", |g| g.fail_reason.as_str()))),
            CandidateStatus::ProviderError => Some(format!("provider_error:{}", r.error.as_ref().map_or("unknown", |e| e.code.as_str()))),
        };
        if let Some(k) = key {
            *self.fail_reasons.entry(k).or_default() += 1;
        }
        if r.semantic.is_some() && !sem && r.geometric.is_none() && r.status == CandidateStatus::FailSemantic {
            self.geo_skipped += 1;
        }
        for (stage, secs) in &r.timings {
            let e = self.timings.entry(stage.clone()).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += secs;
        }
    }

    pub fn merge(&mut self, o: &YieldAccumulator) {
        self.total.merge(&o.total);
        for (k, v) in &o.per_category {
            self.per_category.entry(k.clone()).or_default().merge(v);
        }
        for (k, v) in &o.fail_reasons {
            *self.fail_reasons.entry(k.clone()).or_default() += v;
        }
        self.geo_skipped += o.geo_skipped;
        for (k, (c, s)) in &o.timings {
            let e = self.timings.entry(k.clone()).or_insert((0, 0.0));
            e.0 += c;
            e.1 += s;
        }
    }

    pub fn finish(&self) -> Result<YieldReport, AnalyticsError> {
        if self.total.n == 0 {
            return Err(AnalyticsError::EmptyLog);
        }
        Ok(YieldReport {
            counts: self.total.clone(),
            p_sem: percent(self.total.sem, self.total.n),
            p_geo: percent(self.total.geo, self.total.n),
            p_joint: percent(self.total.joint, self.total.n),
            geo_conditional: self.geo_skipped > 0,
            per_category: self.per_category.clone(),
            fail_reasons: self.fail_reasons.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldReport {
    pub counts: YieldCounts,
    pub p_sem: f64,
    pub p_geo: f64,
    pub p_joint: f64,
    /// Geometry was evaluated only on semantic passes, so `p_geo` is not a
    /// marginal over all candidates.
    pub geo_conditional: bool,
    pub per_category: BTreeMap<String, YieldCounts>,
    pub fail_reasons: BTreeMap<String, u64>,
}

impl YieldReport {
    /// `max(0, p_sem + p_geo − 100) ≤ p_joint ≤ min(p_sem, p_geo)` on counts.
    pub fn within_frechet_bounds(&self) -> bool {
        let c = &self.counts;
        c.joint <= c.sem.min(c.geo) && c.joint + c.n >= c.sem + c.geo
    }
}

pub fn yield_decomposition<'a>(records: impl IntoIterator<Item = &'a CandidateRecord>) -> Result<YieldReport, AnalyticsError> {
    let mut acc = YieldAccumulator::default();
    for r in records {
        acc.push(r);
    }
    acc.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub geo: u64,
    pub joint: u64,
    pub n: u64,
    pub joint_percent: f64,
}

/// Geometric pass at tolerance `lambda`, recomputed from stored ratios.
pub fn geo_pass_at(r: &CandidateRecord, lambda: f64, p_n: usize) -> Result<bool, AnalyticsError> {
    match &r.geometric {
        None => Ok(false),
        Some(g) if g.fail_reason == GeoFailReason::TooFewPoints => Ok(false),
        Some(g) => match &g.size_ratios {
            Some(ratios) => Ok(passes_at(g.point_count, ratios, lambda, p_n)),
            None => Err(AnalyticsError::MissingRatios(r.candidate_id.clone())),
        },
    }
}

/// Joint yield at each tolerance in the grid, sorted by tolerance.
pub fn lambda_sweep(records: &[CandidateRecord], grid: &[f64], p_n: usize) -> Result<Vec<SweepPoint>, AnalyticsError> {
    if records.is_empty() {
        return Err(AnalyticsError::EmptyLog);
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let n = records.len() as u64;
    grid.into_iter()
        .map(|lambda| {
            let (mut geo, mut joint) = (0, 0);
            for r in records {
                if geo_pass_at(r, lambda, p_n)? {
                    geo += 1;
                    joint += u64::from(r.semantic_passed());
                }
            }
            Ok(SweepPoint { lambda, geo, joint, n, joint_percent: percent(joint, n) })
        })
        .collect()
}

pub fn default_lambda_grid() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

/// Renders yield, per-category yield, fail reasons, mean stage timings and
/// the tolerance sweep. Output depends only on the records.
pub fn report(records: &[CandidateRecord], format: ReportFormat, grid: &[f64], p_n: usize) -> Result<String, AnalyticsError> {
    let mut acc = YieldAccumulator::default();
    for r in records {
        acc.push(r);
    }
    let y = acc.finish()?;
    let sweep = lambda_sweep(records, grid, p_n).ok();
    let c = &y.counts;
    let mut out = String::new();
    let cat_rows: Vec<(String, String, String, String, u64)> = y
        .per_category
        .iter()
        .map(|(k, v)| (k.clone(), fmt_bp(basis_points(v.sem, v.n)), fmt_bp(basis_points(v.geo, v.n)), fmt_bp(basis_points(v.joint, v.n)), v.n))
        .collect();
    let timing_rows: Vec<(String, u64, f64)> = acc.timings.iter().map(|(k, (n, s))| (k.clone(), *n, s / *n as f64)).collect();
    match format {
        ReportFormat::Markdown => {
            let geo_label = if y.geo_conditional { "P(S_geo | S_sem)" } else { "P(S_geo)" };
            writeln!(out, "# Yield report\n").unwrap();
            writeln!(out, "| N | P(S_sem) | {geo_label} | P(S_sem ∩ S_geo) | provider errors |").unwrap();
            writeln!(out, "|---|---|---|---|---|").unwrap();
            writeln!(out, "| {} | {} | {} | {} | {} |", c.n, fmt_bp(basis_points(c.sem, c.n)), fmt_bp(basis_points(c.geo, c.n)), fmt_bp(basis_points(c.joint, c.n)), c.provider_errors).unwrap();
            if y.geo_conditional {
                writeln!(out, "\nGeometry was evaluated only on semantic passes; the geometric rate is conditional.").unwrap();
            }
            if c.provider_errors > 0 {
                writeln!(out, "\nProvider-error candidates are counted in N and in neither pass event.").unwrap();
            }
            writeln!(out, "\n## Per category\n\n| category | N | P(S_sem) | P(S_geo) | joint |\n|---|---|---|---|---|").unwrap();
            for (k, s, g, j, n) in &cat_rows {
                writeln!(out, "| {k} | {n} | {s} | {g} | {j} |").unwrap();
            }
            writeln!(out, "\n## Fail reasons\n\n| reason | count |\n|---|---|").unwrap();
            for (k, v) in &y.fail_reasons {
                writeln!(out, "| {k} | {v} |").unwrap();
            }
            writeln!(out, "\n## Mean time per call\n\n| stage | calls | mean seconds |\n|---|---|---|").unwrap();
            for (k, n, m) in &timing_rows {
                writeln!(out, "| {k} | {n} | {m:.3} |").unwrap();
            }
            if let Some(sw) = &sweep {
                writeln!(out, "\n## Tolerance sweep (p_n = {p_n})\n\n| lambda | geo passes | joint passes | joint yield |\n|---|---|---|---|").unwrap();
                for p in sw {
                    writeln!(out, "| {:.2} | {} | {} | {} |", p.lambda, p.geo, p.joint, fmt_bp(basis_points(p.joint, p.n))).unwrap();
                }
            }
        }
        ReportFormat::Csv => {
            writeln!(out, "section,key,n,p_sem,p_geo,p_joint,value").unwrap();
            writeln!(out, "yield,all,{},{},{},{},", c.n, fmt_bp(basis_points(c.sem, c.n)), fmt_bp(basis_points(c.geo, c.n)), fmt_bp(basis_points(c.joint, c.n))).unwrap();
            for (k, s, g, j, n) in &cat_rows {
                writeln!(out, "category,{},{n},{s},{g},{j},", csv_field(k)).unwrap();
            }
            for (k, v) in &y.fail_reasons {
                writeln!(out, "fail_reason,{},,,,,{v}", csv_field(k)).unwrap();
            }
            for (k, n, m) in &timing_rows {
                writeln!(out, "timing,{},{n},,,,{m:.3}", csv_field(k)).unwrap();
            }
            if let Some(sw) = &sweep {
                for p in sw {
                    writeln!(out, "sweep,{:.2},{},,,{},", p.lambda, p.n, fmt_bp(basis_points(p.joint, p.n))).unwrap();
                }
            }
        }
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Line plot of joint yield against tolerance.
pub fn sweep_svg(points: &[SweepPoint]) -> String {
    let (w, h, m) = (480.0, 320.0, 40.0);
    let (lmin, lmax) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.lambda), b.max(p.lambda)));
    let span = if lmax > lmin { lmax - lmin } else { 1.0 };
    let x = |l: f64| m + (l - lmin) / span * (w - 2.0 * m);
    let y = |pct: f64| h - m - pct / 100.0 * (h - 2.0 * m);
    let path: Vec<String> = points.iter().map(|p| format!("{:.2},{:.2}", x(p.lambda), y(p.joint_percent))).collect();
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n");
    writeln!(s, "<line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", h - m, w - m, h - m).unwrap();
    writeln!(s, "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>", h - m).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">lambda</text>", w / 2.0, h - 8.0).unwrap();
    writeln!(s, "<text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">joint yield (%)</text>", h / 2.0, h / 2.0).unwrap();
    writeln!(s, "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>", path.join(" ")).unwrap();
    for p in points {
        writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>", x(p.lambda), y(p.joint_percent)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Records with exactly the given event counts, for fixtures. The first
/// `joint` records pass both stages, then `sem − joint` pass only the
/// semantic stage, then `geo − joint` only the geometric stage.
pub fn fixture_records(n: u64, sem: u64, geo: u64, joint: u64) -> Vec<CandidateRecord> {
    use crate::prompts::{decide, Answer, Severity};
    assert!(joint <= sem.min(geo) && sem + geo - joint <= n);
    (0..n)
        .map(|i| {
            let (s, g) = if i < joint {
                (true, true)
            } else if i < sem {
                (true, false)
            } else if i < sem + geo - joint {
                (false, true)
            } else {
                (false, false)
            };
            let verdict = SemanticVerdict {
                q1_category_match: if s { Answer::Yes } else { Answer::No },
                q2_scene_plausible: Answer::Yes,
                q3_artifact_severity: Severity::None,
                q4_comment: String::new(),
            };
            let ratios = if g { [1.0, 1.0, 1.0] } else { [1.8, 1.0, 1.0] };
            let geometric = GeoVerdict {
                passed: g,
                fitted_sizes: Some(ratios),
                size_ratios: Some(ratios),
                point_count: 50,
                fail_reason: if g { GeoFailReason::None } else { GeoFailReason::SizeX },
            };
            let mut rec = CandidateRecord {
                candidate_id: format!("fixture/{i:06}"),
                scene_id: "fixture".into(),
                category: "bicycle".into(),
                subclass: None,
                condition_text: None,
                seed: i,
                sampled_box7: None,
                semantic: Some(SemanticOutcome { decision: decide(&verdict), verdict }),
                geometric: Some(geometric),
                point_count: Some(50),
                timings: BTreeMap::new(),
                status: CandidateStatus::Pass,
                error: None,
                asset_id: None,
            };
            rec.status = rec.derive_status();
            rec
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_even_rounding() {
        assert_eq!(basis_points(1, 8), 1250);
        assert_eq!(basis_points(1, 80_000), 0);
        assert_eq!(basis_points(3, 8_000), 4);
        assert_eq!(basis_points(1, 20_000), 0); 
        assert_eq!(basis_points(3, 20_000), 2); 
        assert_eq!(basis_points(5, 20_000), 2); 
        assert_eq!(basis_points(2, 3), 6667);
    }

    #[test]
    fn table_fixtures() {
        let y = yield_decomposition(&fixture_records(10_000, 9171, 8173, 7599)).unwrap();
        assert_eq!((y.p_sem, y.p_geo, y.p_joint), (91.71, 81.73, 75.99));
        let y = yield_decomposition(&fixture_records(10_000, 8933, 8927, 7987)).unwrap();
        assert_eq!((y.p_sem, y.p_geo, y.p_joint), (89.33, 89.27, 79.87));
        let y = yield_decomposition(&fixture_records(100, 100, 100, 100)).unwrap();
        assert_eq!((y.p_sem, y.p_geo, y.p_joint), (100.0, 100.0, 100.0));
        assert!(y.within_frechet_bounds());
    }

    #[test]
    fn empty_log() {
        assert_eq!(yield_decomposition(&[]), Err(AnalyticsError::EmptyLog));
        assert_eq!(report(&[], ReportFormat::Markdown, &[0.5], 5), Err(AnalyticsError::EmptyLog));
    }

    #[test]
    fn provider_errors_count_in_n_only() {
        let mut recs = fixture_records(4, 4, 4, 4);
        recs[0].semantic = None;
        recs[0].geometric = None;
        recs[0].status = recs[0].derive_status();
        recs[0].error = Some(CandidateError { stage: "inpaint".into(), code: "unavailable".into(), message: String::new() });
        let y = yield_decomposition(&recs).unwrap();
        assert_eq!(y.counts, YieldCounts { n: 4, sem: 3, geo: 3, joint: 3, provider_errors: 1 });
        assert_eq!(y.fail_reasons["provider_error:unavailable"], 1);
    }

    #[test]
    fn sweep_edges() {
        let mut recs = fixture_records(10, 10, 10, 10);
        for (i, r) in recs.iter_mut().enumerate() {
            let g = r.geometric.as_mut().unwrap();
            g.size_ratios = Some([1.0 + 0.25 * i as f64, 1.0, 1.0]);
        }
        let sw = lambda_sweep(&recs, &[1.0, 0.0, 0.5], 5).unwrap();
        assert_eq!(sw.iter().map(|p| p.lambda).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        assert_eq!(sw[0].geo, 1);
        assert_eq!(sw[1].geo, 3);
        assert_eq!(sw[2].geo, 5);
        recs[3].geometric.as_mut().unwrap().size_ratios = None;
        assert_eq!(lambda_sweep(&recs, &[0.5], 5), Err(AnalyticsError::MissingRatios(recs[3].candidate_id.clone())));
    }

    #[test]
    fn sweep_at_full_tolerance_equals_point_count_rate() {
        let mut recs = fixture_records(20, 20, 20, 20);
        for (i, r) in recs.iter_mut().enumerate() {
            let g = r.geometric.as_mut().unwrap();
            g.point_count = i;
            g.size_ratios = Some([1.9, 0.2, 1.3]);
        }
        let sw = lambda_sweep(&recs, &[1.0], 5).unwrap();
        assert_eq!(sw[0].geo, 15);
    }

    #[test]
    fn report_is_deterministic_and_contains_yield() {
        let recs = fixture_records(10_000, 9171, 8173, 7599);
        let a = report(&recs, ReportFormat::Markdown, &default_lambda_grid(), 5).unwrap();
        let b = report(&recs, ReportFormat::Markdown, &default_lambda_grid(), 5).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("75.99"));
        let csv = report(&recs, ReportFormat::Csv, &default_lambda_grid(), 5).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("yield,all,10000,91.71,81.73,75.99"));
        assert!(sweep_svg(&lambda_sweep(&recs, &default_lambda_grid(), 5).unwrap()).starts_with("<svg"));
    }

    #[test]
    fn record_status_consistency() {
        for r in fixture_records(50, 30, 20, 10) {
            r.validate().unwrap();
        }
    }

    fn random_log(seed: u64, n: usize) -> Vec<CandidateRecord> {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, 0, "log");
        let mut recs = fixture_records(n as u64, 0, 0, 0);
        for r in &mut recs {
            let sem = rng.random_bool(0.8);
            let v = &mut r.semantic.as_mut().unwrap();
            v.verdict.q1_category_match = if sem { crate::prompts::Answer::Yes } else { crate::prompts::Answer::No };
            v.decision = crate::prompts::decide(&v.verdict);
            let g = r.geometric.as_mut().unwrap();
            g.point_count = rng.random_range(0..20);
            g.size_ratios = Some([rng.random_range(0.0..2.5), rng.random_range(0.0..2.5), rng.random_range(0.0..2.5)]);
            g.fail_reason = GeoFailReason::SizeX;
        }
        recs
    }

    proptest! {
        #[test]
        fn shard_merge_matches_batch(seed in 0u64..200, split in 0usize..100) {
            let recs = random_log(seed, 100);
            let mut a = YieldAccumulator::default();
            let mut b = YieldAccumulator::default();
            recs[..split].iter().for_each(|r| a.push(r));
            recs[split..].iter().for_each(|r| b.push(r));
            a.merge(&b);
            let whole = yield_decomposition(&recs).unwrap();
            prop_assert_eq!(a.finish().unwrap(), whole.clone());
            prop_assert!(whole.within_frechet_bounds());
        }

        #[test]
        fn sweep_monotone(seed in 0u64..200) {
            let recs = random_log(seed, 200);
            let sw = lambda_sweep(&recs, &default_lambda_grid(), 5).unwrap();
            prop_assert!(sw.windows(2).all(|w| w[0].joint <= w[1].joint && w[0].geo <= w[1].geo));
        }
    }
}
