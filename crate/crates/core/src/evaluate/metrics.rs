//! Per-trial measurements computed from a trace, a report and ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matching::{f1, match_points};
use super::EvalError;
use crate::navigate::{replay, EventKind, NavEvent, Viewport, FILL_FRACTION};
use crate::scoring::Detection;
use crate::slide::{GridIndex, GroundTruth, HpfGrid, SlideMeta, DEFAULT_HPF_AREA_MM2};
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportPoint {
    pub x: f64,
    pub y: f64,
    /// Milliseconds since session start.
    pub t: u64,
}

/// Mitoses reported during one trial.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slide_id: Option<String>,
    pub points: Vec<ReportPoint>,
}

impl Report {
    pub fn validate(&self, meta: &SlideMeta) -> Result<(), EvalError> {
        for (i, p) in self.points.iter().enumerate() {
            if !meta.contains(p.x, p.y) {
                return Err(EvalError::Invalid(format!("report point {i} ({}, {}) lies outside the slide", p.x, p.y)));
            }
        }
        Ok(())
    }

    pub fn xy(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.x, p.y)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Match radius, level-0 pixels.
    pub epsilon: f64,
    /// Edge of the visited-region grid cells, level-0 pixels.
    pub hpf_px: u32,
    /// Counting area for the per-HPF rate, mm².
    pub hpf_area_mm2: f64,
    /// Fraction of a cell edge the view must cover on both axes for the cell to count.
    pub min_cell_overlap: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            epsilon: super::matching::DEFAULT_EPSILON,
            hpf_px: 1680,
            hpf_area_mm2: DEFAULT_HPF_AREA_MM2,
            min_cell_overlap: 0.1,
        }
    }
}

impl EvalConfig {
    /// Widest field of view still considered HPF examination: an HPF selected
    /// to fill the screen.
    pub fn max_field_of_view(&self) -> f64 {
        self.hpf_px as f64 / FILL_FRACTION
    }
}

/// HPF cells examined at HPF magnification or higher. A cell counts when the
/// view overlaps it by more than `min_cell_overlap` of its extent on both axes,
/// so the margin around a selected HPF does not spill into its neighbours.
pub fn visited_cells(viewports: &[Viewport], meta: &SlideMeta, cfg: &EvalConfig) -> BTreeSet<GridIndex> {
    let grid = HpfGrid::for_meta(meta, cfg.hpf_px);
    let max_fov = cfg.max_field_of_view() * (1.0 + 1e-9);
    let mut out = BTreeSet::new();
    for vp in viewports.iter().filter(|vp| vp.field_of_view() <= max_fov) {
        let v = vp.visible();
        let c0 = (v.x0.max(0.0) / cfg.hpf_px as f64).floor() as i64;
        let r0 = (v.y0.max(0.0) / cfg.hpf_px as f64).floor() as i64;
        let c1 = ((v.x1 / cfg.hpf_px as f64).floor() as i64).min(grid.cols as i64 - 1);
        let r1 = ((v.y1 / cfg.hpf_px as f64).floor() as i64).min(grid.rows as i64 - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let idx = GridIndex::new(c as u32, r as u32);
                let cell = grid.clamped_cell_rect(idx);
                let (ox, oy) = crate::navigate::FRect::from_rect(&cell).overlap(&v);
                if ox > cfg.min_cell_overlap * cell.w as f64 && oy > cfg.min_cell_overlap * cell.h as f64 {
                    out.insert(idx);
                }
            }
        }
    }
    out
}

/// Replays a trace and returns the visited HPF cells.
pub fn visited_region(events: &[NavEvent], meta: &SlideMeta, cfg: &EvalConfig) -> Result<BTreeSet<GridIndex>, EvalError> {
    let vps = replay(events, meta.width0, meta.height0)?;
    Ok(visited_cells(&vps, meta, cfg))
}

/// Area of the union of visited cells, mm².
pub fn region_area_mm2(region: &BTreeSet<GridIndex>, meta: &SlideMeta, hpf_px: u32) -> f64 {
    let grid = HpfGrid::for_meta(meta, hpf_px);
    region.iter().map(|&i| crate::slide::area_mm2(&grid.clamped_cell_rect(i), meta)).sum()
}

fn in_region(x: f64, y: f64, grid: &HpfGrid, region: &BTreeSet<GridIndex>) -> bool {
    grid.cell_of(x, y).is_some_and(|c| region.contains(&c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub format_version: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_reports: usize,
    pub n_gt: usize,
    pub duration_s: f64,
    /// Ground-truth mitoses inside the visited region.
    pub seen_mitoses: usize,
    /// `seen_mitoses / duration_s`.
    pub efficiency: f64,
    pub visited_hpfs: usize,
    pub visited_area_mm2: f64,
    /// Seen mitoses per counting HPF area of visited tissue.
    pub visited_mr_hpf: f64,
    pub visited_mr_mm2: f64,
    pub interaction_counts: BTreeMap<EventKind, u64>,
}

impl TrialMetrics {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("metrics serialise")
    }

    /// Writes `<root>/eval/<slide>/<trial>.json`.
    pub fn save(&self, root: &Path, slide_id: &str, trial: &str) -> Result<(), EvalError> {
        let dir = root.join("eval").join(slide_id);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(format!("{trial}.json")), self.to_json())?;
        Ok(())
    }
}

pub fn trial_metrics(
    events: &[NavEvent],
    report: &Report,
    gt: &GroundTruth,
    meta: &SlideMeta,
    cfg: &EvalConfig,
) -> Result<TrialMetrics, EvalError> {
    let last = events.last().ok_or(EvalError::EmptyTrace)?;
    let duration_s = last.t as f64 / 1000.0;
    if duration_s < 1.0 {
        return Err(EvalError::TooShort(duration_s));
    }
    if report.slide_id.as_deref().is_some_and(|id| id != meta.id) || gt.slide_id != meta.id {
        return Err(EvalError::SlideMismatch);
    }
    report.validate(meta)?;
    let m = match_points(&report.xy(), &gt.points(), cfg.epsilon);
    let region = visited_region(events, meta, cfg)?;
    let grid = HpfGrid::for_meta(meta, cfg.hpf_px);
    let seen = gt.mitoses.iter().filter(|p| in_region(p.x as f64, p.y as f64, &grid, &region)).count();
    let area = region_area_mm2(&region, meta, cfg.hpf_px);
    let visited_mr_mm2 = if area > 0.0 { seen as f64 / area } else { 0.0 };
    let visited_mr_hpf = if area > 0.0 { seen as f64 / (area / cfg.hpf_area_mm2) } else { 0.0 };
    let mut interaction_counts = BTreeMap::new();
    for ev in events {
        *interaction_counts.entry(ev.kind()).or_insert(0) += 1;
    }
    let (precision, recall) = (m.precision(), m.recall());
    Ok(TrialMetrics {
        format_version: FORMAT_VERSION,
        precision,
        recall,
        f1: f1(precision, recall),
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
        n_reports: report.points.len(),
        n_gt: gt.mitoses.len(),
        duration_s,
        seen_mitoses: seen,
        efficiency: seen as f64 / duration_s,
        visited_hpfs: region.len(),
        visited_area_mm2: area,
        visited_mr_hpf,
        visited_mr_mm2,
        interaction_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AiMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Scores thresholded detections as if they were a report, restricted to `region`.
pub fn ai_only_metrics(
    detections: &[Detection],
    tau: f64,
    gt: &GroundTruth,
    region: &BTreeSet<GridIndex>,
    meta: &SlideMeta,
    cfg: &EvalConfig,
) -> Result<AiMetrics, EvalError> {
    if region.is_empty() {
        return Err(EvalError::Invalid("region is empty".into()));
    }
    let grid = HpfGrid::for_meta(meta, cfg.hpf_px);
    let reports: Vec<(f64, f64)> = detections
        .iter()
        .filter(|d| d.prob >= tau && in_region(d.x, d.y, &grid, region))
        .map(|d| (d.x, d.y))
        .collect();
    let truth: Vec<(f64, f64)> = gt.points().into_iter().filter(|&(x, y)| in_region(x, y, &grid, region)).collect();
    let m = match_points(&reports, &truth, cfg.epsilon);
    let (precision, recall) = (m.precision(), m.recall());
    Ok(AiMetrics { precision, recall, f1: f1(precision, recall), tp: m.tp, fp: m.fp, fn_: m.fn_ })
}

/// Columns of the batch summary CSV.
pub const SUMMARY_COLUMNS: &str =
    "slide_id,trial,precision,recall,f1,tp,fp,fn,duration_s,seen_mitoses,efficiency,visited_hpfs,visited_area_mm2,visited_mr_hpf,visited_mr_mm2";

pub fn summary_row(slide_id: &str, trial: &str, m: &TrialMetrics) -> String {
    format!(
        "{slide_id},{trial},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.precision,
        m.recall,
        m.f1,
        m.tp,
        m.fp,
        m.fn_,
        m.duration_s,
        m.seen_mitoses,
        m.efficiency,
        m.visited_hpfs,
        m.visited_area_mm2,
        m.visited_mr_hpf,
        m.visited_mr_mm2
    )
}

/// Writes `<root>/eval/summary.csv` with one row per `(slide, trial, metrics)`.
pub fn write_summary(root: &Path, rows: &[(String, String, TrialMetrics)]) -> Result<(), EvalError> {
    let dir = root.join("eval");
    fs::create_dir_all(&dir)?;
    let mut out = String::from(SUMMARY_COLUMNS);
    out.push('\n');
    for (slide, trial, m) in rows {
        out.push_str(&summary_row(slide, trial, m));
        out.push('\n');
    }
    fs::write(dir.join("summary.csv"), out)?;
    Ok(())
}
