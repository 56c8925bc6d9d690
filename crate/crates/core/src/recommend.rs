//! The Local / HPF / Cell recommendation hierarchy.
//!
//! Ranking is a weighted sum of min-max normalised criteria (cell count,
//! proliferation probability, thresholded mitosis count), sorted descending
//! with row-major tie-breaks. Only candidates with some evidence (any raw
//! criterion above zero) are ranked, so all-zero weights degrade to row-major
//! order instead of an empty list. Everything here is a pure function of the
//! score grid, the weights and the config.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explain::{explanation_card, verbal_dialog, BlockCriteria, ExplainConfig, ExplanationPayload};
use crate::scoring::{Detection, ScoreGrid};
use crate::slide::{GridIndex, Rect};
use crate::FORMAT_VERSION;

/// Sensitivity that maps to the default 0.85 threshold: (0.95 - 0.85) / (0.95 - 0.50).
pub const DEFAULT_SENSITIVITY: f64 = 2.0 / 9.0;

#[derive(Debug, Error, PartialEq)]
pub enum RecError {
    #[error("{name} must be within [0, 1], got {value}")]
    InvalidWeight { name: &'static str, value: f64 },
    #[error("invalid recommendation config: {0}")]
    InvalidConfig(String),
    #[error("score grid uses {grid} px HPFs but the config expects {config} px")]
    GridMismatch { grid: u32, config: u32 },
    #[error("{0} is not a {1} recommendation")]
    WrongLevel(String, &'static str),
    #[error("unknown recommendation {0}")]
    UnknownRec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_cell: f64,
    pub w_prolif: f64,
    pub w_mitosis: f64,
    pub sensitivity: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { w_cell: 1.0, w_prolif: 1.0, w_mitosis: 1.0, sensitivity: DEFAULT_SENSITIVITY }
    }
}

impl Weights {
    pub fn new(w_cell: f64, w_prolif: f64, w_mitosis: f64, sensitivity: f64) -> Result<Self, RecError> {
        let w = Weights { w_cell, w_prolif, w_mitosis, sensitivity };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RecError> {
        for (name, value) in [
            ("w_cell", self.w_cell),
            ("w_prolif", self.w_prolif),
            ("w_mitosis", self.w_mitosis),
            ("sensitivity", self.sensitivity),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(RecError::InvalidWeight { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecConfig {
    pub local_px: u32,
    pub hpf_px: u32,
    pub cell_px: u32,
    pub max_local: usize,
    pub hpf_score_quantile: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_default: f64,
    #[serde(default)]
    pub explain: ExplainConfig,
}

impl Default for RecConfig {
    fn default() -> Self {
        RecConfig {
            local_px: 10_080,
            hpf_px: 1_680,
            cell_px: 240,
            max_local: 10,
            hpf_score_quantile: 0.45,
            tau_min: 0.50,
            tau_max: 0.95,
            tau_default: 0.85,
            explain: ExplainConfig::default(),
        }
    }
}

impl RecConfig {
    pub fn validate(&self) -> Result<(), RecError> {
        let bad = |m: String| Err(RecError::InvalidConfig(m));
        if self.cell_px == 0 {
            return bad("cell_px must be positive".into());
        }
        if self.hpf_px != 7 * self.cell_px {
            return bad(format!("hpf_px ({}) must equal 7 * cell_px ({})", self.hpf_px, self.cell_px));
        }
        if self.local_px != 6 * self.hpf_px {
            return bad(format!("local_px ({}) must equal 6 * hpf_px ({})", self.local_px, self.hpf_px));
        }
        if !(0.0..=1.0).contains(&self.hpf_score_quantile) {
            return bad("hpf_score_quantile must be within [0, 1]".into());
        }
        if !(0.0 <= self.tau_min && self.tau_min < self.tau_default && self.tau_default < self.tau_max && self.tau_max <= 1.0) {
            return bad("thresholds must satisfy 0 <= tau_min < tau_default < tau_max <= 1".into());
        }
        Ok(())
    }

    /// HPF cells per Local edge.
    pub fn hpfs_per_local(&self) -> u32 {
        self.local_px / self.hpf_px
    }

    /// Sensitivity whose threshold is `tau_default`.
    pub fn default_sensitivity(&self) -> f64 {
        (self.tau_max - self.tau_default) / (self.tau_max - self.tau_min)
    }
}

/// `tau_max - s * (tau_max - tau_min)`.
pub fn sensitivity_to_threshold(s: f64, cfg: &RecConfig) -> Result<f64, RecError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(RecError::InvalidWeight { name: "sensitivity", value: s });
    }
    Ok(cfg.tau_max - s * (cfg.tau_max - cfg.tau_min))
}

/// Min-max normalisation; a constant list maps to zeros.
pub fn normalize_criterion(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    values.iter().map(|v| if range > 0.0 { (v - min) / range } else { 0.0 }).collect()
}

/// A rankable region: one HPF cell or one Local block.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub pos: GridIndex,
    pub cell_count: f64,
    pub prolif: f64,
    pub mitosis_probs: Vec<f64>,
}

impl Candidate {
    pub fn mitosis_count(&self, tau: f64) -> u32 {
        self.mitosis_probs.iter().filter(|&&p| p >= tau).count() as u32
    }

    pub fn raw(&self, tau: f64) -> [f64; 3] {
        [self.cell_count, self.prolif, self.mitosis_count(tau) as f64]
    }

    pub fn has_evidence(&self, tau: f64) -> bool {
        self.raw(tau).iter().any(|&v| v > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked {
    pub pos: GridIndex,
    pub index: u32,
    pub score: f64,
    /// Offset of the candidate in the input slice.
    pub source: usize,
}

/// Orders candidates by weighted normalised score, descending, ties row-major.
pub fn rank(candidates: &[Candidate], weights: &Weights, tau: f64) -> Vec<Ranked> {
    let raw: Vec<[f64; 3]> = candidates.iter().map(|c| c.raw(tau)).collect();
    let norm: Vec<Vec<f64>> = (0..3).map(|k| normalize_criterion(&raw.iter().map(|r| r[k]).collect::<Vec<_>>())).collect();
    let mut out: Vec<Ranked> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| Ranked {
            pos: c.pos,
            index: 0,
            score: weights.w_cell * norm[0][i] + weights.w_prolif * norm[1][i] + weights.w_mitosis * norm[2][i],
            source: i,
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.pos.row_major().cmp(&b.pos.row_major())));
    for (i, r) in out.iter_mut().enumerate() {
        r.index = i as u32 + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Local,
    Hpf,
    Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub id: String,
    pub level: Level,
    pub index: u32,
    pub bounds: Rect,
    pub score: f64,
    pub parent: Option<String>,
    pub explanation: ExplanationPayload,
}

/// The 36 HPF cells of Local block `block`, row-major. Cells beyond the slide
/// edge are included; callers filter against the grid.
pub fn local_block_cells(block: GridIndex, cfg: &RecConfig) -> Vec<GridIndex> {
    let k = cfg.hpfs_per_local();
    (0..k)
        .flat_map(|r| (0..k).map(move |c| GridIndex::new(block.col * k + c, block.row * k + r)))
        .collect()
}

/// The 49 cell tiles of an HPF square, row-major.
pub fn hpf_cell_tiles(hpf: &Rect, cfg: &RecConfig) -> Vec<Rect> {
    let k = cfg.hpf_px / cfg.cell_px;
    (0..k)
        .flat_map(|r| (0..k).map(move |c| Rect::new(hpf.x + c * cfg.cell_px, hpf.y + r * cfg.cell_px, cfg.cell_px, cfg.cell_px)))
        .collect()
}

fn check_grid(grid: &ScoreGrid, cfg: &RecConfig) -> Result<(), RecError> {
    cfg.validate()?;
    if grid.hpf_px != cfg.hpf_px {
        return Err(RecError::GridMismatch { grid: grid.hpf_px, config: cfg.hpf_px });
    }
    Ok(())
}

fn block_rect(block: GridIndex, grid: &ScoreGrid, cfg: &RecConfig) -> Rect {
    let (x, y) = (block.col * cfg.local_px, block.row * cfg.local_px);
    Rect::new(x, y, cfg.local_px.min(grid.width0 - x), cfg.local_px.min(grid.height0 - y))
}

fn block_candidate(block: GridIndex, grid: &ScoreGrid, cfg: &RecConfig) -> (Candidate, u32) {
    let mut cand = Candidate { pos: block, cell_count: 0.0, prolif: 0.0, mitosis_probs: Vec::new() };
    let mut n = 0;
    for idx in local_block_cells(block, cfg) {
        if let Some(cell) = grid.get(idx) {
            n += 1;
            cand.cell_count += cell.cell_count as f64;
            cand.prolif = cand.prolif.max(cell.prolif_prob);
            cand.mitosis_probs.extend(cell.detections.iter().map(|d| d.prob));
        }
    }
    (cand, n)
}

fn cell_candidate(idx: GridIndex, grid: &ScoreGrid) -> Option<Candidate> {
    grid.get(idx).map(|c| Candidate {
        pos: idx,
        cell_count: c.cell_count as f64,
        prolif: c.prolif_prob,
        mitosis_probs: c.detections.iter().map(|d| d.prob).collect(),
    })
}

fn criteria(c: &Candidate, tau: f64) -> BlockCriteria {
    BlockCriteria { cell_count: c.cell_count, max_prolif: c.prolif, mitosis_count: c.mitosis_count(tau) }
}

pub fn local_id(block: GridIndex) -> String {
    format!("L{}_{}", block.col, block.row)
}

pub fn hpf_id(idx: GridIndex) -> String {
    format!("H{}_{}", idx.col, idx.row)
}

/// Parses `L{col}_{row}` / `H{col}_{row}` back into a grid position.
pub fn parse_id(id: &str) -> Option<(Level, GridIndex)> {
    let level = match id.as_bytes().first()? {
        b'L' => Level::Local,
        b'H' => Level::Hpf,
        _ => return None,
    };
    let (c, r) = id[1..].split_once('_')?;
    Some((level, GridIndex::new(c.parse().ok()?, r.parse().ok()?)))
}

/// Top `max_local` evidence-bearing 6x6 blocks.
pub fn gen_local_recs(grid: &ScoreGrid, weights: &Weights, cfg: &RecConfig) -> Result<Vec<Recommendation>, RecError> {
    check_grid(grid, cfg)?;
    weights.validate()?;
    let tau = sensitivity_to_threshold(weights.sensitivity, cfg)?;
    let k = cfg.hpfs_per_local();
    let (bcols, brows) = (grid.cols.div_ceil(k), grid.rows.div_ceil(k));
    let mut cands = Vec::new();
    let mut sizes = Vec::new();
    for br in 0..brows {
        for bc in 0..bcols {
            let (cand, n) = block_candidate(GridIndex::new(bc, br), grid, cfg);
            if cand.has_evidence(tau) {
                cands.push(cand);
                sizes.push(n);
            }
        }
    }
    Ok(rank(&cands, weights, tau)
        .into_iter()
        .take(cfg.max_local)
        .map(|r| Recommendation {
            id: local_id(r.pos),
            level: Level::Local,
            index: r.index,
            bounds: block_rect(r.pos, grid, cfg),
            score: r.score,
            parent: None,
            explanation: verbal_dialog(&criteria(&cands[r.source], tau), sizes[r.source], &cfg.explain),
        })
        .collect())
}

/// Linearly interpolated quantile of `values` (which must be non-empty).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Member HPFs of a Local rec scoring at or above the block's score quantile.
pub fn gen_hpf_recs(
    local: &Recommendation,
    grid: &ScoreGrid,
    weights: &Weights,
    cfg: &RecConfig,
) -> Result<Vec<Recommendation>, RecError> {
    check_grid(grid, cfg)?;
    if local.level != Level::Local {
        return Err(RecError::WrongLevel(local.id.clone(), "Local"));
    }
    weights.validate()?;
    let tau = sensitivity_to_threshold(weights.sensitivity, cfg)?;
    let block = GridIndex::new(local.bounds.x / cfg.local_px, local.bounds.y / cfg.local_px);
    let cands: Vec<Candidate> = local_block_cells(block, cfg)
        .into_iter()
        .filter_map(|idx| cell_candidate(idx, grid))
        .filter(|c| c.has_evidence(tau))
        .collect();
    if cands.is_empty() {
        return Ok(Vec::new());
    }
    let ranked = rank(&cands, weights, tau);
    let cut = quantile(&ranked.iter().map(|r| r.score).collect::<Vec<_>>(), cfg.hpf_score_quantile);
    let layout = grid.layout();
    Ok(ranked
        .into_iter()
        .take_while(|r| r.score >= cut)
        .map(|r| Recommendation {
            id: hpf_id(r.pos),
            level: Level::Hpf,
            index: r.index,
            bounds: layout.clamped_cell_rect(r.pos),
            score: r.score,
            parent: Some(local.id.clone()),
            explanation: verbal_dialog(&criteria(&cands[r.source], tau), 1, &cfg.explain),
        })
        .collect())
}

/// `cell_px` square centred on `det`, shifted to stay inside the slide.
pub fn cell_bounds(det: &Detection, width0: u32, height0: u32, cell_px: u32) -> Rect {
    let half = (cell_px / 2) as i64;
    Rect::shifted_inside(det.x.floor() as i64 - half, det.y.floor() as i64 - half, cell_px, cell_px, width0, height0)
}

/// One Cell rec per detection at or above `tau` in the HPF, by descending probability.
pub fn gen_cell_recs(hpf: &Recommendation, grid: &ScoreGrid, tau: f64, cfg: &RecConfig) -> Result<Vec<Recommendation>, RecError> {
    if hpf.level != Level::Hpf {
        return Err(RecError::WrongLevel(hpf.id.clone(), "HPF"));
    }
    let idx = GridIndex::new(hpf.bounds.x / grid.hpf_px, hpf.bounds.y / grid.hpf_px);
    let cell = grid.get(idx).ok_or_else(|| RecError::UnknownRec(hpf.id.clone()))?;
    let mut picked: Vec<(usize, &Detection)> = cell.detections.iter().enumerate().filter(|(_, d)| d.prob >= tau).collect();
    picked.sort_by(|a, b| b.1.prob.total_cmp(&a.1.prob).then(a.1.y.total_cmp(&b.1.y)).then(a.1.x.total_cmp(&b.1.x)));
    Ok(picked
        .into_iter()
        .enumerate()
        .map(|(i, (k, d))| {
            let bounds = cell_bounds(d, grid.width0, grid.height0, cfg.cell_px);
            Recommendation {
                id: format!("C{}_{}_{}", idx.col, idx.row, k),
                level: Level::Cell,
                index: i as u32 + 1,
                bounds,
                score: d.prob,
                parent: Some(hpf.id.clone()),
                explanation: explanation_card(d, &bounds, cfg.cell_px, &cfg.explain),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpfNode {
    #[serde(flatten)]
    pub rec: Recommendation,
    pub cells: Vec<Recommendation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalNode {
    #[serde(flatten)]
    pub rec: Recommendation,
    pub hpfs: Vec<HpfNode>,
}

/// The full hierarchy for one weight setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationSet {
    pub format_version: u32,
    pub slide_id: String,
    pub weights: Weights,
    pub tau: f64,
    /// Cell recommendations over every HPF of the slide, emitted or not.
    pub cells_total: usize,
    pub locals: Vec<LocalNode>,
}

impl RecommendationSet {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("recommendations serialise")
    }

    pub fn local(&self, id: &str) -> Option<&LocalNode> {
        self.locals.iter().find(|l| l.rec.id == id)
    }

    pub fn hpfs(&self) -> impl Iterator<Item = &HpfNode> {
        self.locals.iter().flat_map(|l| l.hpfs.iter())
    }

    pub fn find(&self, id: &str) -> Option<&Recommendation> {
        self.locals.iter().find_map(|l| {
            if l.rec.id == id {
                return Some(&l.rec);
            }
            l.hpfs.iter().find_map(|h| {
                if h.rec.id == id {
                    Some(&h.rec)
                } else {
                    h.cells.iter().find(|c| c.id == id)
                }
            })
        })
    }
}

/// Detections at or above `tau` over the whole slide.
pub fn count_cell_recs(grid: &ScoreGrid, tau: f64) -> usize {
    grid.cells.iter().map(|c| c.mitosis_count(tau) as usize).sum()
}

/// Ranks every level in one pass.
pub fn recommend(grid: &ScoreGrid, weights: &Weights, cfg: &RecConfig) -> Result<RecommendationSet, RecError> {
    let tau = sensitivity_to_threshold(weights.sensitivity, cfg)?;
    let mut locals = Vec::new();
    for local in gen_local_recs(grid, weights, cfg)? {
        let mut hpfs = Vec::new();
        for hpf in gen_hpf_recs(&local, grid, weights, cfg)? {
            let cells = gen_cell_recs(&hpf, grid, tau, cfg)?;
            hpfs.push(HpfNode { rec: hpf, cells });
        }
        locals.push(LocalNode { rec: local, hpfs });
    }
    Ok(RecommendationSet {
        format_version: FORMAT_VERSION,
        slide_id: grid.slide_id.clone(),
        weights: *weights,
        tau,
        cells_total: count_cell_recs(grid, tau),
        locals,
    })
}
