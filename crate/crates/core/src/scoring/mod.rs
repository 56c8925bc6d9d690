//! Per-HPF criteria: cell count, proliferation probability and mitosis detections.
//!
//! The slide is split into non-overlapping `hpf_px` squares anchored at the
//! origin. Each square is scored independently by a [`RegionScorer`];
//! detections can alternatively be imported from a file produced by an
//! external model. Proliferation probability is derived afterwards from the
//! detection evidence of the 3x3 neighbourhood.

mod blob;
pub(crate) mod color;
mod import;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blob::{
    analyze_region, heuristic_cell_count, heuristic_mitosis_detect, mitosis_probability, BlobConfig, CoreWindow,
    RegionScores,
};
pub use import::{export_detections, import_detections, parse_detections, DetectionFile};

use crate::slide::{GridIndex, HpfGrid, SlideError, SyntheticLayout, BlobKind, TileSource};
use crate::FORMAT_VERSION;

/// Edge of an HPF recommendation tile in level-0 pixels.
pub const DEFAULT_HPF_PX: u32 = 1680;
/// Default rate constant of the proliferation link function.
pub const DEFAULT_LAMBDA: f64 = 0.7;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error("detection file is not valid JSON: {0}")]
    Parse(String),
    #[error("detection record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("unsupported format_version {0}")]
    FormatVersion(u32),
    #[error("score grid is inconsistent: {0}")]
    Inconsistent(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// A candidate mitotic figure at level-0 coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub prob: f64,
}

/// The three criteria for one HPF cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaScores {
    #[serde(flatten)]
    pub idx: GridIndex,
    pub cell_count: u32,
    pub prolif_prob: f64,
    pub detections: Vec<Detection>,
}

impl CriteriaScores {
    /// Detections at or above `tau`.
    pub fn mitosis_count(&self, tau: f64) -> u32 {
        self.detections.iter().filter(|d| d.prob >= tau).count() as u32
    }

    pub fn evidence(&self) -> f64 {
        self.detections.iter().map(|d| d.prob).sum()
    }
}

/// Dense row-major grid of [`CriteriaScores`] covering a slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGrid {
    pub slide_id: String,
    pub hpf_px: u32,
    pub width0: u32,
    pub height0: u32,
    pub cols: u32,
    pub rows: u32,
    pub lambda: f64,
    pub cells: Vec<CriteriaScores>,
}

#[derive(Serialize, Deserialize)]
struct ScoreFile {
    format_version: u32,
    #[serde(flatten)]
    grid: ScoreGrid,
}

impl ScoreGrid {
    /// Builds a grid from per-cell counts (row-major) and a flat detection list.
    /// Detections outside the slide are dropped; each cell's list is sorted
    /// row-major so the result does not depend on input order.
    pub fn assemble(
        slide_id: impl Into<String>,
        width0: u32,
        height0: u32,
        hpf_px: u32,
        lambda: f64,
        cell_counts: &[u32],
        detections: impl IntoIterator<Item = Detection>,
    ) -> ScoreGrid {
        let layout = HpfGrid::new(width0, height0, hpf_px);
        assert_eq!(cell_counts.len(), layout.len(), "one count per grid cell");
        let mut cells: Vec<CriteriaScores> = layout
            .iter()
            .zip(cell_counts)
            .map(|(idx, &cell_count)| CriteriaScores { idx, cell_count, prolif_prob: 0.0, detections: Vec::new() })
            .collect();
        for d in detections {
            if let Some(idx) = layout.cell_of(d.x, d.y) {
                cells[layout.offset(idx)].detections.push(d);
            }
        }
        for c in &mut cells {
            c.detections.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)).then(b.prob.total_cmp(&a.prob)));
        }
        let mut grid = ScoreGrid {
            slide_id: slide_id.into(),
            hpf_px,
            width0,
            height0,
            cols: layout.cols,
            rows: layout.rows,
            lambda,
            cells,
        };
        let probs: Vec<f64> = layout.iter().map(|idx| proliferation_score(&grid, idx)).collect();
        for (c, p) in grid.cells.iter_mut().zip(probs) {
            c.prolif_prob = p;
        }
        grid
    }

    pub fn layout(&self) -> HpfGrid {
        HpfGrid::new(self.width0, self.height0, self.hpf_px)
    }

    pub fn get(&self, idx: GridIndex) -> Option<&CriteriaScores> {
        (idx.col < self.cols && idx.row < self.rows).then(|| &self.cells[(idx.row * self.cols + idx.col) as usize])
    }

    pub fn detections(&self) -> impl Iterator<Item = &Detection> {
        self.cells.iter().flat_map(|c| c.detections.iter())
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let layout = self.layout();
        if (layout.cols, layout.rows) != (self.cols, self.rows) || self.cells.len() != layout.len() {
            return Err(ScoringError::Inconsistent("grid dimensions do not match the slide".into()));
        }
        for (offset, c) in self.cells.iter().enumerate() {
            if c.idx != layout.index_at(offset) {
                return Err(ScoringError::Inconsistent(format!("cell {offset} is out of row-major order")));
            }
            if !(0.0..=1.0).contains(&c.prolif_prob) {
                return Err(ScoringError::Inconsistent(format!("cell {offset} prolif_prob out of range")));
            }
            for d in &c.detections {
                if layout.cell_of(d.x, d.y) != Some(c.idx) || !(0.0..=1.0).contains(&d.prob) {
                    return Err(ScoringError::Inconsistent(format!("cell {offset} holds a foreign detection")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>, ScoringError> {
        Ok(serde_json::to_vec(&ScoreFile { format_version: FORMAT_VERSION, grid: self.clone() })?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ScoringError> {
        let file: ScoreFile = serde_json::from_slice(bytes)?;
        if file.format_version != FORMAT_VERSION {
            return Err(ScoringError::FormatVersion(file.format_version));
        }
        file.grid.validate()?;
        Ok(file.grid)
    }

    /// Writes `<slide_dir>/scores.json`.
    pub fn save(&self, slide_dir: &Path) -> Result<(), ScoringError> {
        fs::write(slide_dir.join("scores.json"), self.to_json()?)?;
        Ok(())
    }

    pub fn load(slide_dir: &Path) -> Result<Self, ScoringError> {
        Self::from_json(&fs::read(slide_dir.join("scores.json"))?)
    }
}

/// `1 - exp(-lambda * e)` where `e` sums detection probabilities over the 3x3
/// neighbourhood of `idx` (clipped at the slide edge).
pub fn proliferation_score(grid: &ScoreGrid, idx: GridIndex) -> f64 {
    let mut evidence = 0.0;
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            let (c, r) = (idx.col as i64 + dc, idx.row as i64 + dr);
            if c < 0 || r < 0 {
                continue;
            }
            if let Some(cell) = grid.get(GridIndex::new(c as u32, r as u32)) {
                evidence += cell.evidence();
            }
        }
    }
    proliferation_from_evidence(evidence, grid.lambda)
}

pub fn proliferation_from_evidence(evidence: f64, lambda: f64) -> f64 {
    if evidence <= 0.0 {
        return 0.0;
    }
    (1.0 - (-lambda * evidence).exp()).clamp(0.0, 1.0)
}

/// Scores one raster region. `origin` is the level-0 position of the region's
/// top-left pixel; only blobs whose centroid falls in `core` belong to the cell.
pub trait RegionScorer: Sync {
    fn score(&self, region: &image::RgbImage, core: CoreWindow, origin: (i64, i64)) -> RegionScores;

    /// Context margin to read around each cell.
    fn apron(&self) -> u32 {
        0
    }
}

/// Luminance/hue blob detector.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicScorer {
    pub config: BlobConfig,
}

impl RegionScorer for HeuristicScorer {
    fn score(&self, region: &image::RgbImage, core: CoreWindow, origin: (i64, i64)) -> RegionScores {
        analyze_region(region, core, origin, &self.config)
    }

    fn apron(&self) -> u32 {
        self.config.apron
    }
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub hpf_px: u32,
    pub lambda: f64,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions { hpf_px: DEFAULT_HPF_PX, lambda: DEFAULT_LAMBDA, jobs: None }
    }
}

/// Scores every HPF cell of a slide. With `imported` set, those detections
/// replace the scorer's own (cell counts still come from the scorer).
pub fn score_slide(
    source: &dyn TileSource,
    scorer: &dyn RegionScorer,
    imported: Option<&[Detection]>,
    opts: &ScoreOptions,
) -> Result<ScoreGrid, ScoringError> {
    let meta = source.meta().clone();
    let layout = HpfGrid::for_meta(&meta, opts.hpf_px);
    let apron = scorer.apron();
    let hpf = opts.hpf_px;
    let run = || -> Vec<Result<RegionScores, SlideError>> {
        (0..layout.len())
            .into_par_iter()
            .map(|offset| {
                let idx = layout.index_at(offset);
                let x = (idx.col * hpf) as i64 - apron as i64;
                let y = (idx.row * hpf) as i64 - apron as i64;
                let region = source.read_region(x, y, hpf + 2 * apron, hpf + 2 * apron)?;
                let core = CoreWindow { x: apron, y: apron, w: hpf, h: hpf };
                Ok(scorer.score(&region, core, (x, y)))
            })
            .collect()
    };
    let results = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| ScoringError::Pool(e.to_string()))?
            .install(run),
        None => run(),
    };
    let mut counts = Vec::with_capacity(results.len());
    let mut detections = Vec::new();
    for r in results {
        let r = r?;
        counts.push(r.cell_count);
        if imported.is_none() {
            detections.extend(r.detections);
        }
    }
    if let Some(imported) = imported {
        detections.extend_from_slice(imported);
    }
    Ok(ScoreGrid::assemble(meta.id, meta.width0, meta.height0, hpf, opts.lambda, &counts, detections))
}

/// Scores a planned synthetic layout without rendering it: each blob counts
/// as a cell, and mitosis-hued blobs get the probability the heuristic would
/// assign to their colour.
pub fn score_layout(layout: &SyntheticLayout, hpf_px: u32, lambda: f64) -> ScoreGrid {
    let grid = HpfGrid::new(layout.width0, layout.height0, hpf_px);
    let mut counts = vec![0u32; grid.len()];
    let mut detections = Vec::new();
    for b in &layout.blobs {
        let (x, y) = (b.x as f64, b.y as f64);
        if let Some(idx) = grid.cell_of(x, y) {
            counts[grid.offset(idx)] += 1;
        }
        if b.kind != BlobKind::Nucleus {
            if let Some(prob) = mitosis_probability(b.color.map(|c| c as f64)) {
                detections.push(Detection { x, y, prob });
            }
        }
    }
    ScoreGrid::assemble(layout.id.clone(), layout.width0, layout.height0, hpf_px, lambda, &counts, detections)
}
