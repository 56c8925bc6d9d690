//! Slide geometry, tile pyramids and synthetic slides.
//!
//! All geometry is expressed in level-0 pixels. Level `L` of a pyramid has
//! dimensions `ceil(width0 / 2^L) x ceil(height0 / 2^L)`, and the top level
//! fits inside a single tile.

mod pyramid;
mod synthetic;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pyramid::{build_pyramid, MetaOverrides, Pyramid, TileSource, TileStore};
pub use synthetic::{
    generate_synthetic, plan_layout, render_layout, Blob, BlobKind, Disc, Ellipse, SyntheticLayout,
    SyntheticSlide, SyntheticSpec,
};

use crate::FORMAT_VERSION;

/// Default physical scale, micrometers per level-0 pixel.
pub const DEFAULT_MPP: f64 = 0.25;
/// Default edge of a stored tile.
pub const DEFAULT_TILE_SIZE: u32 = 256;
/// Smallest tile edge accepted by [`SlideMeta::validate`].
pub const MIN_TILE_SIZE: u32 = 64;
/// Largest level-0 edge accepted for rasters (desk scale).
pub const DEFAULT_MAX_EDGE: u32 = 16_384;
/// Area of one counting high-power field in mm².
pub const DEFAULT_HPF_AREA_MM2: f64 = 0.16;
/// Value used to pad edge tiles and regions outside the slide.
pub const BACKGROUND: [u8; 3] = [255, 255, 255];

#[derive(Debug, Error)]
pub enum SlideError {
    #[error("invalid slide metadata: {0}")]
    InvalidMeta(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("raster {width}x{height} exceeds the configured maximum edge {max}")]
    TooLarge { width: u32, height: u32, max: u32 },
    #[error("empty raster")]
    EmptyRaster,
    #[error("tile not found: level {level}, col {col}, row {row}")]
    TileNotFound { level: u32, col: u32, row: u32 },
    #[error("missing tile file {0}")]
    MissingTile(String),
    #[error("unsupported format_version {0}")]
    FormatVersion(u32),
    #[error("ground truth point ({x}, {y}) lies outside the slide")]
    PointOutOfBounds { x: u32, y: u32 },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Slide-level metadata, persisted as `<slide_id>/meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideMeta {
    pub id: String,
    pub width0: u32,
    pub height0: u32,
    pub levels: u32,
    pub tile_size: u32,
    /// Micrometers per pixel at level 0.
    pub mpp: f64,
}

impl SlideMeta {
    pub fn new(
        id: impl Into<String>,
        width0: u32,
        height0: u32,
        tile_size: u32,
        mpp: f64,
    ) -> Result<Self, SlideError> {
        let meta = SlideMeta {
            id: id.into(),
            width0,
            height0,
            levels: level_count(width0, height0, tile_size),
            tile_size,
            mpp,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), SlideError> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) || self.id.starts_with('.') {
            return Err(SlideError::InvalidMeta(format!("bad slide id {:?}", self.id)));
        }
        if self.width0 == 0 || self.height0 == 0 {
            return Err(SlideError::InvalidMeta("dimensions must be positive".into()));
        }
        if !(self.mpp > 0.0 && self.mpp.is_finite()) {
            return Err(SlideError::InvalidMeta(format!("mpp must be positive, got {}", self.mpp)));
        }
        if self.tile_size < MIN_TILE_SIZE {
            return Err(SlideError::InvalidMeta(format!(
                "tile_size {} below minimum {MIN_TILE_SIZE}",
                self.tile_size
            )));
        }
        let expected = level_count(self.width0, self.height0, self.tile_size);
        if self.levels != expected {
            return Err(SlideError::InvalidMeta(format!(
                "levels {} inconsistent with dimensions (expected {expected})",
                self.levels
            )));
        }
        Ok(())
    }

    /// Pixel dimensions of `level`.
    pub fn level_dims(&self, level: u32) -> (u32, u32) {
        (div_ceil_pow2(self.width0, level), div_ceil_pow2(self.height0, level))
    }

    /// Number of tile columns and rows at `level`.
    pub fn tile_grid(&self, level: u32) -> (u32, u32) {
        let (w, h) = self.level_dims(level);
        (w.div_ceil(self.tile_size), h.div_ceil(self.tile_size))
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width0, self.height0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width0 as f64 && y < self.height0 as f64
    }

    /// Number of level-0 pixels covering `area_mm2`.
    pub fn pixels_per_area(&self, area_mm2: f64) -> f64 {
        area_mm2 * 1e6 / (self.mpp * self.mpp)
    }

    pub fn load(slide_dir: &Path) -> Result<Self, SlideError> {
        let file: MetaFile = serde_json::from_slice(&fs::read(slide_dir.join("meta.json"))?)?;
        if file.format_version != FORMAT_VERSION {
            return Err(SlideError::FormatVersion(file.format_version));
        }
        file.meta.validate()?;
        Ok(file.meta)
    }

    pub fn save(&self, slide_dir: &Path) -> Result<(), SlideError> {
        fs::create_dir_all(slide_dir)?;
        let file = MetaFile { format_version: FORMAT_VERSION, meta: self.clone() };
        fs::write(slide_dir.join("meta.json"), serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    format_version: u32,
    #[serde(flatten)]
    meta: SlideMeta,
}

/// Number of pyramid levels so that the top level fits in one tile.
pub fn level_count(width0: u32, height0: u32, tile_size: u32) -> u32 {
    let edge = width0.max(height0) as u64;
    let mut levels = 1;
    let mut span = tile_size.max(1) as u64;
    while span < edge {
        span *= 2;
        levels += 1;
    }
    levels
}

fn div_ceil_pow2(v: u32, level: u32) -> u32 {
    let d = 1u64 << level.min(63);
    (v as u64).div_ceil(d) as u32
}

/// Axis-aligned rectangle in level-0 pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.w as f64 / 2.0, self.y as f64 + self.h as f64 / 2.0)
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Half-open containment: `[x, x+w) x [y, y+h)`.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x as f64 && py >= self.y as f64 && px < self.right() as f64 && py < self.bottom() as f64
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }

    /// Intersection with positive area, if any.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// Shifts a rectangle so it lies inside `width0 x height0` without changing its
    /// size, shrinking only when it is larger than the slide.
    pub fn shifted_inside(x: i64, y: i64, w: u32, h: u32, width0: u32, height0: u32) -> Rect {
        let w = w.min(width0);
        let h = h.min(height0);
        let x = x.clamp(0, (width0 - w) as i64) as u32;
        let y = y.clamp(0, (height0 - h) as i64) as u32;
        Rect::new(x, y, w, h)
    }
}

/// Area of `rect` in mm² at the slide's physical scale.
pub fn area_mm2(rect: &Rect, meta: &SlideMeta) -> f64 {
    rect.w as f64 * rect.h as f64 * meta.mpp * meta.mpp / 1e6
}

/// Cell of the HPF grid, anchored at the slide origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridIndex {
    pub col: u32,
    pub row: u32,
}

impl GridIndex {
    pub const fn new(col: u32, row: u32) -> Self {
        GridIndex { col, row }
    }

    /// Row-major ordering key.
    pub fn row_major(&self) -> (u32, u32) {
        (self.row, self.col)
    }
}

/// Axis-aligned partition of the slide into `cell_px` squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HpfGrid {
    pub cell_px: u32,
    pub cols: u32,
    pub rows: u32,
    pub width0: u32,
    pub height0: u32,
}

impl HpfGrid {
    pub fn new(width0: u32, height0: u32, cell_px: u32) -> Self {
        assert!(cell_px > 0, "grid cell edge must be positive");
        HpfGrid {
            cell_px,
            cols: width0.div_ceil(cell_px),
            rows: height0.div_ceil(cell_px),
            width0,
            height0,
        }
    }

    pub fn for_meta(meta: &SlideMeta, cell_px: u32) -> Self {
        Self::new(meta.width0, meta.height0, cell_px)
    }

    pub fn len(&self) -> usize {
        self.cols as usize * self.rows as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, idx: GridIndex) -> bool {
        idx.col < self.cols && idx.row < self.rows
    }

    pub fn offset(&self, idx: GridIndex) -> usize {
        idx.row as usize * self.cols as usize + idx.col as usize
    }

    pub fn index_at(&self, offset: usize) -> GridIndex {
        GridIndex::new((offset % self.cols as usize) as u32, (offset / self.cols as usize) as u32)
    }

    /// Cell containing a level-0 point; `None` outside the slide.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<GridIndex> {
        if !(x >= 0.0 && y >= 0.0 && x < self.width0 as f64 && y < self.height0 as f64) {
            return None;
        }
        Some(GridIndex::new(
            (x / self.cell_px as f64).floor() as u32,
            (y / self.cell_px as f64).floor() as u32,
        ))
    }

    /// Full (unclamped) square of a grid cell.
    pub fn cell_rect(&self, idx: GridIndex) -> Rect {
        Rect::new(idx.col * self.cell_px, idx.row * self.cell_px, self.cell_px, self.cell_px)
    }

    /// Cell square clipped to the slide.
    pub fn clamped_cell_rect(&self, idx: GridIndex) -> Rect {
        let r = self.cell_rect(idx);
        Rect::new(r.x, r.y, r.w.min(self.width0 - r.x), r.h.min(self.height0 - r.y))
    }

    /// Row-major iterator over every cell.
    pub fn iter(&self) -> impl Iterator<Item = GridIndex> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| GridIndex::new(c, r)))
    }
}

/// One annotated mitosis centroid, level-0 pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GtPoint {
    pub x: u32,
    pub y: u32,
}

/// Reference mitosis annotations for one slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub slide_id: String,
    pub mitoses: Vec<GtPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proliferative_hpfs: Option<Vec<GridIndex>>,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthFile {
    format_version: u32,
    #[serde(flatten)]
    gt: GroundTruth,
}

impl GroundTruth {
    pub fn validate(&self, meta: &SlideMeta) -> Result<(), SlideError> {
        for p in &self.mitoses {
            if p.x >= meta.width0 || p.y >= meta.height0 {
                return Err(SlideError::PointOutOfBounds { x: p.x, y: p.y });
            }
        }
        let mut sorted = self.mitoses.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(SlideError::InvalidMeta("duplicate ground-truth points".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.mitoses.iter().map(|p| (p.x as f64, p.y as f64)).collect()
    }

    pub fn load(slide_dir: &Path) -> Result<Self, SlideError> {
        let file: GroundTruthFile = serde_json::from_slice(&fs::read(slide_dir.join("ground_truth.json"))?)?;
        if file.format_version != FORMAT_VERSION {
            return Err(SlideError::FormatVersion(file.format_version));
        }
        Ok(file.gt)
    }

    pub fn save(&self, slide_dir: &Path) -> Result<(), SlideError> {
        fs::create_dir_all(slide_dir)?;
        let file = GroundTruthFile { format_version: FORMAT_VERSION, gt: self.clone() };
        fs::write(slide_dir.join("ground_truth.json"), serde_json::to_vec(&file)?)?;
        Ok(())
    }
}
