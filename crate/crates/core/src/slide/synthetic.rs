//! Synthetic H&E-like slides with planted mitoses.
//!
//! Generation happens in two steps. [`plan_layout`] places tissue, hotspots
//! and every blob (nuclei, mitoses, look-alike distractors) without touching
//! pixels, so large fixtures stay cheap. [`render_layout`] rasterises a plan.
//! Mitosis counts per region are the expected Poisson mean rounded to the
//! nearest integer, positions uniform within the region.

use std::collections::HashMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    GroundTruth, GtPoint, Pyramid, MetaOverrides, Rect, SlideError, SlideMeta, TileSource, BACKGROUND,
    DEFAULT_HPF_AREA_MM2, DEFAULT_MAX_EDGE, DEFAULT_MPP, DEFAULT_TILE_SIZE,
};
use crate::scoring::color::hsv_to_rgb;

/// Parameters of a synthetic slide. Rates are per counting HPF
/// (`hpf_area_mm2`, 0.16 mm² by default) of tissue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default = "default_id")]
    pub id: String,
    pub width0: u32,
    pub height0: u32,
    pub tissue_regions: u32,
    pub hotspot_count: u32,
    /// Nuclei per mm² of tissue.
    pub background_cell_density: f64,
    pub hotspot_mitosis_rate: f64,
    pub baseline_mitosis_rate: f64,
    pub seed: u64,
    #[serde(default = "default_hotspot_radius")]
    pub hotspot_radius: u32,
    /// Mitosis look-alikes per HPF of tissue.
    #[serde(default = "default_distractor_rate")]
    pub distractor_rate: f64,
    #[serde(default = "default_mpp")]
    pub mpp: f64,
    #[serde(default = "default_tile_size")]
    pub tile_size: u32,
    #[serde(default = "default_hpf_area")]
    pub hpf_area_mm2: f64,
    #[serde(default = "default_max_edge")]
    pub max_edge: u32,
}

fn default_id() -> String {
    "synthetic".into()
}
fn default_hotspot_radius() -> u32 {
    2400
}
fn default_distractor_rate() -> f64 {
    0.3
}
fn default_mpp() -> f64 {
    DEFAULT_MPP
}
fn default_tile_size() -> u32 {
    DEFAULT_TILE_SIZE
}
fn default_hpf_area() -> f64 {
    DEFAULT_HPF_AREA_MM2
}
fn default_max_edge() -> u32 {
    DEFAULT_MAX_EDGE
}

impl SyntheticSpec {
    /// Typical fixture: two tissue regions, two hotspots at 1.2 mitoses/HPF on a
    /// 0.05/HPF background, about 120 nuclei per 1680 px field.
    pub fn fixture(id: impl Into<String>, width0: u32, height0: u32, seed: u64) -> Self {
        SyntheticSpec {
            id: id.into(),
            width0,
            height0,
            tissue_regions: 2,
            hotspot_count: 2,
            background_cell_density: 680.0,
            hotspot_mitosis_rate: 1.2,
            baseline_mitosis_rate: 0.05,
            seed,
            hotspot_radius: default_hotspot_radius(),
            distractor_rate: default_distractor_rate(),
            mpp: DEFAULT_MPP,
            tile_size: DEFAULT_TILE_SIZE,
            hpf_area_mm2: DEFAULT_HPF_AREA_MM2,
            max_edge: DEFAULT_MAX_EDGE,
        }
    }

    pub fn validate(&self) -> Result<(), SlideError> {
        let bad = |m: &str| Err(SlideError::InvalidSpec(m.to_string()));
        if self.width0 == 0 || self.height0 == 0 {
            return bad("dimensions must be positive");
        }
        if !(self.baseline_mitosis_rate >= 0.0) {
            return bad("baseline_mitosis_rate must be >= 0");
        }
        if !(self.hotspot_mitosis_rate > self.baseline_mitosis_rate) {
            return bad("hotspot_mitosis_rate must exceed baseline_mitosis_rate");
        }
        if !(self.background_cell_density >= 0.0) || !(self.distractor_rate >= 0.0) {
            return bad("densities must be >= 0");
        }
        if !(self.mpp > 0.0) || !(self.hpf_area_mm2 > 0.0) {
            return bad("mpp and hpf_area_mm2 must be positive");
        }
        if self.hotspot_radius == 0 {
            return bad("hotspot_radius must be positive");
        }
        Ok(())
    }

    fn hpf_area_px(&self) -> f64 {
        self.hpf_area_mm2 * 1e6 / (self.mpp * self.mpp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Disc {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        dx * dx + dy * dy <= self.r * self.r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobKind {
    Nucleus,
    Mitosis,
    Distractor,
}

/// A filled ellipse centred on an integer pixel, so its pixel centroid is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blob {
    pub kind: BlobKind,
    pub x: u32,
    pub y: u32,
    pub rx: u32,
    pub ry: u32,
    pub color: [u8; 3],
}

/// Geometry of a planned synthetic slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLayout {
    pub id: String,
    pub width0: u32,
    pub height0: u32,
    pub mpp: f64,
    pub hpf_area_mm2: f64,
    pub tissue: Vec<Ellipse>,
    pub tissue_color: Vec<[u8; 3]>,
    pub hotspots: Vec<Disc>,
    pub blobs: Vec<Blob>,
    /// Estimated tissue area in level-0 px².
    pub tissue_area_px: f64,
    /// Estimated tissue area inside hotspots in level-0 px².
    pub hotspot_area_px: f64,
}

const AREA_STRIDE: u32 = 8;
const MAX_BLOB_RADIUS: u32 = 8;
const MIN_BLOB_SPACING: f64 = 2.0 * MAX_BLOB_RADIUS as f64 + 8.0;

impl SyntheticLayout {
    pub fn in_tissue(&self, x: f64, y: f64) -> bool {
        self.tissue.iter().any(|e| e.contains(x, y))
    }

    pub fn in_hotspot(&self, x: f64, y: f64) -> bool {
        self.hotspots.iter().any(|d| d.contains(x, y))
    }

    pub fn mitoses(&self) -> impl Iterator<Item = &Blob> {
        self.blobs.iter().filter(|b| b.kind == BlobKind::Mitosis)
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let mut mitoses: Vec<GtPoint> = self.mitoses().map(|b| GtPoint { x: b.x, y: b.y }).collect();
        mitoses.sort_unstable_by_key(|p| (p.y, p.x));
        GroundTruth { slide_id: self.id.clone(), mitoses, proliferative_hpfs: None }
    }

    /// Number of planted blobs (every kind is a cell) whose centre lies in `rect`.
    pub fn cells_in(&self, rect: &Rect) -> usize {
        self.blobs.iter().filter(|b| rect.contains(b.x as f64, b.y as f64)).count()
    }

    fn hpf_area_px(&self) -> f64 {
        self.hpf_area_mm2 * 1e6 / (self.mpp * self.mpp)
    }

    /// Planted mitoses per counting HPF of tissue.
    pub fn global_rate_per_hpf(&self) -> f64 {
        if self.tissue_area_px <= 0.0 {
            return 0.0;
        }
        self.mitoses().count() as f64 / (self.tissue_area_px / self.hpf_area_px())
    }

    /// Requested rate, weighted by the planned hotspot and background areas.
    pub fn expected_rate_per_hpf(&self, spec: &SyntheticSpec) -> f64 {
        if self.tissue_area_px <= 0.0 {
            return 0.0;
        }
        let hot = self.hotspot_area_px / self.tissue_area_px;
        hot * spec.hotspot_mitosis_rate + (1.0 - hot) * spec.baseline_mitosis_rate
    }
}

struct SpacingIndex {
    cell: f64,
    min_dist: f64,
    buckets: HashMap<(i64, i64), Vec<(f64, f64)>>,
}

impl SpacingIndex {
    fn new(min_dist: f64) -> Self {
        SpacingIndex { cell: min_dist, min_dist, buckets: HashMap::new() }
    }

    fn key(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.cell).floor() as i64, (y / self.cell).floor() as i64)
    }

    fn is_free(&self, x: f64, y: f64) -> bool {
        let (kx, ky) = self.key(x, y);
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(pts) = self.buckets.get(&(kx + dx, ky + dy)) {
                    if pts.iter().any(|&(px, py)| (px - x).powi(2) + (py - y).powi(2) < self.min_dist * self.min_dist) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn insert(&mut self, x: f64, y: f64) {
        let k = self.key(x, y);
        self.buckets.entry(k).or_default().push((x, y));
    }
}

/// Places tissue, hotspots and blobs for `spec`. Deterministic in `spec.seed`.
pub fn plan_layout(spec: &SyntheticSpec) -> Result<SyntheticLayout, SlideError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width0 as f64, spec.height0 as f64);

    let mut tissue = Vec::new();
    let mut tissue_color = Vec::new();
    for _ in 0..spec.tissue_regions {
        tissue.push(Ellipse {
            cx: w * rng.random_range(0.3..0.7),
            cy: h * rng.random_range(0.3..0.7),
            rx: w * rng.random_range(0.25..0.42),
            ry: h * rng.random_range(0.25..0.42),
        });
        let j: i16 = rng.random_range(-6..=6);
        tissue_color.push([(238 + j).clamp(0, 255) as u8, (188 + j) as u8, (212 + j) as u8]);
    }

    let mut layout = SyntheticLayout {
        id: spec.id.clone(),
        width0: spec.width0,
        height0: spec.height0,
        mpp: spec.mpp,
        hpf_area_mm2: spec.hpf_area_mm2,
        tissue,
        tissue_color,
        hotspots: Vec::new(),
        blobs: Vec::new(),
        tissue_area_px: 0.0,
        hotspot_area_px: 0.0,
    };

    let margin = MAX_BLOB_RADIUS as f64 + 1.0;
    let placeable = w > 2.0 * margin && h > 2.0 * margin;
    let sample_xy = |rng: &mut ChaCha8Rng| {
        (rng.random_range(margin..w - margin).floor(), rng.random_range(margin..h - margin).floor())
    };

    if placeable && !layout.tissue.is_empty() {
        for _ in 0..spec.hotspot_count {
            for _ in 0..10_000 {
                let (x, y) = sample_xy(&mut rng);
                if layout.in_tissue(x, y) {
                    layout.hotspots.push(Disc { cx: x, cy: y, r: spec.hotspot_radius as f64 });
                    break;
                }
            }
        }
    }

    let (mut tissue_px, mut hot_px) = (0.0, 0.0);
    let cell_area = (AREA_STRIDE * AREA_STRIDE) as f64;
    for by in 0..spec.height0.div_ceil(AREA_STRIDE) {
        for bx in 0..spec.width0.div_ceil(AREA_STRIDE) {
            let x = (bx * AREA_STRIDE) as f64 + AREA_STRIDE as f64 / 2.0;
            let y = (by * AREA_STRIDE) as f64 + AREA_STRIDE as f64 / 2.0;
            if layout.in_tissue(x, y) {
                tissue_px += cell_area;
                if layout.in_hotspot(x, y) {
                    hot_px += cell_area;
                }
            }
        }
    }
    layout.tissue_area_px = tissue_px;
    layout.hotspot_area_px = hot_px;
    if !placeable {
        return Ok(layout);
    }

    let hpf_px = spec.hpf_area_px();
    let n_hot = (spec.hotspot_mitosis_rate * hot_px / hpf_px).round() as usize;
    let n_base = (spec.baseline_mitosis_rate * (tissue_px - hot_px) / hpf_px).round() as usize;
    let n_distractor = (spec.distractor_rate * tissue_px / hpf_px).round() as usize;
    let tissue_mm2 = tissue_px * spec.mpp * spec.mpp / 1e6;
    let n_nuclei = (spec.background_cell_density * tissue_mm2).round() as usize;

    let mut spacing = SpacingIndex::new(MIN_BLOB_SPACING);
    let place = |layout: &mut SyntheticLayout,
                     spacing: &mut SpacingIndex,
                     rng: &mut ChaCha8Rng,
                     count: usize,
                     accept: &dyn Fn(&SyntheticLayout, f64, f64) -> bool,
                     make: &dyn Fn(&mut ChaCha8Rng, u32, u32) -> Blob| {
        for _ in 0..count {
            for _ in 0..20_000 {
                let (x, y) = sample_xy(rng);
                if accept(layout, x, y) && spacing.is_free(x, y) {
                    spacing.insert(x, y);
                    let blob = make(rng, x as u32, y as u32);
                    layout.blobs.push(blob);
                    break;
                }
            }
        }
    };

    let mitosis = |rng: &mut ChaCha8Rng, x: u32, y: u32| Blob {
        kind: BlobKind::Mitosis,
        x,
        y,
        rx: rng.random_range(5..=MAX_BLOB_RADIUS),
        ry: rng.random_range(5..=MAX_BLOB_RADIUS),
        color: hsv_to_rgb(rng.random_range(201.0..209.0), rng.random_range(0.82..0.92), rng.random_range(0.50..0.60)),
    };
    let distractor = |rng: &mut ChaCha8Rng, x: u32, y: u32| Blob {
        kind: BlobKind::Distractor,
        x,
        y,
        rx: rng.random_range(4..=7),
        ry: rng.random_range(4..=7),
        color: hsv_to_rgb(rng.random_range(224.0..236.0), rng.random_range(0.6..0.8), rng.random_range(0.45..0.60)),
    };
    let nucleus = |rng: &mut ChaCha8Rng, x: u32, y: u32| Blob {
        kind: BlobKind::Nucleus,
        x,
        y,
        rx: rng.random_range(4..=7),
        ry: rng.random_range(4..=7),
        color: [rng.random_range(65..=80), rng.random_range(35..=50), rng.random_range(110..=130)],
    };

    if hot_px > 0.0 {
        // Sample hotspot mitoses inside the hotspot discs directly.
        let discs = layout.hotspots.clone();
        for _ in 0..n_hot {
            for _ in 0..20_000 {
                let d = discs[rng.random_range(0..discs.len())];
                let x = (d.cx + rng.random_range(-d.r..d.r)).floor();
                let y = (d.cy + rng.random_range(-d.r..d.r)).floor();
                if x < margin || y < margin || x >= w - margin || y >= h - margin {
                    continue;
                }
                // Rejecting by the number of covering discs keeps overlapping hotspots uniform.
                let cover = discs.iter().filter(|o| o.contains(x, y)).count();
                if cover == 0 || !layout.in_tissue(x, y) || rng.random_range(0..cover) != 0 {
                    continue;
                }
                if !d.contains(x, y) || !spacing.is_free(x, y) {
                    continue;
                }
                spacing.insert(x, y);
                let blob = mitosis(&mut rng, x as u32, y as u32);
                layout.blobs.push(blob);
                break;
            }
        }
    }
    place(&mut layout, &mut spacing, &mut rng, n_base, &|l, x, y| l.in_tissue(x, y) && !l.in_hotspot(x, y), &mitosis);
    place(&mut layout, &mut spacing, &mut rng, n_distractor, &|l, x, y| l.in_tissue(x, y), &distractor);
    place(&mut layout, &mut spacing, &mut rng, n_nuclei, &|l, x, y| l.in_tissue(x, y), &nucleus);
    Ok(layout)
}

/// Rasterises a layout: white background, pink tissue, filled blobs.
pub fn render_layout(layout: &SyntheticLayout) -> RgbImage {
    let (w, h) = (layout.width0, layout.height0);
    let mut img = RgbImage::from_pixel(w, h, Rgb(BACKGROUND));
    for (e, color) in layout.tissue.iter().zip(&layout.tissue_color) {
        let y0 = (e.cy - e.ry).floor().max(0.0) as u32;
        let y1 = ((e.cy + e.ry).ceil().max(0.0) as u32).min(h);
        for y in y0..y1 {
            let py = y as f64 + 0.5;
            let t = 1.0 - ((py - e.cy) / e.ry).powi(2);
            if t < 0.0 {
                continue;
            }
            let half = e.rx * t.sqrt();
            let x0 = (e.cx - half - 0.5).ceil().max(0.0) as u32;
            let x1 = ((e.cx + half - 0.5).floor() + 1.0).clamp(0.0, w as f64) as u32;
            for x in x0..x1 {
                img.put_pixel(x, y, Rgb(*color));
            }
        }
    }
    for b in &layout.blobs {
        fill_blob(&mut img, b);
    }
    img
}

fn fill_blob(img: &mut RgbImage, b: &Blob) {
    let (rx, ry) = (b.rx as i64, b.ry as i64);
    for dy in -ry..=ry {
        let t = 1.0 - (dy as f64 / ry as f64).powi(2);
        let half = (rx as f64 * t.max(0.0).sqrt()).floor() as i64;
        let y = b.y as i64 + dy;
        if y < 0 || y >= img.height() as i64 {
            continue;
        }
        for dx in -half..=half {
            let x = b.x as i64 + dx;
            if x >= 0 && x < img.width() as i64 {
                img.put_pixel(x as u32, y as u32, Rgb(b.color));
            }
        }
    }
}

/// A generated slide held in memory.
#[derive(Debug, Clone)]
pub struct SyntheticSlide {
    pub layout: SyntheticLayout,
    pub pyramid: Pyramid,
    pub ground_truth: GroundTruth,
}

impl SyntheticSlide {
    pub fn meta(&self) -> &SlideMeta {
        self.pyramid.meta()
    }

    /// Writes tiles, `meta.json` and `ground_truth.json` to `<out_root>/<id>/`.
    pub fn write(&self, out_root: &Path) -> Result<SlideMeta, SlideError> {
        let dir = out_root.join(&self.meta().id);
        self.pyramid.write(&dir)?;
        self.ground_truth.save(&dir)?;
        Ok(self.meta().clone())
    }
}

/// Plans, renders and builds the pyramid for a synthetic slide.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSlide, SlideError> {
    spec.validate()?;
    if spec.width0 > spec.max_edge || spec.height0 > spec.max_edge {
        return Err(SlideError::TooLarge { width: spec.width0, height: spec.height0, max: spec.max_edge });
    }
    let layout = plan_layout(spec)?;
    let raster = render_layout(&layout);
    let overrides =
        MetaOverrides { id: spec.id.clone(), tile_size: spec.tile_size, mpp: spec.mpp, max_edge: spec.max_edge };
    let pyramid = Pyramid::from_raster(raster, &overrides)?;
    let ground_truth = layout.ground_truth();
    ground_truth.validate(pyramid.meta())?;
    Ok(SyntheticSlide { layout, pyramid, ground_truth })
}
