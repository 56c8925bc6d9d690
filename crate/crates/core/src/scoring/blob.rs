//! Connected-component blob heuristics standing in for learned cell and
//! mitosis models.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::color::{luminance, rgb_to_hsv};
use super::Detection;

/// Hue of planted mitotic figures, degrees.
pub const MITOSIS_HUE: f64 = 205.0;
/// Hue distance at which the mitosis score reaches zero.
pub const MITOSIS_HUE_WIDTH: f64 = 40.0;
/// Saturation above which the score is not attenuated.
pub const MITOSIS_FULL_SATURATION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobConfig {
    /// Pixels darker than this luminance belong to blobs.
    pub luminance_max: f64,
    pub min_area: u32,
    pub max_area: u32,
    /// Context margin read around each HPF so border blobs are seen whole.
    pub apron: u32,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig { luminance_max: 0.5, min_area: 20, max_area: 2000, apron: 32 }
    }
}

/// Window of a region raster whose blobs are attributed to it (by centroid).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoreWindow {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl CoreWindow {
    pub fn whole(img: &RgbImage) -> Self {
        CoreWindow { x: 0, y: 0, w: img.width(), h: img.height() }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x as f64 && y >= self.y as f64 && x < (self.x + self.w) as f64 && y < (self.y + self.h) as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionScores {
    pub cell_count: u32,
    pub detections: Vec<Detection>,
}

/// Mitosis probability of a blob with the given mean colour, or `None` when the
/// hue is outside the mitosis window. Look-alikes a few tens of degrees off
/// score below 0.85; planted figures score above.
pub fn mitosis_probability(mean_rgb: [f64; 3]) -> Option<f64> {
    let (hue, sat, _) = rgb_to_hsv(mean_rgb);
    let dist = (hue - MITOSIS_HUE).abs().min(360.0 - (hue - MITOSIS_HUE).abs());
    let hue_match = 1.0 - dist / MITOSIS_HUE_WIDTH;
    if hue_match <= 0.0 {
        return None;
    }
    let sat_factor = (sat / MITOSIS_FULL_SATURATION).min(1.0);
    let p = 0.99 * hue_match.sqrt() * sat_factor;
    Some((p * 1e4).round() / 1e4)
}

/// Labels dark 8-connected components of `img` and scores those whose
/// centroid falls inside `core`. `origin` is the level-0 position of `img`'s
/// top-left pixel.
pub fn analyze_region(img: &RgbImage, core: CoreWindow, origin: (i64, i64), cfg: &BlobConfig) -> RegionScores {
    let (w, h) = img.dimensions();
    let raw = img.as_raw();
    let n = (w as usize) * (h as usize);
    let mut dark = vec![false; n];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        dark[i] = luminance([px[0], px[1], px[2]]) < cfg.luminance_max;
    }
    let mut seen = vec![false; n];
    let mut stack = Vec::new();
    let mut out = RegionScores::default();
    for start in 0..n {
        if !dark[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut area, mut sx, mut sy) = (0u64, 0u64, 0u64);
        let mut sum = [0u64; 3];
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w as usize) as i64, (i / w as usize) as i64);
            area += 1;
            sx += x as u64;
            sy += y as u64;
            for c in 0..3 {
                sum[c] += raw[i * 3 + c] as u64;
            }
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w as usize + nx as usize;
                    if dark[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if area < cfg.min_area as u64 || area > cfg.max_area as u64 {
            continue;
        }
        let (cx, cy) = (sx as f64 / area as f64, sy as f64 / area as f64);
        if !core.contains(cx, cy) {
            continue;
        }
        out.cell_count += 1;
        let mean = sum.map(|s| s as f64 / area as f64);
        if let Some(prob) = mitosis_probability(mean) {
            out.detections.push(Detection {
                x: round2(cx + origin.0 as f64),
                y: round2(cy + origin.1 as f64),
                prob,
            });
        }
    }
    out
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Number of dark blobs within the size window.
pub fn heuristic_cell_count(region: &RgbImage, cfg: &BlobConfig) -> u32 {
    analyze_region(region, CoreWindow::whole(region), (0, 0), cfg).cell_count
}

/// Mitosis-hued blobs in `region`, reported at level-0 coordinates.
pub fn heuristic_mitosis_detect(region: &RgbImage, origin: (i64, i64), cfg: &BlobConfig) -> Vec<Detection> {
    analyze_region(region, CoreWindow::whole(region), origin, cfg).detections
}
