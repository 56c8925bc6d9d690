//! Verbal dialogs for Local/HPF recommendations and explanation cards for Cell
//! recommendations.
//!
//! The saliency heatmap on a card is a placeholder Gaussian centred on the
//! detection, not model-derived evidence; payloads say so explicitly.

use std::fmt;
use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::scoring::Detection;
use crate::slide::Rect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellularRating {
    #[serde(rename = "sparse")]
    Sparse,
    #[serde(rename = "cellular")]
    Cellular,
    #[serde(rename = "very cellular")]
    VeryCellular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProlifRating {
    #[serde(rename = "unlikely")]
    Unlikely,
    #[serde(rename = "moderately likely")]
    ModeratelyLikely,
    #[serde(rename = "very likely")]
    VeryLikely,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Confidence {
    #[serde(rename = "low confidence")]
    Low,
    #[serde(rename = "moderately confident")]
    Moderate,
    #[serde(rename = "highly confident")]
    High,
}

macro_rules! label_display {
    ($($ty:ty),*) => {$(
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
                f.write_str(&s)
            }
        }
    )*};
}
label_display!(CellularRating, ProlifRating, Confidence);

/// Bin edges for the verbal labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    /// Mean cells per HPF below which a region is "sparse".
    pub sparse_below: f64,
    /// Mean cells per HPF above which a region is "very cellular".
    pub very_cellular_above: f64,
    pub prolif_unlikely_below: f64,
    /// Operating threshold of the proliferation model.
    pub prolif_very_likely_at: f64,
    pub moderate_confidence_at: f64,
    pub high_confidence_at: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            sparse_below: 50.0,
            very_cellular_above: 150.0,
            prolif_unlikely_below: 0.4,
            prolif_very_likely_at: 0.77,
            moderate_confidence_at: 0.90,
            high_confidence_at: 0.98,
        }
    }
}

impl ExplainConfig {
    pub fn cellular(&self, mean_cells_per_hpf: f64) -> CellularRating {
        if mean_cells_per_hpf < self.sparse_below {
            CellularRating::Sparse
        } else if mean_cells_per_hpf > self.very_cellular_above {
            CellularRating::VeryCellular
        } else {
            CellularRating::Cellular
        }
    }

    pub fn prolif(&self, max_prolif: f64) -> ProlifRating {
        if max_prolif < self.prolif_unlikely_below {
            ProlifRating::Unlikely
        } else if max_prolif < self.prolif_very_likely_at {
            ProlifRating::ModeratelyLikely
        } else {
            ProlifRating::VeryLikely
        }
    }

    pub fn confidence(&self, prob: f64) -> Confidence {
        if prob < self.moderate_confidence_at {
            Confidence::Low
        } else if prob < self.high_confidence_at {
            Confidence::Moderate
        } else {
            Confidence::High
        }
    }
}

/// Aggregated criteria of a Local block or a single HPF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockCriteria {
    pub cell_count: f64,
    pub max_prolif: f64,
    pub mitosis_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialog {
    pub cellular_rating: CellularRating,
    pub prolif_rating: ProlifRating,
    pub avg_mitosis: f64,
    pub n_hpfs: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Saliency {
    pub width: u32,
    pub height: u32,
    /// Peak pixel relative to the card bounds.
    pub peak_x: u32,
    pub peak_y: u32,
    pub sigma: f64,
    /// Grayscale PNG, base64.
    pub png: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Card {
    pub prob: f64,
    pub confidence_label: Confidence,
    pub text: String,
    pub saliency: Saliency,
    pub saliency_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ExplanationPayload {
    Dialog(Dialog),
    Card(Card),
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

pub fn verbal_dialog(criteria: &BlockCriteria, n_hpfs: u32, cfg: &ExplainConfig) -> ExplanationPayload {
    let n = n_hpfs.max(1);
    let cellular_rating = cfg.cellular(criteria.cell_count / n as f64);
    let prolif_rating = cfg.prolif(criteria.max_prolif);
    let avg_mitosis = round3(criteria.mitosis_count as f64 / n as f64);
    let text = format!(
        "Cellular rating: {cellular_rating} ({n}HPF), Proliferative Rating: \"{prolif_rating}\", Average Mitosis: {avg_mitosis:.3}"
    );
    ExplanationPayload::Dialog(Dialog { cellular_rating, prolif_rating, avg_mitosis, n_hpfs: n, text })
}

/// Gaussian placeholder heatmap over `bounds`, peaking at 1.0 on the pixel
/// holding the detection. Row-major, `bounds.w * bounds.h` values.
pub fn saliency_map(det: &Detection, bounds: &Rect, sigma: f64) -> (Vec<f64>, (u32, u32)) {
    let px = (det.x.floor() - bounds.x as f64).clamp(0.0, bounds.w.saturating_sub(1) as f64) as u32;
    let py = (det.y.floor() - bounds.y as f64).clamp(0.0, bounds.h.saturating_sub(1) as f64) as u32;
    let k = 1.0 / (2.0 * sigma * sigma);
    let mut out = Vec::with_capacity(bounds.area() as usize);
    for y in 0..bounds.h {
        let dy = y as f64 - py as f64;
        for x in 0..bounds.w {
            let dx = x as f64 - px as f64;
            out.push((-(dx * dx + dy * dy) * k).exp());
        }
    }
    (out, (px, py))
}

pub fn explanation_card(det: &Detection, bounds: &Rect, cell_px: u32, cfg: &ExplainConfig) -> ExplanationPayload {
    let sigma = cell_px as f64 / 6.0;
    let (map, (peak_x, peak_y)) = saliency_map(det, bounds, sigma);
    let img = GrayImage::from_fn(bounds.w, bounds.h, |x, y| {
        Luma([(map[(y * bounds.w + x) as usize] * 255.0).round() as u8])
    });
    let mut png = Vec::new();
    img.write_to(&mut Cursor::new(&mut png), ImageFormat::Png).expect("in-memory PNG encoding");
    let confidence_label = cfg.confidence(det.prob);
    ExplanationPayload::Card(Card {
        prob: det.prob,
        confidence_label,
        text: format!("Probability = {:.2}, {}", det.prob, capitalize(&confidence_label.to_string())),
        saliency: Saliency { width: bounds.w, height: bounds.h, peak_x, peak_y, sigma, png: STANDARD.encode(png) },
        saliency_source: "placeholder".into(),
    })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
