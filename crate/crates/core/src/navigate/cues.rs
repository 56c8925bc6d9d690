//! Direction-only cues on the viewport edge pointing at off-screen HPF
//! recommendations.

use serde::{Deserialize, Serialize};

use super::{select_recommendation, FRect, NavError, Viewport};
use crate::recommend::{Level, Recommendation};

/// Minimum distance, in screen pixels, between two placed cues.
pub const CUE_SPACING: f64 = 16.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cue {
    pub rec_id: String,
    pub index: u32,
    /// Where the centre-to-target segment leaves the screen.
    pub anchor: (f64, f64),
    /// Placed position after collision offsetting; always on the boundary.
    pub edge_point: (f64, f64),
    /// Unit vector from the screen centre toward the target centre.
    pub direction: (f64, f64),
}

/// Point where the ray from the screen centre along `(dx, dy)` meets the
/// `w x h` screen boundary. The coordinate on the hit edge is set exactly.
pub fn edge_intersection(w: f64, h: f64, dx: f64, dy: f64) -> (f64, f64) {
    let (hw, hh) = (w / 2.0, h / 2.0);
    let tx = if dx != 0.0 { hw / dx.abs() } else { f64::INFINITY };
    let ty = if dy != 0.0 { hh / dy.abs() } else { f64::INFINITY };
    if tx <= ty {
        let x = if dx > 0.0 { w } else { 0.0 };
        (x, (hh + tx * dy).clamp(0.0, h))
    } else {
        let y = if dy > 0.0 { h } else { 0.0 };
        ((hw + ty * dx).clamp(0.0, w), y)
    }
}

/// Clockwise arc length from the top-left corner to a boundary point.
pub fn perimeter_position(p: (f64, f64), w: f64, h: f64) -> f64 {
    let (x, y) = p;
    if y == 0.0 && x < w {
        x
    } else if x == w && y < h {
        w + y
    } else if y == h && x > 0.0 {
        w + h + (w - x)
    } else {
        2.0 * w + h + (h - y)
    }
}

/// Inverse of [`perimeter_position`], wrapping around the perimeter.
pub fn perimeter_point(s: f64, w: f64, h: f64) -> (f64, f64) {
    let s = s.rem_euclid(2.0 * (w + h));
    if s < w {
        (s, 0.0)
    } else if s < w + h {
        (w, s - w)
    } else if s < 2.0 * w + h {
        (w - (s - w - h), h)
    } else {
        (0.0, (h - (s - 2.0 * w - h)).max(0.0))
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// One cue per HPF recommendation with no visible overlap. Cues are placed in
/// ascending index order; a cue within [`CUE_SPACING`] of an already placed one
/// slides clockwise along the edge in [`CUE_SPACING`] steps. Cues are never dropped.
pub fn compute_cues(vp: &Viewport, recs: &[Recommendation]) -> Vec<Cue> {
    let visible = vp.visible();
    let (w, h) = (vp.screen_w as f64, vp.screen_h as f64);
    let mut targets: Vec<&Recommendation> = recs
        .iter()
        .filter(|r| r.level == Level::Hpf && !FRect::from_rect(&r.bounds).intersects(&visible))
        .collect();
    targets.sort_by(|a, b| a.index.cmp(&b.index).then_with(|| a.id.cmp(&b.id)));

    let perimeter = 2.0 * (w + h);
    let max_steps = (perimeter / CUE_SPACING).ceil() as usize;
    let mut out: Vec<Cue> = Vec::with_capacity(targets.len());
    for rec in targets {
        let (rx, ry) = rec.bounds.center();
        let (sx, sy) = vp.to_screen(rx, ry);
        let (dx, dy) = (sx - w / 2.0, sy - h / 2.0);
        let norm = (dx * dx + dy * dy).sqrt();
        let anchor = edge_intersection(w, h, dx, dy);
        let mut s = perimeter_position(anchor, w, h);
        let mut point = anchor;
        for _ in 0..max_steps {
            if out.iter().all(|c| dist(c.edge_point, point) >= CUE_SPACING) {
                break;
            }
            s += CUE_SPACING;
            point = perimeter_point(s, w, h);
        }
        out.push(Cue {
            rec_id: rec.id.clone(),
            index: rec.index,
            anchor,
            edge_point: point,
            direction: (dx / norm, dy / norm),
        });
    }
    out
}

/// Selects the HPF recommendation a cue points at.
pub fn cue_hop(vp: &Viewport, cue: &Cue, recs: &[Recommendation]) -> Result<Viewport, NavError> {
    recs.iter()
        .find(|r| r.level == Level::Hpf && r.id == cue.rec_id)
        .map(|r| select_recommendation(vp, &r.bounds))
        .ok_or_else(|| NavError::StaleRec(cue.rec_id.clone()))
}
