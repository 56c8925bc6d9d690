//! Viewport transitions: free pan/zoom, zoom-to-recommendation and discrete
//! HPF-step panning. Every transition is a pure function so a recorded trace
//! can be replayed bit-for-bit.

mod cues;
mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slide::{HpfGrid, Rect};

pub use cues::{compute_cues, cue_hop, edge_intersection, perimeter_point, perimeter_position, Cue, CUE_SPACING};
pub use trace::{
    append_line, read_jsonl, replay, verify_replay, Action, Condition, EventKind, NavEvent, SessionMeta, SessionStatus, Trace,
};

/// Fraction of the shorter screen edge a selected recommendation fills.
pub const FILL_FRACTION: f64 = 0.9;

#[derive(Debug, Error)]
pub enum NavError {
    #[error("invalid viewport: {0}")]
    InvalidViewport(String),
    #[error("event at t={t} ms precedes the previous event at t={last} ms")]
    TimeRegression { t: u64, last: u64 },
    #[error("recommendation {0} is no longer ranked")]
    StaleRec(String),
    #[error("malformed event: {0}")]
    Malformed(String),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("replay diverges at event {index}")]
    ReplayMismatch { index: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    /// Level-0 centre.
    pub cx: f64,
    pub cy: f64,
    /// Level-0 pixels per screen pixel.
    pub scale: f64,
    pub screen_w: u32,
    pub screen_h: u32,
}

/// Axis-aligned rectangle in continuous level-0 coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl FRect {
    pub fn from_rect(r: &Rect) -> Self {
        FRect { x0: r.x as f64, y0: r.y as f64, x1: r.right() as f64, y1: r.bottom() as f64 }
    }

    /// Overlap extents along x and y (zero or negative when disjoint).
    pub fn overlap(&self, other: &FRect) -> (f64, f64) {
        (self.x1.min(other.x1) - self.x0.max(other.x0), self.y1.min(other.y1) - self.y0.max(other.y0))
    }

    pub fn intersects(&self, other: &FRect) -> bool {
        let (w, h) = self.overlap(other);
        w > 0.0 && h > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dir {
    N,
    S,
    E,
    W,
}

impl Dir {
    pub fn step(self) -> (i64, i64) {
        match self {
            Dir::N => (0, -1),
            Dir::S => (0, 1),
            Dir::E => (1, 0),
            Dir::W => (-1, 0),
        }
    }
}

impl Viewport {
    pub fn new(cx: f64, cy: f64, scale: f64, screen_w: u32, screen_h: u32) -> Result<Self, NavError> {
        let vp = Viewport { cx, cy, scale, screen_w, screen_h };
        vp.validate()?;
        Ok(vp)
    }

    pub fn validate(&self) -> Result<(), NavError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(NavError::InvalidViewport(format!("scale must be positive, got {}", self.scale)));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(NavError::InvalidViewport("centre must be finite".into()));
        }
        if self.screen_w == 0 || self.screen_h == 0 {
            return Err(NavError::InvalidViewport("screen must be non-empty".into()));
        }
        Ok(())
    }

    /// Viewport showing `bounds` centred at 90% of the shorter screen edge.
    pub fn fit(bounds: &Rect, screen_w: u32, screen_h: u32) -> Self {
        let (cx, cy) = bounds.center();
        let scale = bounds.w.max(bounds.h) as f64 / (FILL_FRACTION * screen_w.min(screen_h) as f64);
        Viewport { cx, cy, scale, screen_w, screen_h }
    }

    /// Visible level-0 rectangle, not clamped to the slide.
    pub fn visible(&self) -> FRect {
        let hw = self.scale * self.screen_w as f64 / 2.0;
        let hh = self.scale * self.screen_h as f64 / 2.0;
        FRect { x0: self.cx - hw, y0: self.cy - hh, x1: self.cx + hw, y1: self.cy + hh }
    }

    /// Level-0 extent of the shorter screen edge.
    pub fn field_of_view(&self) -> f64 {
        self.scale * self.screen_w.min(self.screen_h) as f64
    }

    pub fn to_screen(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.cx) / self.scale + self.screen_w as f64 / 2.0, (y - self.cy) / self.scale + self.screen_h as f64 / 2.0)
    }

    pub fn to_level0(&self, sx: f64, sy: f64) -> (f64, f64) {
        (self.cx + (sx - self.screen_w as f64 / 2.0) * self.scale, self.cy + (sy - self.screen_h as f64 / 2.0) * self.scale)
    }

    /// Translates the centre by a level-0 offset.
    pub fn pan(&self, dx: f64, dy: f64) -> Self {
        Viewport { cx: self.cx + dx, cy: self.cy + dy, ..*self }
    }

    /// Magnifies by `factor` (> 1 zooms in) keeping level-0 point `(ax, ay)` fixed on screen.
    pub fn zoom(&self, factor: f64, ax: f64, ay: f64) -> Result<Self, NavError> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(NavError::InvalidViewport(format!("zoom factor must be positive, got {factor}")));
        }
        Ok(Viewport {
            cx: ax + (self.cx - ax) / factor,
            cy: ay + (self.cy - ay) / factor,
            scale: self.scale / factor,
            ..*self
        })
    }
}

/// Zooms and centres on a recommendation's bounds.
pub fn select_recommendation(vp: &Viewport, bounds: &Rect) -> Viewport {
    Viewport::fit(bounds, vp.screen_w, vp.screen_h)
}

/// One HPF step in `dir`, snapped to the centre of the (slide-clipped) HPF cell
/// under the new centre. Steps past the slide edge stay in the edge cell.
pub fn adjacent_pan(vp: &Viewport, dir: Dir, hpf_px: u32, width0: u32, height0: u32) -> Viewport {
    let grid = HpfGrid::new(width0, height0, hpf_px);
    let (dx, dy) = dir.step();
    let tx = vp.cx + dx as f64 * hpf_px as f64;
    let ty = vp.cy + dy as f64 * hpf_px as f64;
    let col = (tx / hpf_px as f64).floor().clamp(0.0, grid.cols.saturating_sub(1) as f64) as u32;
    let row = (ty / hpf_px as f64).floor().clamp(0.0, grid.rows.saturating_sub(1) as f64) as u32;
    let (cx, cy) = grid.clamped_cell_rect(crate::slide::GridIndex::new(col, row)).center();
    Viewport { cx, cy, ..*vp }
}
