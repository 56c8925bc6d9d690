//! Simulated readers that produce traces and reports under a fixed time-cost model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{Report, ReportPoint};
use super::EvalError;
use crate::navigate::{compute_cues, Action, Condition, Dir, NavEvent, Trace, Viewport, FILL_FRACTION};
use crate::recommend::{HpfNode, Level, RecommendationSet};
use crate::scoring::ScoreGrid;
use crate::slide::{GridIndex, GroundTruth, HpfGrid, Rect, SlideMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// Lawnmower over tissue at HPF scale, ignoring recommendations.
    Systematic,
    /// Local, HPF, back to the Local, next HPF.
    Diving,
    /// Lawnmower over a Local's HPFs using edge pans.
    AdjacentPanning,
    /// HPF to HPF by the lowest-index cue.
    CueHopping,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [AgentKind::Systematic, AgentKind::Diving, AgentKind::AdjacentPanning, AgentKind::CueHopping];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Systematic => "systematic",
            AgentKind::Diving => "diving",
            AgentKind::AdjacentPanning => "adjacent_panning",
            AgentKind::CueHopping => "cue_hopping",
        }
    }

    pub fn uses_recommendations(self) -> bool {
        self != AgentKind::Systematic
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| EvalError::Invalid(format!("unknown agent `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub seed: u64,
    /// Maximum number of events, the opening overview included.
    pub budget: Option<usize>,
    /// Simulated time per event.
    pub event_cost_ms: u64,
    /// Chance that an examined mitosis gets reported.
    pub detection_prob: f64,
    pub screen_w: u32,
    pub screen_h: u32,
    pub hpf_px: u32,
}

impl AgentConfig {
    pub fn new(kind: AgentKind, seed: u64) -> Self {
        AgentConfig {
            kind,
            seed,
            budget: None,
            event_cost_ms: 1500,
            detection_prob: 0.8,
            screen_w: 1000,
            screen_h: 1000,
            hpf_px: 1680,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.budget == Some(0) {
            return Err(EvalError::Invalid("budget must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.detection_prob) {
            return Err(EvalError::Invalid(format!("detection_prob {} outside [0, 1]", self.detection_prob)));
        }
        if self.event_cost_ms == 0 || self.screen_w == 0 || self.screen_h == 0 || self.hpf_px == 0 {
            return Err(EvalError::Invalid("event cost, screen and hpf_px must be positive".into()));
        }
        Ok(())
    }

    pub fn session_id(&self) -> String {
        format!("sim-{}-{}", self.kind, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    pub trace: Trace,
    pub report: Report,
    /// The budget ran out before the agent finished.
    pub truncated: bool,
}

/// Signals that the budget is spent; unwinds the agent's plan.
struct Exhausted;

struct Runner<'a> {
    cfg: &'a AgentConfig,
    meta: &'a SlideMeta,
    gt: &'a GroundTruth,
    /// Ground-truth offsets per HPF cell.
    gt_cells: BTreeMap<GridIndex, Vec<usize>>,
    examined: Vec<bool>,
    rng: ChaCha8Rng,
    events: Vec<NavEvent>,
    vp: Viewport,
    report: Report,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a AgentConfig, meta: &'a SlideMeta, gt: &'a GroundTruth) -> Self {
        let grid = HpfGrid::for_meta(meta, cfg.hpf_px);
        let mut gt_cells: BTreeMap<GridIndex, Vec<usize>> = BTreeMap::new();
        for (i, p) in gt.mitoses.iter().enumerate() {
            if let Some(c) = grid.cell_of(p.x as f64, p.y as f64) {
                gt_cells.entry(c).or_default().push(i);
            }
        }
        Runner {
            cfg,
            meta,
            gt,
            gt_cells,
            examined: vec![false; gt.mitoses.len()],
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            events: Vec::new(),
            vp: Viewport::fit(&meta.bounds(), cfg.screen_w, cfg.screen_h),
            report: Report { slide_id: Some(meta.id.clone()), points: Vec::new() },
        }
    }

    fn act(&mut self, action: Action) -> Result<(), Exhausted> {
        if self.cfg.budget.is_some_and(|b| self.events.len() >= b) {
            return Err(Exhausted);
        }
        if !self.events.is_empty() {
            self.vp = action.apply(&self.vp, self.meta.width0, self.meta.height0).expect("agent actions are valid");
        }
        let t = self.events.len() as u64 * self.cfg.event_cost_ms;
        self.events.push(NavEvent { t, viewport: self.vp, action });
        Ok(())
    }

    fn overview(&mut self) -> Result<(), Exhausted> {
        let (ax, ay) = (self.vp.cx, self.vp.cy);
        self.act(Action::Zoom { factor: 1.0, ax, ay })
    }

    /// Rolls once for each not yet examined mitosis in `cell` accepted by
    /// `visible`, reporting the detected ones.
    fn examine(&mut self, cell: GridIndex, visible: impl Fn(f64, f64) -> bool) -> Result<(), Exhausted> {
        let Some(ids) = self.gt_cells.get(&cell).cloned() else {
            return Ok(());
        };
        for i in ids {
            let p = self.gt.mitoses[i];
            let (x, y) = (p.x as f64, p.y as f64);
            if self.examined[i] || !visible(x, y) {
                continue;
            }
            self.examined[i] = true;
            if self.rng.random::<f64>() < self.cfg.detection_prob {
                self.act(Action::ReportMitosis { x, y })?;
                let t = self.events.last().expect("just pushed").t;
                self.report.points.push(ReportPoint { x, y, t });
            }
        }
        Ok(())
    }

    fn examine_hpf(&mut self, node: &HpfNode) -> Result<(), Exhausted> {
        let cells: Vec<Rect> = node.cells.iter().map(|c| c.bounds).collect();
        let cell = GridIndex::new(node.rec.bounds.x / self.cfg.hpf_px, node.rec.bounds.y / self.cfg.hpf_px);
        self.examine(cell, |x, y| cells.iter().any(|r| r.contains(x, y)))
    }

    fn select(&mut self, rec: &crate::recommend::Recommendation) -> Result<(), Exhausted> {
        self.act(Action::SelectRec { rec_id: rec.id.clone(), level: rec.level, bounds: rec.bounds })
    }

    /// CueHop when the target has a cue from the current view, else SelectRec.
    fn hop_or_select(&mut self, target: &HpfNode, pending: &[&HpfNode]) -> Result<(), Exhausted> {
        let recs: Vec<_> = pending.iter().map(|h| h.rec.clone()).collect();
        let cue = compute_cues(&self.vp, &recs).into_iter().find(|c| c.rec_id == target.rec.id);
        match cue {
            Some(c) => self.act(Action::CueHop { rec_id: c.rec_id, index: c.index, bounds: target.rec.bounds }),
            None => self.select(&target.rec),
        }
    }

    fn systematic(&mut self, grid: &ScoreGrid) -> Result<(), Exhausted> {
        let layout = grid.layout();
        let hpf_scale = self.cfg.hpf_px as f64 / (FILL_FRACTION * self.cfg.screen_w.min(self.cfg.screen_h) as f64);
        let mut first = true;
        for row in 0..layout.rows {
            let cols: Vec<u32> = if row % 2 == 0 { (0..layout.cols).collect() } else { (0..layout.cols).rev().collect() };
            for col in cols {
                let idx = GridIndex::new(col, row);
                if grid.get(idx).is_none_or(|c| c.cell_count == 0) {
                    continue;
                }
                let (tx, ty) = layout.clamped_cell_rect(idx).center();
                self.act(Action::Pan { dx: tx - self.vp.cx, dy: ty - self.vp.cy })?;
                if first {
                    first = false;
                    let (ax, ay) = (self.vp.cx, self.vp.cy);
                    self.act(Action::Zoom { factor: self.vp.scale / hpf_scale, ax, ay })?;
                }
                self.examine(idx, |_, _| true)?;
            }
        }
        Ok(())
    }

    fn diving(&mut self, recs: &RecommendationSet) -> Result<(), Exhausted> {
        for local in &recs.locals {
            self.select(&local.rec)?;
            for (k, hpf) in local.hpfs.iter().enumerate() {
                if k > 0 {
                    self.select(&local.rec)?;
                }
                self.select(&hpf.rec)?;
                self.examine_hpf(hpf)?;
            }
        }
        Ok(())
    }

    fn adjacent_panning(&mut self, recs: &RecommendationSet) -> Result<(), Exhausted> {
        let px = self.cfg.hpf_px;
        let pos = |h: &HpfNode| (h.rec.bounds.x / px, h.rec.bounds.y / px);
        for local in &recs.locals {
            self.select(&local.rec)?;
            let mut order: Vec<&HpfNode> = local.hpfs.iter().collect();
            order.sort_by_key(|h| {
                let (c, r) = pos(h);
                (r, if r % 2 == 0 { c as i64 } else { -(c as i64) })
            });
            for k in 0..order.len() {
                let target = order[k];
                let step = (k > 0).then(|| {
                    let ((c0, r0), (c1, r1)) = (pos(order[k - 1]), pos(target));
                    match (c1 as i64 - c0 as i64, r1 as i64 - r0 as i64) {
                        (1, 0) => Some(Dir::E),
                        (-1, 0) => Some(Dir::W),
                        (0, 1) => Some(Dir::S),
                        (0, -1) => Some(Dir::N),
                        _ => None,
                    }
                });
                match step.flatten() {
                    Some(dir) => self.act(Action::EdgePan { dir, hpf_px: px })?,
                    None if k == 0 => self.select(&target.rec)?,
                    None => self.hop_or_select(target, &order[k..])?,
                }
                self.examine_hpf(target)?;
            }
        }
        Ok(())
    }

    fn cue_hopping(&mut self, recs: &RecommendationSet) -> Result<(), Exhausted> {
        for local in &recs.locals {
            self.select(&local.rec)?;
            let mut pending: Vec<&HpfNode> = local.hpfs.iter().collect();
            pending.sort_by_key(|h| h.rec.index);
            let mut first = true;
            while !pending.is_empty() {
                let target = pending[0];
                if first {
                    self.select(&target.rec)?;
                    first = false;
                } else {
                    self.hop_or_select(target, &pending)?;
                }
                self.examine_hpf(target)?;
                pending.remove(0);
            }
        }
        Ok(())
    }
}

/// Runs one simulated reader. Recommendation-following agents need `recs`.
pub fn run_agent(
    cfg: &AgentConfig,
    meta: &SlideMeta,
    grid: &ScoreGrid,
    recs: Option<&RecommendationSet>,
    gt: &GroundTruth,
) -> Result<AgentRun, EvalError> {
    cfg.validate()?;
    if grid.slide_id != meta.id || gt.slide_id != meta.id || recs.is_some_and(|r| r.slide_id != meta.id) {
        return Err(EvalError::SlideMismatch);
    }
    let recs = match (cfg.kind.uses_recommendations(), recs) {
        (true, None) => return Err(EvalError::Invalid(format!("agent {} needs recommendations", cfg.kind))),
        (_, r) => r,
    };
    let mut runner = Runner::new(cfg, meta, gt);
    let outcome = runner.overview().and_then(|_| match (cfg.kind, recs) {
        (AgentKind::Diving, Some(r)) => runner.diving(r),
        (AgentKind::AdjacentPanning, Some(r)) => runner.adjacent_panning(r),
        (AgentKind::CueHopping, Some(r)) => runner.cue_hopping(r),
        _ => runner.systematic(grid),
    });
    let condition = if cfg.kind.uses_recommendations() { Condition::Navipath } else { Condition::Manual };
    let mut trace = Trace::new(cfg.session_id(), meta.id.clone(), condition);
    trace.events = runner.events;
    Ok(AgentRun { trace, report: runner.report, truncated: outcome.is_err() })
}

/// HPF cells, in visit order, where an agent's trace dwells at HPF scale.
pub fn hpf_visits(events: &[NavEvent], hpf_px: u32) -> Vec<GridIndex> {
    let mut out = Vec::new();
    for ev in events {
        let v = &ev.viewport;
        if v.field_of_view() <= hpf_px as f64 / FILL_FRACTION * (1.0 + 1e-9) && !matches!(ev.action, Action::ReportMitosis { .. }) {
            out.push(GridIndex::new((v.cx / hpf_px as f64).floor() as u32, (v.cy / hpf_px as f64).floor() as u32));
        }
    }
    out
}

/// Levels of the recommendations selected, in order.
pub fn selected_levels(events: &[NavEvent]) -> Vec<Level> {
    events
        .iter()
        .filter_map(|e| match &e.action {
            Action::SelectRec { level, .. } => Some(*level),
            Action::CueHop { .. } => Some(Level::Hpf),
            _ => None,
        })
        .collect()
}

/// Distinct tissue cells of a score grid.
pub fn tissue_cells(grid: &ScoreGrid) -> BTreeSet<GridIndex> {
    grid.layout().iter().filter(|&i| grid.get(i).is_some_and(|c| c.cell_count > 0)).collect()
}
