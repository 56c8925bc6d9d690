//! Navigation events, traces and their JSON-lines persistence.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{adjacent_pan, select_recommendation, Dir, NavError, Viewport};
use crate::recommend::{Level, Weights};
use crate::slide::Rect;
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Pan,
    Zoom,
    SelectRec,
    EdgePan,
    CueHop,
    ReportMitosis,
    WeightsChange,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::Pan,
        EventKind::Zoom,
        EventKind::SelectRec,
        EventKind::EdgePan,
        EventKind::CueHop,
        EventKind::ReportMitosis,
        EventKind::WeightsChange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Pan => "pan",
            EventKind::Zoom => "zoom",
            EventKind::SelectRec => "select_rec",
            EventKind::EdgePan => "edge_pan",
            EventKind::CueHop => "cue_hop",
            EventKind::ReportMitosis => "report_mitosis",
            EventKind::WeightsChange => "weights_change",
        }
    }
}

/// What the user did; the payload of a [`NavEvent`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Action {
    /// Level-0 translation of the centre.
    Pan { dx: f64, dy: f64 },
    /// Magnification about a level-0 anchor; `factor > 1` zooms in.
    Zoom { factor: f64, ax: f64, ay: f64 },
    SelectRec { rec_id: String, level: Level, bounds: Rect },
    EdgePan { dir: Dir, hpf_px: u32 },
    CueHop { rec_id: String, index: u32, bounds: Rect },
    ReportMitosis { x: f64, y: f64 },
    WeightsChange { weights: Weights },
}

impl Action {
    pub fn kind(&self) -> EventKind {
        match self {
            Action::Pan { .. } => EventKind::Pan,
            Action::Zoom { .. } => EventKind::Zoom,
            Action::SelectRec { .. } => EventKind::SelectRec,
            Action::EdgePan { .. } => EventKind::EdgePan,
            Action::CueHop { .. } => EventKind::CueHop,
            Action::ReportMitosis { .. } => EventKind::ReportMitosis,
            Action::WeightsChange { .. } => EventKind::WeightsChange,
        }
    }

    /// Viewport after applying this action to `vp`.
    pub fn apply(&self, vp: &Viewport, width0: u32, height0: u32) -> Result<Viewport, NavError> {
        Ok(match self {
            Action::Pan { dx, dy } => vp.pan(*dx, *dy),
            Action::Zoom { factor, ax, ay } => vp.zoom(*factor, *ax, *ay)?,
            Action::SelectRec { bounds, .. } | Action::CueHop { bounds, .. } => select_recommendation(vp, bounds),
            Action::EdgePan { dir, hpf_px } => {
                if *hpf_px == 0 {
                    return Err(NavError::Malformed("edge_pan hpf_px must be positive".into()));
                }
                adjacent_pan(vp, *dir, *hpf_px, width0, height0)
            }
            Action::ReportMitosis { .. } | Action::WeightsChange { .. } => *vp,
        })
    }
}

/// One persisted line: `{"t":..,"kind":..,"viewport":{..},"payload":{..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvent", into = "RawEvent")]
pub struct NavEvent {
    /// Milliseconds since session start.
    pub t: u64,
    /// Viewport after the action.
    pub viewport: Viewport,
    pub action: Action,
}

#[derive(Serialize, Deserialize)]
struct RawEvent {
    t: u64,
    kind: EventKind,
    viewport: Viewport,
    #[serde(default)]
    payload: serde_json::Value,
}

impl From<NavEvent> for RawEvent {
    fn from(ev: NavEvent) -> Self {
        let kind = ev.action.kind();
        let payload = match serde_json::to_value(&ev.action) {
            Ok(serde_json::Value::Object(mut m)) => m.remove("payload").unwrap_or(serde_json::Value::Null),
            _ => serde_json::Value::Null,
        };
        RawEvent { t: ev.t, kind, viewport: ev.viewport, payload }
    }
}

impl TryFrom<RawEvent> for NavEvent {
    type Error = NavError;

    fn try_from(raw: RawEvent) -> Result<Self, NavError> {
        raw.viewport.validate()?;
        let tagged = serde_json::json!({ "kind": raw.kind, "payload": raw.payload });
        let action: Action =
            serde_json::from_value(tagged).map_err(|e| NavError::Malformed(format!("{} payload: {e}", raw.kind.as_str())))?;
        Ok(NavEvent { t: raw.t, viewport: raw.viewport, action })
    }
}

impl NavEvent {
    pub fn kind(&self) -> EventKind {
        self.action.kind()
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events serialise")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Manual,
    Navipath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Closed,
}

/// Sidecar `<session_id>.json` next to the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub format_version: u32,
    pub id: String,
    pub slide_id: String,
    pub condition: Condition,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub weights: Weights,
    pub status: SessionStatus,
}

impl SessionMeta {
    pub fn new(id: impl Into<String>, slide_id: impl Into<String>, condition: Condition, created_at: u64) -> Self {
        SessionMeta {
            format_version: FORMAT_VERSION,
            id: id.into(),
            slide_id: slide_id.into(),
            condition,
            created_at,
            weights: Weights::default(),
            status: SessionStatus::Active,
        }
    }

    pub fn load(path: &Path) -> Result<Self, NavError> {
        let meta: SessionMeta = serde_json::from_slice(&fs::read(path)?)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(NavError::Malformed(format!("unsupported format_version {}", meta.format_version)));
        }
        Ok(meta)
    }

    pub fn save(&self, path: &Path) -> Result<(), NavError> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub session_id: String,
    pub slide_id: String,
    pub condition: Condition,
    pub events: Vec<NavEvent>,
}

impl Trace {
    pub fn new(session_id: impl Into<String>, slide_id: impl Into<String>, condition: Condition) -> Self {
        Trace { session_id: session_id.into(), slide_id: slide_id.into(), condition, events: Vec::new() }
    }

    /// Appends an event, rejecting time regressions.
    pub fn append_event(&mut self, ev: NavEvent) -> Result<(), NavError> {
        check_order(self.events.last(), &ev)?;
        self.events.push(ev);
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for ev in &self.events {
            out.extend_from_slice(ev.to_line().as_bytes());
            out.push(b'\n');
        }
        out
    }

    /// Writes `<dir>/<session_id>.jsonl` and its `<session_id>.json` sidecar.
    pub fn save(&self, dir: &Path, meta: &SessionMeta) -> Result<(), NavError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{}.jsonl", self.session_id)), self.to_jsonl())?;
        meta.save(&dir.join(format!("{}.json", self.session_id)))
    }

    /// Loads a trace file, taking identity from the sidecar next to it.
    pub fn load(path: &Path) -> Result<(Self, SessionMeta), NavError> {
        let meta = SessionMeta::load(&path.with_extension("json"))?;
        let events = read_jsonl(path)?;
        let mut trace = Trace::new(meta.id.clone(), meta.slide_id.clone(), meta.condition);
        for ev in events {
            trace.append_event(ev)?;
        }
        Ok((trace, meta))
    }
}

fn check_order(last: Option<&NavEvent>, ev: &NavEvent) -> Result<(), NavError> {
    match last {
        Some(prev) if ev.t < prev.t => Err(NavError::TimeRegression { t: ev.t, last: prev.t }),
        _ => Ok(()),
    }
}

/// Appends one event line to an open trace file.
pub fn append_line(file: &mut impl Write, ev: &NavEvent) -> Result<(), NavError> {
    writeln!(file, "{}", ev.to_line())?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<NavEvent>, NavError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: NavEvent = serde_json::from_str(&line).map_err(|e| NavError::Malformed(format!("line {}: {e}", n + 1)))?;
        out.push(ev);
    }
    Ok(out)
}

/// Recomputes the viewport sequence: the first event's viewport is taken as
/// given, each later one is its action applied to the previous viewport.
pub fn replay(events: &[NavEvent], width0: u32, height0: u32) -> Result<Vec<Viewport>, NavError> {
    let first = events.first().ok_or(NavError::EmptyTrace)?;
    let mut out = Vec::with_capacity(events.len());
    out.push(first.viewport);
    for pair in events.windows(2) {
        check_order(Some(&pair[0]), &pair[1])?;
        let prev = *out.last().expect("non-empty");
        out.push(pair[1].action.apply(&prev, width0, height0)?);
    }
    Ok(out)
}

/// Replays and checks every recorded viewport is reproduced exactly.
pub fn verify_replay(events: &[NavEvent], width0: u32, height0: u32) -> Result<Viewport, NavError> {
    let vps = replay(events, width0, height0)?;
    for (index, (ev, vp)) in events.iter().zip(&vps).enumerate() {
        if ev.viewport != *vp {
            return Err(NavError::ReplayMismatch { index });
        }
    }
    Ok(*vps.last().expect("non-empty"))
}
