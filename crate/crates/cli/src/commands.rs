use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use navipath_core::evaluate::{run_agent, trial_metrics, AgentConfig, AgentKind, EvalConfig, EvalError, Report};
use navipath_core::navigate::{read_jsonl, NavError, SessionMeta};
use navipath_core::recommend::{recommend, RecConfig, RecError, Weights};
use navipath_core::scoring::{import_detections, score_slide, HeuristicScorer, ScoreGrid, ScoreOptions, ScoringError};
use navipath_core::slide::{generate_synthetic, GroundTruth, SlideError, SlideMeta, SyntheticSpec, TileStore};
use serde::Serialize;

/// Exit 1 for invalid input, 2 for filesystem trouble.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SlideError> for CliError {
    fn from(e: SlideError) -> Self {
        match e {
            SlideError::Io(_) | SlideError::MissingTile(_) => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<ScoringError> for CliError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::Slide(s) => s.into(),
            ScoringError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<NavError> for CliError {
    fn from(e: NavError) -> Self {
        match e {
            NavError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) => CliError::Io(e.to_string()),
            EvalError::Nav(n) => n.into(),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<RecError> for CliError {
    fn from(e: RecError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_slice(&read(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Writes JSON bytes to stdout followed by a newline.
pub fn emit(bytes: &[u8]) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn emit_value(v: &impl Serialize) -> Result<(), CliError> {
    emit(&serde_json::to_vec_pretty(v).expect("output serialises"))
}

#[derive(Serialize)]
struct GenSlideOut<'a> {
    slide_dir: PathBuf,
    meta: &'a SlideMeta,
    mitoses: usize,
}

pub fn gen_slide(spec: &Path, out: &Path) -> Result<(), CliError> {
    let spec: SyntheticSpec = parse(spec)?;
    let slide = generate_synthetic(&spec)?;
    let meta = slide.write(out)?;
    let n = slide.ground_truth.mitoses.len();
    eprintln!("wrote slide {} ({}x{}, {} levels, {n} mitoses) to {}", meta.id, meta.width0, meta.height0, meta.levels, out.display());
    emit_value(&GenSlideOut { slide_dir: out.join(&meta.id), meta: &meta, mitoses: n })
}

#[derive(Serialize)]
struct ScoreOut<'a> {
    slide_id: &'a str,
    scores: PathBuf,
    cols: u32,
    rows: u32,
    detections: usize,
    cells: u64,
}

pub fn score(slide: &Path, jobs: Option<usize>, detections: Option<&Path>) -> Result<(), CliError> {
    let store = TileStore::open(slide)?;
    let meta = SlideMeta::load(slide)?;
    let imported = detections.map(|p| import_detections(p, &meta)).transpose()?;
    let opts = ScoreOptions { jobs, ..ScoreOptions::default() };
    let grid = score_slide(&store, &HeuristicScorer::default(), imported.as_deref(), &opts)?;
    grid.save(slide)?;
    let n_det = grid.detections().count();
    let cells: u64 = grid.cells.iter().map(|c| c.cell_count as u64).sum();
    eprintln!("scored {}: {}x{} HPFs, {cells} nuclei, {n_det} mitosis candidates", meta.id, grid.cols, grid.rows);
    emit_value(&ScoreOut { slide_id: &meta.id, scores: slide.join("scores.json"), cols: grid.cols, rows: grid.rows, detections: n_det, cells })
}

#[derive(Serialize)]
struct SimulateOut {
    session_id: String,
    slide_id: String,
    agent: AgentKind,
    seed: u64,
    trace: PathBuf,
    report: PathBuf,
    events: usize,
    reports: usize,
    truncated: bool,
}

pub struct SimulateArgs<'a> {
    pub slide: &'a Path,
    pub agent: AgentKind,
    pub seed: u64,
    pub budget: Option<usize>,
    pub weights: Weights,
    pub out: Option<&'a Path>,
}

pub fn simulate(a: SimulateArgs<'_>) -> Result<(), CliError> {
    let meta = SlideMeta::load(a.slide)?;
    let grid = ScoreGrid::load(a.slide)?;
    let gt = GroundTruth::load(a.slide)?;
    let recs = recommend(&grid, &a.weights, &RecConfig::default())?;
    let cfg = AgentConfig { budget: a.budget, ..AgentConfig::new(a.agent, a.seed) };
    let run = run_agent(&cfg, &meta, &grid, Some(&recs), &gt)?;
    let out = a.out.map(Path::to_path_buf).unwrap_or_else(|| a.slide.join("simulations"));
    let mut session = SessionMeta::new(run.trace.session_id.clone(), meta.id.clone(), run.trace.condition, 0);
    session.weights = a.weights;
    run.trace.save(&out, &session)?;
    let id = &run.trace.session_id;
    let report_path = out.join(format!("{id}.report.json"));
    fs::write(&report_path, serde_json::to_vec_pretty(&run.report).expect("report serialises")).map_err(|e| io_err(&report_path, e))?;
    eprintln!(
        "{} seed {}: {} events, {} reports{}",
        a.agent,
        a.seed,
        run.trace.events.len(),
        run.report.points.len(),
        if run.truncated { ", truncated by budget" } else { "" }
    );
    emit_value(&SimulateOut {
        session_id: id.clone(),
        slide_id: meta.id,
        agent: a.agent,
        seed: a.seed,
        trace: out.join(format!("{id}.jsonl")),
        report: report_path,
        events: run.trace.events.len(),
        reports: run.report.points.len(),
        truncated: run.truncated,
    })
}

pub fn eval(slide: &Path, trace: &Path, report: &Path, epsilon: Option<f64>) -> Result<(), CliError> {
    let meta = SlideMeta::load(slide)?;
    let gt = GroundTruth::load(slide)?;
    let events = read_jsonl(trace).map_err(|e| match e {
        NavError::Io(io) => io_err(trace, io),
        other => other.into(),
    })?;
    let sidecar = trace.with_extension("json");
    if sidecar.is_file() {
        let session = SessionMeta::load(&sidecar)?;
        if session.slide_id != meta.id {
            return Err(CliError::Invalid(format!("trace is for slide `{}` but --slide is `{}`", session.slide_id, meta.id)));
        }
    }
    let report: Report = parse(report)?;
    if let Some(id) = report.slide_id.as_deref().filter(|id| *id != meta.id) {
        return Err(CliError::Invalid(format!("report is for slide `{id}` but --slide is `{}`", meta.id)));
    }
    let mut cfg = EvalConfig::default();
    if let Some(e) = epsilon {
        if !(e > 0.0) {
            return Err(CliError::Invalid(format!("--epsilon must be positive, got {e}")));
        }
        cfg.epsilon = e;
    }
    let m = trial_metrics(&events, &report, &gt, &meta, &cfg)?;
    eprintln!(
        "precision {:.3}, recall {:.3}, {} of {} mitoses seen in {:.1} s over {} HPFs ({:.3}/HPF)",
        m.precision, m.recall, m.seen_mitoses, m.n_gt, m.duration_s, m.visited_hpfs, m.visited_mr_hpf
    );
    emit(&m.to_json())
}

pub fn serve(data_dir: PathBuf, port: u16) -> Result<(), CliError> {
    let mut config = navipath_service::Config::new(data_dir);
    config.port = port;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(navipath_service::serve(config, |addr| {
        eprintln!("listening on http://{addr}");
        #[derive(Serialize)]
        struct Listening {
            address: String,
            port: u16,
        }
        let line = serde_json::to_vec(&Listening { address: addr.to_string(), port: addr.port() }).expect("address serialises");
        let _ = emit(&line);
    }))?;
    Ok(())
}
