//! Trial measurement: report matching, visited-region rates and simulated readers.

mod agents;
mod matching;
mod metrics;

pub use agents::{hpf_visits, run_agent, selected_levels, tissue_cells, AgentConfig, AgentKind, AgentRun};
pub use matching::{f1, match_points, MatchPair, MatchResult, DEFAULT_EPSILON};
pub use metrics::{
    ai_only_metrics, region_area_mm2, summary_row, trial_metrics, visited_cells, visited_region, write_summary, AiMetrics,
    EvalConfig, Report, ReportPoint, TrialMetrics, SUMMARY_COLUMNS,
};

use crate::navigate::NavError;
use crate::slide::GroundTruth;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace lasts {0} s; at least 1 s is required")]
    TooShort(f64),
    #[error("report, trace and ground truth refer to different slides")]
    SlideMismatch,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Matches a report against ground truth.
pub fn match_reports(report: &Report, gt: &GroundTruth, epsilon: f64) -> Result<MatchResult, EvalError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(EvalError::Invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if report.slide_id.as_deref().is_some_and(|id| id != gt.slide_id) {
        return Err(EvalError::SlideMismatch);
    }
    Ok(match_points(&report.xy(), &gt.points(), epsilon))
}
