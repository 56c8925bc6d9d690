use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use navipath_core::evaluate::EvalError;
use navipath_core::navigate::NavError;
use navipath_core::recommend::RecError;
use navipath_core::scoring::ScoringError;
use navipath_core::slide::SlideError;
use navipath_core::FORMAT_VERSION;
use serde::Serialize;

/// Error body: `{"format_version": 1, "error": "..."}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    format_version: u32,
    error: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { format_version: FORMAT_VERSION, error: &self.message };
        (self.status, axum::Json(body)).into_response()
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::internal(format!("io: {e}"))
    }
}

impl From<SlideError> for ApiError {
    fn from(e: SlideError) -> Self {
        match e {
            SlideError::TileNotFound { .. } | SlideError::MissingTile(_) => ApiError::not_found(e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<ScoringError> for ApiError {
    fn from(e: ScoringError) -> Self {
        ApiError::internal(e.to_string())
    }
}

impl From<RecError> for ApiError {
    fn from(e: RecError) -> Self {
        ApiError::bad_request(e.to_string())
    }
}

impl From<NavError> for ApiError {
    fn from(e: NavError) -> Self {
        match e {
            NavError::TimeRegression { .. } => ApiError::conflict(e.to_string()),
            NavError::Io(_) => ApiError::internal(e.to_string()),
            _ => ApiError::bad_request(e.to_string()),
        }
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::EmptyTrace | EvalError::TooShort(_) => ApiError::conflict(e.to_string()),
            EvalError::Io(_) => ApiError::internal(e.to_string()),
            _ => ApiError::bad_request(e.to_string()),
        }
    }
}
