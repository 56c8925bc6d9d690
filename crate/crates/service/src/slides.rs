use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use navipath_core::recommend::{recommend, Weights};
use navipath_core::scoring::ScoreGrid;
use navipath_core::slide::{GroundTruth, SlideMeta, TileStore};
use navipath_core::FORMAT_VERSION;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{check_id, slide_dir, versioned, ApiError, AppState, SlideData, Versioned};

pub(crate) fn load_slide(state: &AppState, id: &str) -> Result<Arc<SlideData>, ApiError> {
    check_id(id)?;
    if let Some(s) = state.slides.read().expect("slide cache").get(id) {
        return Ok(s.clone());
    }
    let dir = slide_dir(&state.config.slides_dir(), id);
    if !dir.join("meta.json").is_file() {
        return Err(ApiError::not_found(format!("unknown slide `{id}`")));
    }
    let meta = SlideMeta::load(&dir)?;
    let scores = if dir.join("scores.json").is_file() { Some(Arc::new(ScoreGrid::load(&dir)?)) } else { None };
    let ground_truth = if dir.join("ground_truth.json").is_file() { Some(Arc::new(GroundTruth::load(&dir)?)) } else { None };
    let data = Arc::new(SlideData { meta, scores, ground_truth });
    state.slides.write().expect("slide cache").insert(id.to_string(), data.clone());
    Ok(data)
}

#[derive(Serialize)]
pub(crate) struct SlideList {
    slides: Vec<SlideMeta>,
}

pub(crate) async fn list(State(state): State<Arc<AppState>>) -> Result<Json<Versioned<SlideList>>, ApiError> {
    let mut slides = Vec::new();
    let root = state.config.slides_dir();
    if root.is_dir() {
        for entry in std::fs::read_dir(&root)? {
            let entry = entry?;
            if entry.path().join("meta.json").is_file() {
                slides.push(SlideMeta::load(&entry.path())?);
            }
        }
    }
    slides.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Json(versioned(SlideList { slides })))
}

pub(crate) async fn meta(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Versioned<SlideMeta>>, ApiError> {
    Ok(Json(versioned(load_slide(&state, &id)?.meta.clone())))
}

fn parse_tile(name: &str) -> Option<(u32, u32)> {
    let (col, row) = name.strip_suffix(".png")?.split_once('_')?;
    Some((col.parse().ok()?, row.parse().ok()?))
}

pub(crate) async fn tile(
    State(state): State<Arc<AppState>>,
    Path((id, level, name)): Path<(String, u32, String)>,
) -> Result<Response, ApiError> {
    let slide = load_slide(&state, &id)?;
    let (col, row) = parse_tile(&name).ok_or_else(|| ApiError::not_found(format!("no tile `{name}`")))?;
    let (cols, rows) = if level < slide.meta.levels { slide.meta.tile_grid(level) } else { (0, 0) };
    if col >= cols || row >= rows {
        return Err(ApiError::not_found(format!("no tile {level}/{col}_{row}")));
    }
    let store = TileStore::open(slide_dir(&state.config.slides_dir(), &id))?;
    let bytes = store.tile_bytes(level, col, row)?;
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (header::CACHE_CONTROL, HeaderValue::from_static("public, max-age=86400")),
            (header::HeaderName::from_static("x-format-version"), HeaderValue::from(FORMAT_VERSION)),
        ],
        bytes,
    )
        .into_response())
}

/// Weights from the query string; missing keys take their defaults.
pub(crate) fn parse_weights(q: &HashMap<String, String>) -> Result<Weights, ApiError> {
    let d = Weights::default();
    let get = |k: &str, default: f64| -> Result<f64, ApiError> {
        match q.get(k) {
            None => Ok(default),
            Some(v) => v.parse::<f64>().map_err(|_| ApiError::bad_request(format!("{k} must be a number, got `{v}`"))),
        }
    };
    let w = Weights {
        w_cell: get("w_cell", d.w_cell)?,
        w_prolif: get("w_prolif", d.w_prolif)?,
        w_mitosis: get("w_mitosis", d.w_mitosis)?,
        sensitivity: get("sensitivity", d.sensitivity)?,
    };
    w.validate()?;
    Ok(w)
}

pub(crate) fn etag(body: &[u8]) -> String {
    format!("\"{}\"", hex::encode(Sha256::digest(body)))
}

pub(crate) async fn recommendations(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let slide = load_slide(&state, &id)?;
    let weights = parse_weights(&q)?;
    let grid = slide.scores.as_ref().ok_or_else(|| ApiError::not_found(format!("slide `{id}` has not been scored")))?;
    let body = recommend(grid, &weights, &state.config.rec)?.to_json();
    let tag = etag(&body);
    let tag_value = HeaderValue::from_str(&tag).expect("hex etag");
    if headers.get(header::IF_NONE_MATCH).is_some_and(|v| v.as_bytes() == tag.as_bytes()) {
        return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, tag_value)]).into_response());
    }
    Ok((
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json")), (header::ETAG, tag_value)],
        body,
    )
        .into_response())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_names() {
        assert_eq!(parse_tile("3_14.png"), Some((3, 14)));
        assert_eq!(parse_tile("3_14.jpg"), None);
        assert_eq!(parse_tile("3-14.png"), None);
        assert_eq!(parse_tile("_1.png"), None);
    }

    #[test]
    fn weight_query() {
        let q = |pairs: &[(&str, &str)]| pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect::<HashMap<_, _>>();
        assert_eq!(parse_weights(&q(&[])).unwrap(), Weights::default());
        let w = parse_weights(&q(&[("w_cell", "0"), ("sensitivity", "1")])).unwrap();
        assert_eq!((w.w_cell, w.w_prolif, w.sensitivity), (0.0, 1.0, 1.0));
        assert!(parse_weights(&q(&[("w_mitosis", "1.5")])).is_err());
        assert!(parse_weights(&q(&[("w_mitosis", "x")])).is_err());
        assert!(parse_weights(&q(&[("sensitivity", "-0.1")])).is_err());
    }

    #[test]
    fn etag_is_quoted_sha256() {
        let t = etag(b"abc");
        assert_eq!(t, "\"ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad\"");
    }
}
