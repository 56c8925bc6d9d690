//! Detection files produced by external models: `{"detections":[{"x":..,"y":..,"prob":..}]}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Detection, ScoringError};
use crate::slide::{GroundTruth, SlideMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub detections: Vec<Detection>,
}

/// Parses and validates detection JSON against the slide bounds.
pub fn parse_detections(bytes: &[u8], meta: &SlideMeta) -> Result<Vec<Detection>, ScoringError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| ScoringError::Parse(e.to_string()))?;
    let records = value
        .get("detections")
        .and_then(|d| d.as_array())
        .ok_or_else(|| ScoringError::Parse("expected an object with a \"detections\" array".into()))?;
    let mut out = Vec::with_capacity(records.len());
    for (index, rec) in records.iter().enumerate() {
        let d: Detection = serde_json::from_value(rec.clone())
            .map_err(|e| ScoringError::InvalidRecord { index, reason: e.to_string() })?;
        if !(0.0..=1.0).contains(&d.prob) {
            return Err(ScoringError::InvalidRecord { index, reason: format!("prob {} outside [0, 1]", d.prob) });
        }
        if !meta.contains(d.x, d.y) {
            return Err(ScoringError::InvalidRecord {
                index,
                reason: format!("point ({}, {}) outside the {}x{} slide", d.x, d.y, meta.width0, meta.height0),
            });
        }
        out.push(d);
    }
    Ok(out)
}

pub fn import_detections(path: &Path, meta: &SlideMeta) -> Result<Vec<Detection>, ScoringError> {
    parse_detections(&fs::read(path)?, meta)
}

/// Ground-truth points as a detection file with a fixed probability.
pub fn export_detections(gt: &GroundTruth, prob: f64) -> DetectionFile {
    DetectionFile {
        detections: gt.mitoses.iter().map(|p| Detection { x: p.x as f64, y: p.y as f64, prob }).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide::{plan_layout, SyntheticSpec};

    fn meta() -> SlideMeta {
        SlideMeta::new("s", 1000, 800, 256, 0.25).unwrap()
    }

    #[test]
    fn empty_list() {
        assert!(parse_detections(br#"{"detections":[]}"#, &meta()).unwrap().is_empty());
    }

    #[test]
    fn probability_out_of_range() {
        let err = parse_detections(
            br#"{"detections":[{"x":1,"y":1,"prob":0.5},{"x":2,"y":2,"prob":1.2}]}"#,
            &meta(),
        )
        .unwrap_err();
        assert!(matches!(err, ScoringError::InvalidRecord { index: 1, .. }), "{err}");
    }

    #[test]
    fn out_of_bounds_and_malformed() {
        let err = parse_detections(br#"{"detections":[{"x":1000,"y":1,"prob":0.5}]}"#, &meta()).unwrap_err();
        assert!(matches!(err, ScoringError::InvalidRecord { index: 0, .. }));
        let err = parse_detections(br#"{"detections":[{"x":1,"y":1,"prob":0.5},{"x":"a"}]}"#, &meta()).unwrap_err();
        assert!(matches!(err, ScoringError::InvalidRecord { index: 1, .. }));
        assert!(matches!(parse_detections(b"{not json", &meta()), Err(ScoringError::Parse(_))));
        assert!(matches!(parse_detections(b"[]", &meta()), Err(ScoringError::Parse(_))));
    }

    #[test]
    fn ground_truth_export_round_trip() {
        let layout = plan_layout(&SyntheticSpec::fixture("rt", 6000, 6000, 2)).unwrap();
        let gt = layout.ground_truth();
        assert!(!gt.mitoses.is_empty());
        let m = SlideMeta::new("rt", 6000, 6000, 256, 0.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dets.json");
        fs::write(&path, serde_json::to_vec(&export_detections(&gt, 0.97)).unwrap()).unwrap();
        let dets = import_detections(&path, &m).unwrap();
        assert_eq!(dets.len(), gt.mitoses.len());
        assert!(dets.iter().all(|d| d.prob == 0.97));
    }
}
