//! Core engine for AI-assisted navigation of whole-slide images.
//!
//! The crate is organised along the review pipeline:
//!
//! - [`slide`]: level-0 coordinate model, tile pyramids on disk or in memory,
//!   and a synthetic slide generator with planted mitoses.
//! - [`scoring`]: per-HPF criteria (cell count, proliferation probability,
//!   mitosis detections) from pluggable scorers.
//! - [`recommend`]: the Local / HPF / Cell recommendation hierarchy under
//!   user-adjustable criterion weights and mitosis sensitivity.
//! - [`navigate`]: viewport transitions, off-screen cues and trace recording.
//! - [`explain`]: verbal dialogs and explanation cards attached to recommendations.
//! - [`evaluate`]: report matching, per-trial metrics and simulated reviewers.

pub mod evaluate;
pub mod explain;
pub mod navigate;
pub mod recommend;
pub mod scoring;
pub mod slide;

/// Version stamped into every persisted JSON document.
pub const FORMAT_VERSION: u32 = 1;
