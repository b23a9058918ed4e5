//! Session-level anomaly detection with a hierarchical recurrent point
//! process.
//!
//! The pipeline: raw activity logs are mapped to a fixed taxonomy of event
//! types and grouped into logon-to-logoff sessions; a two-level LSTM model
//! is trained on benign sessions only, modelling each event's type and
//! timing at the lower level and session gaps/durations at the upper level;
//! unseen sessions are then scored by how badly the trained model predicts
//! them, and the scores are ranked for review.

pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod neural;
pub mod scoring;
pub mod sessions;
pub mod tpp;

pub use error::{Error, Result};
