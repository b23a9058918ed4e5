//! Temporal point-process primitives: the exponential-affine intensity
//! family the model trains against, and a Hawkes reference process used to
//! validate the machinery.

pub mod exp_affine;
pub mod hawkes;

pub use exp_affine::{expected_duration, log_density, log_intensity, log_survival, ExpectedDuration};
pub use hawkes::{ks_statistic_exp1, Hawkes};
