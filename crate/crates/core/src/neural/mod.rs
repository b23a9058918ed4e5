//! Minimal neural toolkit: dense tensors, a reverse-mode tape, an LSTM
//! step, Adam, and finite-difference gradient checking. Everything is f64
//! and single-threaded by design -- the models here are small enough that
//! determinism is worth more than throughput.

pub mod adam;
pub mod gradcheck;
pub mod lstm;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig, StepStats};
pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
pub use params::{GradMap, ParamSet};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
