//! The four captioners behind one interface: teacher-forced loss for
//! training and single-step decoding for inference.

mod config;
mod model;

pub use config::{Architecture, Fusion, ModelConfig};
pub use model::{CaptionModel, DecodeState, FeatureInput, Positions, StepOutput};
