//! Siamese grounding transformer for weakly-supervised video paragraph
//! grounding.
//!
//! Two forward branches share one parameter set: an augmentation branch
//! regresses the paragraph's extent inside a composed pseudo video, and an
//! inference branch aligns each sentence with the normal video under an
//! ordering prior. Only the inference branch runs at prediction time.

pub mod compose;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod interval;
pub mod losses;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
