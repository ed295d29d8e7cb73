//! Synthetic disease-mention corpus tooling.
//!
//! Renders generation prompts, extracts tagged mentions from generated notes,
//! composes augmentation strategies, normalizes mentions against a concept
//! vocabulary and evaluates recognition and normalization output.

pub mod augment;
pub mod corpus;
pub mod der;
pub mod error;
pub mod fixtures;
pub mod metrics;
pub mod normalize;
pub mod synth;
pub mod text;
pub mod vectors;

pub use error::{Error, Result};
