//! Two-stage traffic incident duration prediction.
//!
//! An incident is first classified into a short/medium/long duration band by a
//! blended tree-ensemble classifier, then a band-specific regressor predicts the
//! duration in minutes on a box-cox transformed scale.

pub mod blend;
pub mod clustering;
pub mod domain;
pub mod error;
pub mod linear;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod synthgen;
pub mod trees;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
