//! Longitudinal inverse classification: per-visit risk models with
//! historical-risk and missing-feature augmentation, and budgeted
//! recommendations over directly changeable features.

pub mod cohort;
pub mod error;
pub mod indirect;
pub mod inverse_opt;
pub mod linalg;
pub mod missing_features;
pub mod models;
pub mod pipeline;
pub mod risk_features;
pub mod synth;

pub use error::{Error, Result};
