//! Context- and cohort-aware social anxiety detection from speech features.

pub mod cohort;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod jsonfile;
pub mod nn;
pub mod psad;
pub mod seed;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
