//! Incremental Bayesian word recognition and temporal response function
//! models linking recognition dynamics to multi-sensor recordings.

pub mod cognitive;
pub mod cohort;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod lexicon;
pub mod linking;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod trf;

pub use error::{Error, Result};
