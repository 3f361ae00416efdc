//! Driver-intention prediction from EEG: kinematic labelling, synthetic
//! sessions, preprocessing, windowed datasets, compact classifiers and
//! evaluation.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kinlab;
pub mod metrics;
pub mod mlcore;
pub mod sigprep;
pub mod synthgen;

pub use error::{Error, Result};
