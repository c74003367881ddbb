//! Std companion to `psme-core`: tensor and dataset files, the synthetic
//! generator, key-value configs, checkpoints, reports, parallel LOSO and
//! the `psme` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod report;
pub mod runner;
pub mod synth;
pub mod tenfile;

pub use error::IoError;
