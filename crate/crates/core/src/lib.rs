//! Bayesian classification of radiation portal monitor scans.

pub mod benchmark;
pub mod classifier;
pub mod cli;
pub mod data;
pub mod error;
pub mod harness;
pub mod io;
pub mod simulation;
pub mod spectra;
pub mod training;

pub use error::{Error, ParseError, Result};
