//! Point-source CO2 emission estimation from gridded satellite-style fields.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod grid;
pub mod ingest;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod plume_sim;
pub mod training;

pub use error::{Error, ErrorClass, Result};
