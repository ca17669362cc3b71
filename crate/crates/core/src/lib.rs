//! Near-real-time air-quality monitoring from satellite trace-gas plots.
//!
//! The pipeline ingests plot CSV files, normalizes units, runs a three-stage
//! complex-event cascade (gas aggregation, pollutant level, air-quality
//! level) on a deterministic event-time engine, and validates the resulting
//! AQI against ground-station observations.

pub mod catalog;
pub mod emit;
pub mod engine;
pub mod error;
pub mod ingest;
pub mod model;
pub mod patterns;
pub mod pipeline;
pub mod synth;
pub mod units;
pub mod validation;

pub use catalog::Catalog;
pub use error::{Error, Result};
pub use model::{cell_of, GeoPoint, GridCell, PlotRecord, Pollutant, PollutantId, SimpleEvent, StationObservation};
