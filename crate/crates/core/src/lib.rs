//! Building-load forecasting benchmark: heterogeneity-controlled dataset
//! curation, seven forecasting architectures on a shared input contract, a
//! uniform training protocol and normalized error metrics.

pub mod autograd;
pub mod curation;
pub mod data;
pub mod error;
pub mod forecasts;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod plot;
pub mod report;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
