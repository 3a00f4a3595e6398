//! Anomaly-aware time-series forecasting: seasonal-trend-anomaly-residual
//! decomposition, a recurrent forecaster with attention over anomalous and
//! event-driven steps, and Monte-Carlo dropout uncertainty with per-step
//! dropout-rate selection.

pub mod decompose;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod series;
pub mod synth;
pub mod uncertainty;
pub mod window;

pub use error::{Error, Result};
