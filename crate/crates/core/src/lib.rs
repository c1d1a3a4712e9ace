//! Particle-filter recurrent networks for time-series forecasting.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod cpf;
pub mod darnn;
pub mod data;
pub mod error;
pub mod kalman;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod sweep;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
