//! Few-shot photovoltaic power forecasting with an interpretable ensemble
//! of deep feature extractors and threshold-gated transfer.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod fusion;
pub mod model;
pub mod modelpool;
pub mod nn;
pub mod output;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod train;
pub mod transfer;

pub use error::{Error, Result, StageExt};
