//! Multi-strategy pre-training for cold-start recommendation.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod encoders;
pub mod experiment;
pub mod error;
pub mod finetune;
pub mod io;
pub mod paths;
pub mod pipeline;
pub mod pretrain;
pub mod report;
pub mod sampling;
pub mod seed;
pub mod toy;

pub use error::{Error, Result};
