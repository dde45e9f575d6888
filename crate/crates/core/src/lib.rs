pub mod cli;
pub mod config;
pub mod crf;
pub mod detector;
pub mod error;
pub mod eval;
pub mod nn;
pub mod overlay;
pub mod phantom;
pub mod pipeline;
pub mod rvol;
pub mod segnet;
pub mod train;
pub mod volume;
pub mod workflow;

pub use error::{Error, Result};
