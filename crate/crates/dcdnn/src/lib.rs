//! File formats, reports and the command-line pipeline around
//! [`dcdnn_core`].

pub mod config;
pub mod dataset_file;
pub mod error;
pub mod manifest;
pub mod model_file;
pub mod pgm;
pub mod pipeline;
pub mod report;
pub mod selftest;

pub use error::{Error, Result};
