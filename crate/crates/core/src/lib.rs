//! Learned intra prediction built around clustering-driven network splitting.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.
//! It carries everything that is pure computation:
//!
//! - [`fcnet`]: dense PReLU networks, loss, backprop and momentum SGD.
//! - [`split`]: mirrored Gaussian splitting of a network into two children.
//! - [`dataset`]: reference gathering, substitution, zero-centering, grouping
//!   and complexity filtering on 8-bit luma planes.
//! - [`baseline`]: planar, DC and 33 angular directional predictors.
//! - [`trainer`]: pretraining and the recursive partition/train rounds.
//! - [`evaluator`]: rate-distortion mode decision, usage rate and histograms.
//! - [`synthetic`]: labeled texture generators for experiments and tests.
//!
//! File formats, reports and the command line live in the `dcdnn` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod fcnet;
pub mod rng;
pub mod split;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
