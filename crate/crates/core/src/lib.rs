//! Learned-affinity multiple target tracking.
//!
//! An identity-classification appearance network and an LSTM motion network
//! are fused into a shared embedding trained with a triplet margin loss. The
//! embedding distance drives Hungarian assignment in a tracking-by-detection
//! loop, scored with CLEAR-MOT metrics on synthetic scenes.
//!
//! The crate is `no_std` (with `alloc`); file formats and the command-line
//! front end live in the companion `tripletrack` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod appearance;
pub mod assignment;
pub mod error;
pub mod geometry;
pub mod metric;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod rng;
pub mod simulator;
pub mod tensor;
pub mod tracker;
pub mod training;
pub mod verification;

pub use error::{Error, Result};
pub use tensor::{Param, Tensor};
