//! File formats, experiment orchestration and the command-line front end
//! around [`tripletrack_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod mot;

pub use config::RunConfig;
pub use error::{Error, Result};
