//! File formats, dataset directories, reports and the command-line
//! front end for `drivex-core`.

pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod formats;
pub mod report;

pub use error::{Error, Result};
