//! File formats, experiment harness and command-line front end for
//! `tagtune-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod cora;
pub mod error;
pub mod formats;
pub mod harness;
pub mod logs;
pub mod scan;

pub use error::{Error, Result};
