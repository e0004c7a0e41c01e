//! Storage formats, run drivers and the command-line tool built on
//! [`scmm_core`].
//!
//! * [`sample`]: the 16-byte-header binary sample file.
//! * [`store`]: corpus directories (`manifest.json` + `samples/`).
//! * [`checkpoint`]: JSON-indexed f64 parameter checkpoints.
//! * [`runlog`]: line-delimited JSON RunLogs.
//! * [`config`]: the JSON run configuration.
//! * [`pipeline`]: pre-train, fine-tune, eval and sweep drivers.
//! * [`cli`]: argument parsing and exit codes.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod runlog;
pub mod sample;
pub mod store;

pub use error::{Error, Result};
pub use scmm_core as core;
