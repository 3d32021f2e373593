//! File formats, run directories, evaluation, reports and the command line
//! around `inst4dgs-core`.

pub mod checkpoint;
pub mod cli;
pub mod dataset_io;
pub mod error;
pub mod eval;
pub mod exec;
pub mod files;
pub mod netpbm;
pub mod report;
pub mod run;
pub mod selftest;

pub use error::{Error, Result};
pub use exec::Parallel;
