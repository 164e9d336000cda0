//! Command-line plumbing for the antibunch toolkit: error reporting,
//! output files and the chained `pipeline` run.

pub mod error;
pub mod output;
pub mod pipeline;

pub use error::{CliError, ErrorKind};
