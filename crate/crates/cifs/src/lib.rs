//! File formats, parallel benchmarking and the command line for
//! [`cifs_core`].

pub mod bench;
pub mod cli;
pub mod error;
pub mod formats;
pub mod pnm;

pub use error::{Error, Result};
