//! IO, remote service clients and the command-line pipeline around
//! [`pseudorel_core`].

pub mod error;
pub mod io;
pub mod remote;

pub use error::{CliError, Result};
pub mod cli;
pub mod config;
pub mod experiment;
