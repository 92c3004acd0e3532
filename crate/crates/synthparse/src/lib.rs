//! File formats, adapters and the command-line pipeline around
//! [`synthparse_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod hook;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod remote;

pub use error::{Error, Result};
