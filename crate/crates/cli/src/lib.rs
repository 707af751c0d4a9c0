//! Command implementations behind the `hsbench` binary.

pub mod config;
pub mod error;
pub mod pipeline;
