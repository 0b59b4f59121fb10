//! End-to-end experiment pipeline behind the command-line tool.

pub mod commands;
pub mod config;
pub mod io;
pub mod metrics;

pub use commands::*;
pub use config::RunConfig;
pub use metrics::{compute_mac, ModeMetrics};
