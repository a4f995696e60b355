//! Command-line front end of `dissipic-core`: configuration, JSON and CSV
//! formats, and the `verify`, `synthesize`, `train` and `simulate` commands.

pub mod commands;
pub mod config;
pub mod format;
