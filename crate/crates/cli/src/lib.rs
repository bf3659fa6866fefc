//! Command-line front end for `permapprox-core`: instance files, solver and
//! oracle commands, seeded sweeps that write CSV, and the acceptance cards.

pub mod app;
pub mod bench;
pub mod commands;
pub mod error;
pub mod io;
pub mod sweep;

pub use error::{CliError, CliResult};
