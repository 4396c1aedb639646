//! Command implementations behind the `lipbound` binary. Each returns the
//! text written to stdout.

pub mod commands;
pub mod error;
pub mod input;
pub mod repro;
