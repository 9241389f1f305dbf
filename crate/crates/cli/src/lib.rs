//! Command-line front end for the `strata-rd` library.

pub mod commands;
pub mod report;
