//! Command-line front end for the ELLF toolkit.

pub mod cli;
pub mod json;
