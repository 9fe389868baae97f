//! Command-line front end for covara: problem documents, the built-in
//! instance gallery and report emission.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod corpus;
pub mod document;
pub mod expr;

pub use commands::{run, run_with, CliError};
pub use document::{DocError, ProblemDocument};
