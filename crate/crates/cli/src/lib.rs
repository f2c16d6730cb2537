//! Configuration-driven experiment runner. Each command reads an
//! [`ExperimentConfig`], writes CSV tables and field dumps into the output
//! directory and finishes with a `manifest.json` listing every file with its
//! SHA-256 hash.

// NaN must fail these checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

pub use config::{Diagnostic, ExperimentConfig};
pub use run::{run, Command, RunError, RunOutcome};
