//! Ensemble data assimilation of gauge water levels and wet-surface ratios
//! into a 2D shallow-water flood model, run as twin experiments.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ascii_grid;
pub mod config;
pub mod domain;
pub mod enkf;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod observation;
pub mod seeding;
pub mod swe;
pub mod table;

pub use error::{Error, Result};
