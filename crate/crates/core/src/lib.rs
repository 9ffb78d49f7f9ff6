//! Core of a leakage-safe predictive modeling workbench for tabular data.

pub mod error;
#[macro_use]
pub mod seeding;
pub mod canonical;
pub mod config;
pub mod cv;
pub mod estimators;
pub mod importance;
pub mod linalg;
pub mod pipeline;
pub mod runstore;
pub mod search;
pub mod tabular;
pub mod workflow;

pub use error::{ConfigIssue, Error, Result};
