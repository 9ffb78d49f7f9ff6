//! Declarative pipelines whose parameters, including the estimator chosen
//! for a step, are searchable distributions.

mod config;
mod params;
mod spec;

pub(crate) use config::sample_step;
pub use config::{bind, enumerate, sample, sample_with, BoundPipeline, BoundStep, ParamConfig, StepChoice};
pub use params::{ParamDist, Scale, Value};
pub use spec::{Cardinality, ColumnScope, EstimatorRef, PipelineSpec, StepSpec, ValidationReport, Violation};
