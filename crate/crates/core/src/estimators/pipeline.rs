use serde::{Deserialize, Serialize};

use super::{fit, FitContext, FittedEstimator, Frame, Predictions, ProblemType, Target};
use crate::error::Result;
use crate::pipeline::BoundPipeline;
use crate::tabular::Dataset;

/// A bound pipeline fitted on one set of training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub problem_type: ProblemType,
    pub steps: Vec<FittedEstimator>,
}

impl FittedPipeline {
    /// Fit every step on the dataset rows at `positions` (and nothing else).
    pub fn fit(bound: &BoundPipeline, ds: &Dataset, positions: &[usize], seed: u64) -> Result<Self> {
        let frame = Frame::from_dataset(ds, positions);
        let target = Target::from_dataset(ds, positions, bound.problem_type)?;
        Self::fit_frame(bound, frame, &target, seed)
    }

    pub fn fit_frame(bound: &BoundPipeline, mut frame: Frame, target: &Target, seed: u64) -> Result<Self> {
        let mut steps = Vec::with_capacity(bound.steps.len());
        for (i, step) in bound.steps.iter().enumerate() {
            let ctx = FitContext {
                seed: seed_of!(seed, "step", i),
                scope: step.scope,
            };
            let fitted = fit(&step.estimator, &step.params, &frame, Some(target), ctx)?;
            if !fitted.is_model() {
                frame = fitted.transform(&frame)?;
            }
            steps.push(fitted);
        }
        Ok(FittedPipeline {
            problem_type: bound.problem_type,
            steps,
        })
    }

    pub fn model(&self) -> &FittedEstimator {
        self.steps.last().expect("pipeline has a model")
    }

    /// Apply every transformer step; the result is what the model sees.
    pub fn transform_features(&self, frame: &Frame) -> Result<Frame> {
        let mut frame = frame.clone();
        for step in &self.steps[..self.steps.len() - 1] {
            frame = step.transform(&frame)?;
        }
        Ok(frame)
    }

    pub fn predict_frame(&self, frame: &Frame) -> Result<Predictions> {
        self.model().predict(&self.transform_features(frame)?)
    }

    pub fn predict(&self, ds: &Dataset, positions: &[usize]) -> Result<Predictions> {
        self.predict_frame(&Frame::from_dataset(ds, positions))
    }
}
