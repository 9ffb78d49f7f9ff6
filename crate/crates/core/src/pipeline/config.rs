use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamDist, Value};
use super::spec::{ColumnScope, EstimatorRef, PipelineSpec, StepSpec};
use crate::error::{Error, Result};
use crate::estimators::registry::StepKind;
use crate::estimators::ProblemType;
use crate::seeding;

/// Resolved choice for one step: the concrete estimator, the Select indices
/// taken to reach it, and a value for each of its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepChoice {
    pub estimator: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path: Vec<usize>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

/// A fully resolved point of a pipeline's search space, one entry per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamConfig {
    pub steps: Vec<StepChoice>,
}

impl ParamConfig {
    /// Canonical text key, used for deduplication.
    pub fn key(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundStep {
    pub kind: StepKind,
    pub estimator: String,
    pub params: BTreeMap<String, Value>,
    pub scope: ColumnScope,
}

/// Concrete ordered step list ready for fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundPipeline {
    pub problem_type: ProblemType,
    pub steps: Vec<BoundStep>,
}

pub(crate) fn sample_step<R: Rng + ?Sized>(step: &StepSpec, rng: &mut R) -> Result<StepChoice> {
    let mut path = Vec::new();
    let mut node = step;
    while let EstimatorRef::Select { select } = &node.estimator {
        // a singleton Select draws nothing, so it samples like its only branch
        let i = if select.len() == 1 {
            0
        } else {
            rng.gen_range(0..select.len())
        };
        path.push(i);
        node = &select[i];
    }
    let EstimatorRef::Id(id) = &node.estimator else {
        unreachable!()
    };
    let params = node
        .effective_dists()?
        .iter()
        .map(|(name, dist)| (name.clone(), dist.draw(rng)))
        .collect();
    Ok(StepChoice {
        estimator: id.clone(),
        path,
        params,
    })
}

/// Draw one configuration. Each distribution is sampled independently in
/// step order then parameter-name order; Select nodes pick an alternative
/// uniformly before recursing.
pub fn sample(spec: &PipelineSpec, seed: u64) -> Result<ParamConfig> {
    let mut rng = seeding::rng(seed);
    sample_with(spec, &mut rng)
}

pub fn sample_with<R: Rng + ?Sized>(spec: &PipelineSpec, rng: &mut R) -> Result<ParamConfig> {
    let steps = spec.steps.iter().map(|s| sample_step(s, rng)).collect::<Result<_>>()?;
    Ok(ParamConfig { steps })
}

/// All configurations of a finite space, in a fixed order. Returns `None`
/// when the space contains a range.
pub fn enumerate(spec: &PipelineSpec) -> Option<Vec<ParamConfig>> {
    let per_step: Vec<Vec<StepChoice>> = spec
        .steps
        .iter()
        .map(|s| enumerate_step(s, &mut Vec::new()))
        .collect::<Option<_>>()?;
    let mut out = vec![Vec::new()];
    for choices in per_step {
        let mut next = Vec::with_capacity(out.len() * choices.len());
        for prefix in &out {
            for c in &choices {
                let mut row: Vec<StepChoice> = prefix.clone();
                row.push(c.clone());
                next.push(row);
            }
        }
        out = next;
    }
    Some(out.into_iter().map(|steps| ParamConfig { steps }).collect())
}

fn enumerate_step(step: &StepSpec, path: &mut Vec<usize>) -> Option<Vec<StepChoice>> {
    match &step.estimator {
        EstimatorRef::Select { select } => {
            let mut out = Vec::new();
            for (i, alt) in select.iter().enumerate() {
                path.push(i);
                out.extend(enumerate_step(alt, path)?);
                path.pop();
            }
            Some(out)
        }
        EstimatorRef::Id(id) => {
            let dists = step.effective_dists().ok()?;
            let mut combos: Vec<BTreeMap<String, Value>> = vec![BTreeMap::new()];
            for (name, dist) in &dists {
                if dist.is_range() {
                    return None;
                }
                let mut next = Vec::new();
                for partial in &combos {
                    for v in dist.support() {
                        let mut m = partial.clone();
                        m.insert(name.clone(), v);
                        next.push(m);
                    }
                }
                combos = next;
            }
            Some(
                combos
                    .into_iter()
                    .map(|params| StepChoice {
                        estimator: id.clone(),
                        path: path.clone(),
                        params,
                    })
                    .collect(),
            )
        }
    }
}

/// Resolve a spec against a configuration. Every parameter value must lie in
/// its distribution's support; Select nodes collapse to the chosen branch.
pub fn bind(spec: &PipelineSpec, config: &ParamConfig) -> Result<BoundPipeline> {
    if config.steps.len() != spec.steps.len() {
        return Err(Error::Binding {
            step: config.steps.len().min(spec.steps.len()),
            message: format!("config has {} steps, spec has {}", config.steps.len(), spec.steps.len()),
        });
    }
    let mut steps = Vec::with_capacity(spec.steps.len());
    for (i, (step, choice)) in spec.steps.iter().zip(&config.steps).enumerate() {
        let err = |message: String| Error::Binding { step: i, message };
        let leaf = step
            .leaf(&choice.path)
            .ok_or_else(|| err(format!("select path {:?} does not resolve", choice.path)))?;
        let EstimatorRef::Id(id) = &leaf.estimator else {
            unreachable!()
        };
        if *id != choice.estimator {
            return Err(err(format!(
                "config names `{}` but the spec resolves to `{id}`",
                choice.estimator
            )));
        }
        let dists = leaf.effective_dists().map_err(|e| err(e.to_string()))?;
        for key in choice.params.keys() {
            if !dists.contains_key(key) {
                return Err(err(format!("unexpected parameter `{key}` for `{id}`")));
            }
        }
        let mut params = BTreeMap::new();
        for (name, dist) in &dists {
            let v = choice
                .params
                .get(name)
                .ok_or_else(|| err(format!("missing value for `{id}.{name}`")))?;
            let v = normalize(dist, v);
            if !dist.contains(&v) {
                return Err(err(format!("value {v} for `{id}.{name}` is outside its distribution")));
            }
            params.insert(name.clone(), v);
        }
        steps.push(BoundStep {
            kind: step.kind,
            estimator: id.clone(),
            params,
            scope: leaf.applies_to,
        });
    }
    Ok(BoundPipeline {
        problem_type: spec.problem_type,
        steps,
    })
}

// float params arrive as ints when a config document is hand-written
fn normalize(dist: &ParamDist, v: &Value) -> Value {
    let float_dist = match dist {
        ParamDist::FloatRange { .. } => true,
        ParamDist::Fixed { value } => matches!(value, Value::Float(_)),
        ParamDist::Choice { values } => values.iter().any(|x| matches!(x, Value::Float(_))),
        ParamDist::IntRange { .. } => false,
    };
    match v {
        Value::Int(i) if float_dist => Value::Float(*i as f64),
        _ => v.clone(),
    }
}

impl BoundPipeline {
    pub fn model(&self) -> &BoundStep {
        self.steps.last().expect("bound pipeline has a model step")
    }

    /// The single-point spec whose only configuration binds to `self`.
    pub fn to_spec(&self) -> PipelineSpec {
        let steps = self
            .steps
            .iter()
            .map(|b| {
                let mut step = StepSpec::new(b.kind, &b.estimator).scope(b.scope);
                for (name, v) in &b.params {
                    step = step.param(name, ParamDist::Fixed { value: v.clone() });
                }
                step
            })
            .collect();
        PipelineSpec::new(self.problem_type, steps)
    }
}
