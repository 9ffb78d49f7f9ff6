use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::params::{ParamDist, Value};
use crate::error::{Error, Result};
use crate::estimators::registry::{self, StepKind};
use crate::estimators::ProblemType;

/// Which input columns a step operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnScope {
    #[default]
    AllInput,
    ContinuousOnly,
    CategoricalOnly,
}

/// The estimator occupying a step: a registry id, or a choice among
/// alternative steps that is itself searched over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EstimatorRef {
    Id(String),
    Select { select: Vec<StepSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub kind: StepKind,
    pub estimator: EstimatorRef,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, ParamDist>,
    #[serde(default)]
    pub applies_to: ColumnScope,
    /// Parameters not listed in `params` take the shipped preset distribution
    /// instead of their fixed default.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub preset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub problem_type: ProblemType,
    pub steps: Vec<StepSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub step: Option<usize>,
    /// Location inside the pipeline document, e.g. `steps[1].params.alpha`.
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, step: Option<usize>, path: String, message: impl Into<String>) {
        self.violations.push(Violation {
            step,
            path,
            message: message.into(),
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cardinality {
    Finite(u128),
    Infinite,
}

impl fmt::Display for Cardinality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cardinality::Finite(n) => write!(f, "{n}"),
            Cardinality::Infinite => write!(f, "infinite"),
        }
    }
}

impl StepSpec {
    pub fn new(kind: StepKind, estimator: &str) -> Self {
        StepSpec {
            kind,
            estimator: EstimatorRef::Id(estimator.to_string()),
            params: BTreeMap::new(),
            applies_to: ColumnScope::AllInput,
            preset: false,
        }
    }

    pub fn select(kind: StepKind, alternatives: Vec<StepSpec>) -> Self {
        StepSpec {
            kind,
            estimator: EstimatorRef::Select { select: alternatives },
            params: BTreeMap::new(),
            applies_to: ColumnScope::AllInput,
            preset: false,
        }
    }

    pub fn param(mut self, name: &str, dist: ParamDist) -> Self {
        self.params.insert(name.to_string(), dist);
        self
    }

    pub fn scope(mut self, scope: ColumnScope) -> Self {
        self.applies_to = scope;
        self
    }

    pub fn with_preset(mut self) -> Self {
        self.preset = true;
        self
    }

    /// Follow a path of Select indices down to a concrete alternative.
    pub fn leaf(&self, path: &[usize]) -> Option<&StepSpec> {
        match (&self.estimator, path.split_first()) {
            (EstimatorRef::Id(_), None) => Some(self),
            (EstimatorRef::Select { select }, Some((i, rest))) => select.get(*i)?.leaf(rest),
            _ => None,
        }
    }

    /// Distribution per registry parameter for a concrete (non-Select) step:
    /// explicit entries, else the preset (when requested), else the default,
    /// with Fixed/Choice values coerced to the parameter's type.
    pub fn effective_dists(&self) -> Result<BTreeMap<String, ParamDist>> {
        let EstimatorRef::Id(id) = &self.estimator else {
            return Err(Error::invalid("effective_dists called on a Select step"));
        };
        let info = registry::lookup(id).ok_or_else(|| Error::invalid(format!("unknown estimator `{id}`")))?;
        let mut out = BTreeMap::new();
        for spec in &info.params {
            let dist = match self.params.get(spec.name) {
                Some(d) => d.clone(),
                None => match (&spec.preset, self.preset) {
                    (Some(preset), true) => preset.clone(),
                    _ => ParamDist::Fixed {
                        value: spec.default.clone(),
                    },
                },
            };
            let coerce = |v: &Value| spec.ty.coerce(v).map_err(Error::InvalidArgument);
            let dist = match dist {
                ParamDist::Fixed { value } => ParamDist::Fixed { value: coerce(&value)? },
                ParamDist::Choice { values } => ParamDist::Choice {
                    values: values.iter().map(coerce).collect::<Result<_>>()?,
                },
                ParamDist::FloatRange { lo, hi, scale } => ParamDist::FloatRange { lo, hi, scale },
                ParamDist::IntRange { lo, hi, scale } => ParamDist::IntRange { lo, hi, scale },
            };
            out.insert(spec.name.to_string(), dist);
        }
        Ok(out)
    }

    fn cardinality(&self) -> Cardinality {
        match &self.estimator {
            EstimatorRef::Select { select } => {
                let mut total: u128 = 0;
                for alt in select {
                    match alt.cardinality() {
                        Cardinality::Infinite => return Cardinality::Infinite,
                        Cardinality::Finite(n) => match total.checked_add(n) {
                            Some(t) => total = t,
                            None => return Cardinality::Infinite,
                        },
                    }
                }
                Cardinality::Finite(total)
            }
            EstimatorRef::Id(_) => {
                let Ok(dists) = self.effective_dists() else {
                    return Cardinality::Finite(0);
                };
                let mut total: u128 = 1;
                for d in dists.values() {
                    match d.arity() {
                        None => return Cardinality::Infinite,
                        Some(a) => match total.checked_mul(a as u128) {
                            Some(t) => total = t,
                            None => return Cardinality::Infinite,
                        },
                    }
                }
                Cardinality::Finite(total)
            }
        }
    }

    fn validate_into(
        &self,
        report: &mut ValidationReport,
        step: usize,
        path: &str,
        kind: StepKind,
        problem: ProblemType,
    ) {
        if self.kind != kind {
            report.push(
                Some(step),
                format!("{path}.kind"),
                format!(
                    "select alternatives must share kind `{}`, found `{}`",
                    kind.as_str(),
                    self.kind.as_str()
                ),
            );
        }
        match &self.estimator {
            EstimatorRef::Select { select } => {
                if select.is_empty() {
                    report.push(
                        Some(step),
                        format!("{path}.estimator"),
                        "select must list at least one alternative",
                    );
                }
                if !self.params.is_empty() {
                    report.push(
                        Some(step),
                        format!("{path}.params"),
                        "params belong on select alternatives, not the select node",
                    );
                }
                for (i, alt) in select.iter().enumerate() {
                    alt.validate_into(report, step, &format!("{path}.estimator.select[{i}]"), kind, problem);
                }
            }
            EstimatorRef::Id(id) => {
                let Some(info) = registry::lookup(id) else {
                    report.push(
                        Some(step),
                        format!("{path}.estimator"),
                        format!("unknown estimator `{id}`"),
                    );
                    return;
                };
                if info.kind != self.kind {
                    report.push(
                        Some(step),
                        format!("{path}.estimator"),
                        format!(
                            "`{id}` is a {} but the step kind is {}",
                            info.kind.as_str(),
                            self.kind.as_str()
                        ),
                    );
                }
                if !info.supports(problem) {
                    report.push(
                        Some(step),
                        format!("{path}.estimator"),
                        format!("model `{id}` is incompatible with problem type {}", problem.as_str()),
                    );
                }
                for (name, dist) in &self.params {
                    let ppath = format!("{path}.params.{name}");
                    let Some(spec) = info.param(name) else {
                        report.push(Some(step), ppath, format!("`{id}` has no parameter `{name}`"));
                        continue;
                    };
                    if let Some(problem) = dist.check() {
                        report.push(Some(step), ppath.clone(), problem);
                        continue;
                    }
                    let bad = match dist {
                        ParamDist::Fixed { value } => spec.ty.coerce(value).err(),
                        ParamDist::Choice { values } => values.iter().find_map(|v| spec.ty.coerce(v).err()),
                        ParamDist::IntRange { lo, hi, .. } => spec
                            .ty
                            .coerce(&Value::Int(*lo))
                            .and_then(|_| spec.ty.coerce(&Value::Int(*hi)))
                            .err()
                            .or_else(|| {
                                (!matches!(spec.ty, registry::ParamType::Int { .. }))
                                    .then(|| "int_range used on a non-integer parameter".to_string())
                            }),
                        ParamDist::FloatRange { lo, hi, .. } => {
                            if !matches!(spec.ty, registry::ParamType::Float { .. }) {
                                Some("float_range used on a non-float parameter".to_string())
                            } else {
                                spec.ty
                                    .coerce(&Value::Float(*lo))
                                    .and_then(|_| spec.ty.coerce(&Value::Float(*hi)))
                                    .err()
                            }
                        }
                    };
                    if let Some(msg) = bad {
                        report.push(Some(step), ppath, msg);
                    }
                }
            }
        }
    }
}

impl PipelineSpec {
    pub fn new(problem_type: ProblemType, steps: Vec<StepSpec>) -> Self {
        PipelineSpec { problem_type, steps }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.steps.is_empty() {
            report.push(None, "steps".into(), "pipeline needs at least one step (the model)");
            return report;
        }
        let models: Vec<usize> = self
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == StepKind::Model)
            .map(|(i, _)| i)
            .collect();
        match models.as_slice() {
            [] => report.push(None, "steps".into(), "pipeline has no model step"),
            [i] if *i != self.steps.len() - 1 => report.push(Some(*i), format!("steps[{i}]"), "model must be last"),
            [_] => {}
            [_, rest @ ..] => {
                for i in rest {
                    report.push(Some(*i), format!("steps[{i}]"), "pipeline has more than one model step");
                }
            }
        }
        for (i, w) in self.steps.windows(2).enumerate() {
            let (a, b) = (w[0].kind, w[1].kind);
            if a == b && a != StepKind::Model {
                report.push(
                    Some(i + 1),
                    format!("steps[{}]", i + 1),
                    format!("at most one {} step is allowed", a.as_str()),
                );
            } else if a > b && a != StepKind::Model {
                report.push(
                    Some(i + 1),
                    format!("steps[{}]", i + 1),
                    format!(
                        "{} step must come before {} step (order: imputer, encoder, scaler, selector, model)",
                        b.as_str(),
                        a.as_str()
                    ),
                );
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, step) in self.steps.iter().enumerate() {
            if step.kind != StepKind::Model
                && !seen.insert(step.kind)
                && !report.violations.iter().any(|v| v.step == Some(i))
            {
                report.push(
                    Some(i),
                    format!("steps[{i}]"),
                    format!("at most one {} step is allowed", step.kind.as_str()),
                );
            }
            step.validate_into(&mut report, i, &format!("steps[{i}]"), step.kind, self.problem_type);
        }
        report
    }

    /// Number of distinct resolved configurations. A Select contributes the
    /// sum of its alternatives' sub-spaces; any range makes the space
    /// infinite.
    pub fn space_cardinality(&self) -> Cardinality {
        let mut total: u128 = 1;
        for step in &self.steps {
            match step.cardinality() {
                Cardinality::Infinite => return Cardinality::Infinite,
                Cardinality::Finite(n) => match total.checked_mul(n) {
                    Some(t) => total = t,
                    None => return Cardinality::Infinite,
                },
            }
        }
        Cardinality::Finite(total)
    }

    pub fn model_step(&self) -> Option<&StepSpec> {
        self.steps.last().filter(|s| s.kind == StepKind::Model)
    }
}
