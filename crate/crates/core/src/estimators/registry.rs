//! Estimator catalog: ids, step kinds, parameter schemas, and presets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ProblemType;
use crate::pipeline::{ParamDist, Scale, Value};

/// Step kinds, declared in the canonical pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Imputer,
    Encoder,
    Scaler,
    Selector,
    Model,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Imputer => "imputer",
            StepKind::Encoder => "encoder",
            StepKind::Scaler => "scaler",
            StepKind::Selector => "selector",
            StepKind::Model => "model",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamType {
    Int { min: i64, max: i64 },
    Float { min: f64, max: f64, min_exclusive: bool },
    Bool,
    Str(&'static [&'static str]),
}

impl ParamType {
    /// Coerce a value to this type (ints widen to floats) or explain why not.
    pub fn coerce(&self, v: &Value) -> Result<Value, String> {
        match (self, v) {
            (ParamType::Int { min, max }, Value::Int(i)) => {
                if i < min || i > max {
                    Err(format!("{i} outside [{min}, {max}]"))
                } else {
                    Ok(v.clone())
                }
            }
            (
                ParamType::Float {
                    min,
                    max,
                    min_exclusive,
                },
                Value::Int(_) | Value::Float(_),
            ) => {
                let x = v.as_f64().unwrap();
                let low_ok = if *min_exclusive { x > *min } else { x >= *min };
                if !x.is_finite() || !low_ok || x > *max {
                    let lb = if *min_exclusive { "(" } else { "[" };
                    Err(format!("{x} outside {lb}{min}, {max}]"))
                } else {
                    Ok(Value::Float(x))
                }
            }
            (ParamType::Bool, Value::Bool(_)) => Ok(v.clone()),
            (ParamType::Str(options), Value::Str(s)) => {
                if options.contains(&s.as_str()) {
                    Ok(v.clone())
                } else {
                    Err(format!("`{s}` not one of {options:?}"))
                }
            }
            (ty, v) => Err(format!("value {v} has the wrong type (expected {})", ty.name())),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            ParamType::Int { .. } => "integer",
            ParamType::Float { .. } => "number",
            ParamType::Bool => "boolean",
            ParamType::Str(_) => "string",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: &'static str,
    pub ty: ParamType,
    pub default: Value,
    /// Shipped search distribution used when a step asks for presets.
    pub preset: Option<ParamDist>,
}

#[derive(Debug, Clone)]
pub struct EstimatorInfo {
    pub id: &'static str,
    pub kind: StepKind,
    pub params: Vec<ParamSpec>,
    /// Problem types a model supports; empty for transformers.
    pub problems: &'static [ProblemType],
}

impl EstimatorInfo {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn supports(&self, problem: ProblemType) -> bool {
        self.kind != StepKind::Model || self.problems.contains(&problem)
    }

    /// Fixed default for every parameter.
    pub fn defaults(&self) -> BTreeMap<String, Value> {
        self.params
            .iter()
            .map(|p| (p.name.to_string(), p.default.clone()))
            .collect()
    }
}

const ALL_PROBLEMS: &[ProblemType] = &[ProblemType::Regression, ProblemType::Binary, ProblemType::Categorical];
const NONNEG: ParamType = ParamType::Float {
    min: 0.0,
    max: f64::INFINITY,
    min_exclusive: false,
};

fn p(name: &'static str, ty: ParamType, default: impl Into<Value>, preset: Option<ParamDist>) -> ParamSpec {
    ParamSpec {
        name,
        ty,
        default: default.into(),
        preset,
    }
}

pub const IDS: &[&str] = &[
    "ridge",
    "logistic",
    "dtree",
    "forest",
    "knn",
    "constant",
    "scaler_standard",
    "scaler_robust",
    "impute_mean",
    "impute_median",
    "onehot",
    "select_variance",
    "select_univariate",
];

pub fn lookup(id: &str) -> Option<EstimatorInfo> {
    use ParamType::*;
    let depth = Int { min: 1, max: 64 };
    let split = Int { min: 2, max: i64::MAX };
    let (kind, params, problems): (StepKind, Vec<ParamSpec>, &'static [ProblemType]) = match id {
        "ridge" => (
            StepKind::Model,
            vec![p(
                "alpha",
                NONNEG,
                1.0,
                Some(ParamDist::float_range(1e-3, 1e3, Scale::Log)),
            )],
            &[ProblemType::Regression],
        ),
        "logistic" => (
            StepKind::Model,
            vec![
                p(
                    "alpha",
                    NONNEG,
                    1.0,
                    Some(ParamDist::float_range(1e-4, 1e2, Scale::Log)),
                ),
                p("max_iter", Int { min: 1, max: 1_000_000 }, 10_000i64, None),
                p(
                    "tol",
                    Float {
                        min: 0.0,
                        max: 1.0,
                        min_exclusive: true,
                    },
                    1e-8,
                    None,
                ),
            ],
            &[ProblemType::Binary, ProblemType::Categorical],
        ),
        "dtree" => (
            StepKind::Model,
            vec![
                p(
                    "max_depth",
                    depth.clone(),
                    5i64,
                    Some(ParamDist::int_range(1, 10, Scale::Linear)),
                ),
                p(
                    "min_samples_split",
                    split.clone(),
                    2i64,
                    Some(ParamDist::int_range(2, 20, Scale::Linear)),
                ),
            ],
            ALL_PROBLEMS,
        ),
        "forest" => (
            StepKind::Model,
            vec![
                p(
                    "n_trees",
                    Int { min: 1, max: 1000 },
                    50i64,
                    Some(ParamDist::choice([25i64, 50, 100])),
                ),
                p(
                    "max_depth",
                    depth,
                    8i64,
                    Some(ParamDist::int_range(2, 12, Scale::Linear)),
                ),
                p("min_samples_split", split, 2i64, None),
                p(
                    "max_features",
                    Str(&["sqrt", "log2", "all"]),
                    "sqrt",
                    Some(ParamDist::choice(["sqrt", "log2", "all"])),
                ),
                p("bootstrap", Bool, true, None),
            ],
            ALL_PROBLEMS,
        ),
        "knn" => (
            StepKind::Model,
            vec![p(
                "k",
                Int { min: 1, max: 100_000 },
                5i64,
                Some(ParamDist::int_range(1, 30, Scale::Log)),
            )],
            ALL_PROBLEMS,
        ),
        "constant" => (StepKind::Model, vec![], ALL_PROBLEMS),
        "scaler_standard" | "scaler_robust" => (StepKind::Scaler, vec![], &[]),
        "impute_mean" | "impute_median" => (StepKind::Imputer, vec![], &[]),
        "onehot" => (StepKind::Encoder, vec![], &[]),
        "select_variance" => (StepKind::Selector, vec![p("threshold", NONNEG, 0.0, None)], &[]),
        "select_univariate" => (
            StepKind::Selector,
            vec![p(
                "k",
                Int { min: 1, max: 100_000 },
                10i64,
                Some(ParamDist::int_range(1, 50, Scale::Log)),
            )],
            &[],
        ),
        _ => return None,
    };
    let id = IDS.iter().find(|s| **s == id)?;
    Some(EstimatorInfo {
        id,
        kind,
        params,
        problems,
    })
}
