use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize};

/// A concrete hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Str(s) => write!(f, "{s}"),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

impl Scale {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Scale::Linear => x,
            Scale::Log => x.ln(),
        }
    }

    pub fn inverse(self, x: f64) -> f64 {
        match self {
            Scale::Linear => x,
            Scale::Log => x.exp(),
        }
    }
}

/// Searchable distribution over one hyperparameter.
///
/// Serialized as `{"dist": "fixed", "value": ..}`, `{"dist": "choice",
/// "values": [..]}`, `{"dist": "int_range" | "float_range", "lo", "hi",
/// "scale"}`. A bare JSON scalar deserializes as `Fixed`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ParamDist {
    Fixed {
        value: Value,
    },
    Choice {
        values: Vec<Value>,
    },
    IntRange {
        lo: i64,
        hi: i64,
        #[serde(default)]
        scale: Scale,
    },
    FloatRange {
        lo: f64,
        hi: f64,
        #[serde(default)]
        scale: Scale,
    },
}

#[derive(Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
enum TaggedDist {
    Fixed {
        value: Value,
    },
    Choice {
        values: Vec<Value>,
    },
    IntRange {
        lo: i64,
        hi: i64,
        #[serde(default)]
        scale: Scale,
    },
    FloatRange {
        lo: f64,
        hi: f64,
        #[serde(default)]
        scale: Scale,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DistRepr {
    Tagged(TaggedDist),
    Scalar(Value),
}

impl<'de> Deserialize<'de> for ParamDist {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match DistRepr::deserialize(d)? {
            DistRepr::Scalar(value) => ParamDist::Fixed { value },
            DistRepr::Tagged(TaggedDist::Fixed { value }) => ParamDist::Fixed { value },
            DistRepr::Tagged(TaggedDist::Choice { values }) => ParamDist::Choice { values },
            DistRepr::Tagged(TaggedDist::IntRange { lo, hi, scale }) => ParamDist::IntRange { lo, hi, scale },
            DistRepr::Tagged(TaggedDist::FloatRange { lo, hi, scale }) => ParamDist::FloatRange { lo, hi, scale },
        })
    }
}

impl ParamDist {
    pub fn fixed(value: impl Into<Value>) -> Self {
        ParamDist::Fixed { value: value.into() }
    }

    pub fn choice<V: Into<Value>>(values: impl IntoIterator<Item = V>) -> Self {
        ParamDist::Choice {
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn float_range(lo: f64, hi: f64, scale: Scale) -> Self {
        ParamDist::FloatRange { lo, hi, scale }
    }

    pub fn int_range(lo: i64, hi: i64, scale: Scale) -> Self {
        ParamDist::IntRange { lo, hi, scale }
    }

    /// Structural problems with the distribution itself.
    pub fn check(&self) -> Option<String> {
        match self {
            ParamDist::Fixed { .. } => None,
            ParamDist::Choice { values } if values.is_empty() => Some("choice must be non-empty".into()),
            ParamDist::Choice { .. } => None,
            ParamDist::IntRange { lo, hi, scale } => range_problem(*lo as f64, *hi as f64, *scale),
            ParamDist::FloatRange { lo, hi, scale } => {
                if !lo.is_finite() || !hi.is_finite() {
                    Some("range bounds must be finite".into())
                } else {
                    range_problem(*lo, *hi, *scale)
                }
            }
        }
    }

    pub fn is_range(&self) -> bool {
        matches!(self, ParamDist::IntRange { .. } | ParamDist::FloatRange { .. })
    }

    /// Number of support points, `None` for ranges.
    pub fn arity(&self) -> Option<usize> {
        match self {
            ParamDist::Fixed { .. } => Some(1),
            ParamDist::Choice { values } => Some(values.len()),
            _ => None,
        }
    }

    /// Finite support in declaration order (empty for ranges).
    pub fn support(&self) -> Vec<Value> {
        match self {
            ParamDist::Fixed { value } => vec![value.clone()],
            ParamDist::Choice { values } => values.clone(),
            _ => Vec::new(),
        }
    }

    pub fn contains(&self, v: &Value) -> bool {
        match self {
            ParamDist::Fixed { value } => value == v,
            ParamDist::Choice { values } => values.contains(v),
            ParamDist::IntRange { lo, hi, .. } => v.as_i64().is_some_and(|x| *lo <= x && x <= *hi),
            ParamDist::FloatRange { lo, hi, .. } => match v {
                Value::Float(x) => *lo <= *x && *x <= *hi,
                _ => false,
            },
        }
    }

    /// One independent draw: choice uniform, linear ranges uniform, log
    /// ranges uniform in log space. Integer ranges draw over
    /// `[lo - 0.5, hi + 0.5]` in the range's scale, round to nearest and clip.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match self {
            ParamDist::Fixed { value } => value.clone(),
            ParamDist::Choice { values } => values[rng.gen_range(0..values.len())].clone(),
            ParamDist::FloatRange { lo, hi, scale } => {
                let (a, b) = (scale.forward(*lo), scale.forward(*hi));
                let u: f64 = rng.gen();
                Value::Float(scale.inverse(a + u * (b - a)).clamp(*lo, *hi))
            }
            ParamDist::IntRange { lo, hi, scale } => {
                let a = scale.forward(*lo as f64 - 0.5);
                let b = scale.forward(*hi as f64 + 0.5);
                let u: f64 = rng.gen();
                let x = scale.inverse(a + u * (b - a)).round() as i64;
                Value::Int(x.clamp(*lo, *hi))
            }
        }
    }
}

fn range_problem(lo: f64, hi: f64, scale: Scale) -> Option<String> {
    if !(lo < hi) {
        Some(format!("range requires lo < hi (lo={lo}, hi={hi})"))
    } else if scale == Scale::Log && !(lo > 0.0) {
        Some(format!("log-scale range requires lo > 0 (lo={lo})"))
    } else {
        None
    }
}
