//! In-repo implementations of every transformer and model the pipeline
//! registry exposes.
//!
//! Estimators consume a [`Frame`]: a dense row-major matrix plus a feature
//! schema. Missing cells are `NaN`; models reject them, imputers fill them.
//! Every fitted estimator remembers the schema it was fitted on and refuses
//! frames with a different one.

mod knn;
mod linear;
mod pipeline;
pub mod registry;
mod transform;
mod tree;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{ColumnScope, Value};
use crate::tabular::{ColumnValues, DType, Dataset, Role};

pub use linear::{logistic_gradient, logistic_objective, LinearKind, LinearModel};
pub use pipeline::FittedPipeline;
pub use registry::StepKind;
pub use tree::{Node, SplitRule, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemType {
    Regression,
    Binary,
    Categorical,
}

impl ProblemType {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemType::Regression => "regression",
            ProblemType::Binary => "binary",
            ProblemType::Categorical => "categorical",
        }
    }

    pub fn is_classification(self) -> bool {
        self != ProblemType::Regression
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum FeatureKind {
    Continuous,
    Binary,
    Categorical { levels: Vec<String> },
}

impl FeatureKind {
    pub fn in_scope(&self, scope: ColumnScope) -> bool {
        match scope {
            ColumnScope::AllInput => true,
            ColumnScope::ContinuousOnly => matches!(self, FeatureKind::Continuous),
            ColumnScope::CategoricalOnly => !matches!(self, FeatureKind::Continuous),
        }
    }
}

/// One column of a feature matrix. `source` names the raw dataset column it
/// derives from (differs from `name` after one-hot expansion).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    pub source: String,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Matrix {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        Matrix {
            n_rows: rows.len(),
            n_cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n_cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            data,
        }
    }

    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.n_rows * cols.len());
        for i in 0..self.n_rows {
            data.extend(cols.iter().map(|&j| self.get(i, j)));
        }
        Matrix {
            n_rows: self.n_rows,
            n_cols: cols.len(),
            data,
        }
    }
}

/// Feature matrix with its schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub features: Vec<Feature>,
    pub x: Matrix,
}

impl Frame {
    pub fn new(features: Vec<Feature>, x: Matrix) -> Self {
        debug_assert_eq!(features.len(), x.n_cols);
        Frame { features, x }
    }

    /// All-continuous frame with generated names `x0, x1, ..`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let x = Matrix::from_rows(rows);
        let features = (0..x.n_cols)
            .map(|j| Feature {
                name: format!("x{j}"),
                kind: FeatureKind::Continuous,
                source: format!("x{j}"),
            })
            .collect();
        Frame { features, x }
    }

    /// Input-feature columns of `ds` at the given positions. Binary and
    /// categorical cells become level codes; missing cells become `NaN`.
    pub fn from_dataset(ds: &Dataset, positions: &[usize]) -> Frame {
        let cols: Vec<_> = ds.columns().iter().filter(|c| c.role == Role::InputFeature).collect();
        let mut x = Matrix::zeros(positions.len(), cols.len());
        for (j, col) in cols.iter().enumerate() {
            for (i, &p) in positions.iter().enumerate() {
                x.set(i, j, col.numeric(p).unwrap_or(f64::NAN));
            }
        }
        let features = cols
            .iter()
            .map(|c| Feature {
                name: c.name.clone(),
                kind: match c.dtype {
                    DType::Continuous => FeatureKind::Continuous,
                    DType::Binary => FeatureKind::Binary,
                    DType::Categorical => FeatureKind::Categorical {
                        levels: c.levels.clone(),
                    },
                },
                source: c.name.clone(),
            })
            .collect();
        Frame { features, x }
    }

    pub fn n_rows(&self) -> usize {
        self.x.n_rows
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.x.data.iter().any(|v| v.is_nan())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Frame {
        Frame {
            features: self.features.clone(),
            x: self.x.select_rows(rows),
        }
    }
}

/// Supervision signal: real values, or class indices into `levels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Continuous(Vec<f64>),
    Classes { codes: Vec<usize>, levels: Vec<String> },
}

impl Target {
    pub fn from_dataset(ds: &Dataset, positions: &[usize], problem: ProblemType) -> Result<Target> {
        let col = ds.target()?;
        if let Some(p) = positions.iter().find(|&&p| col.is_missing(p)) {
            return Err(Error::invalid(format!(
                "target `{}` is missing at row {}",
                col.name,
                ds.row_ids()[*p]
            )));
        }
        match (problem, &col.values) {
            (ProblemType::Regression, ColumnValues::Numeric(v)) => {
                Ok(Target::Continuous(positions.iter().map(|&p| v[p]).collect()))
            }
            (ProblemType::Regression, _) => Err(Error::Type(format!(
                "regression needs a continuous target; `{}` is {}",
                col.name,
                col.dtype.as_str()
            ))),
            (ProblemType::Binary, ColumnValues::Codes(c)) if col.levels.len() == 2 => Ok(Target::Classes {
                codes: positions.iter().map(|&p| c[p] as usize).collect(),
                levels: col.levels.clone(),
            }),
            (ProblemType::Categorical, ColumnValues::Codes(c)) if col.levels.len() >= 2 => Ok(Target::Classes {
                codes: positions.iter().map(|&p| c[p] as usize).collect(),
                levels: col.levels.clone(),
            }),
            (p, _) => Err(Error::Type(format!(
                "{} problem is incompatible with target `{}` ({}, {} levels)",
                p.as_str(),
                col.name,
                col.dtype.as_str(),
                col.levels.len()
            ))),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Target::Continuous(v) => v.len(),
            Target::Classes { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            Target::Classes { levels, .. } => Some(levels.len()),
            Target::Continuous(_) => None,
        }
    }

    /// Numeric view (class codes as reals).
    pub fn as_f64(&self) -> Vec<f64> {
        match self {
            Target::Continuous(v) => v.clone(),
            Target::Classes { codes, .. } => codes.iter().map(|&c| c as f64).collect(),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Target {
        match self {
            Target::Continuous(v) => Target::Continuous(rows.iter().map(|&r| v[r]).collect()),
            Target::Classes { codes, levels } => Target::Classes {
                codes: rows.iter().map(|&r| codes[r]).collect(),
                levels: levels.clone(),
            },
        }
    }

    /// Same target with values reordered by `perm` (value i := value perm[i]).
    pub fn permuted(&self, perm: &[usize]) -> Target {
        self.select(perm)
    }
}

/// Model output: real values, or per-class probability rows plus argmax
/// labels (ties resolve to the lowest class index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictions {
    Values(Vec<f64>),
    Classes { proba: Vec<Vec<f64>>, labels: Vec<usize> },
}

impl Predictions {
    pub fn from_proba(proba: Vec<Vec<f64>>) -> Self {
        let labels = proba.iter().map(|row| argmax(row)).collect();
        Predictions::Classes { proba, labels }
    }

    pub fn len(&self) -> usize {
        match self {
            Predictions::Values(v) => v.len(),
            Predictions::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Predictions {
        match self {
            Predictions::Values(v) => Predictions::Values(rows.iter().map(|&r| v[r]).collect()),
            Predictions::Classes { proba, labels } => Predictions::Classes {
                proba: rows.iter().map(|&r| proba[r].clone()).collect(),
                labels: rows.iter().map(|&r| labels[r]).collect(),
            },
        }
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Learned state per estimator family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum State {
    Linear(LinearModel),
    Tree {
        tree: Tree,
    },
    Forest {
        trees: Vec<Tree>,
    },
    Knn {
        x: Matrix,
        y: Target,
        k: usize,
    },
    Constant {
        output: Vec<f64>,
        classification: bool,
    },
    Affine {
        columns: Vec<Option<(f64, f64)>>,
    },
    Impute {
        fill: Vec<Option<f64>>,
    },
    OneHot {
        expansions: Vec<Option<Vec<u32>>>,
        output: Vec<Feature>,
    },
    Select {
        keep: Vec<usize>,
    },
}

/// Fitting context that is not a hyperparameter.
#[derive(Debug, Clone, Copy)]
pub struct FitContext {
    pub seed: u64,
    pub scope: ColumnScope,
}

impl Default for FitContext {
    fn default() -> Self {
        FitContext {
            seed: 0,
            scope: ColumnScope::AllInput,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEstimator {
    pub estimator: String,
    pub input: Vec<Feature>,
    pub state: State,
}

pub(crate) fn param_f64(params: &BTreeMap<String, Value>, name: &str, default: f64) -> f64 {
    params.get(name).and_then(Value::as_f64).unwrap_or(default)
}

pub(crate) fn param_usize(params: &BTreeMap<String, Value>, name: &str, default: usize) -> usize {
    params
        .get(name)
        .and_then(Value::as_i64)
        .map_or(default, |v| v.max(0) as usize)
}

fn require_complete(id: &str, frame: &Frame) -> Result<()> {
    if let Some(j) = (0..frame.x.n_cols).find(|&j| (0..frame.n_rows()).any(|i| frame.x.get(i, j).is_nan())) {
        return Err(Error::fit(
            id,
            format!(
                "feature `{}` has missing values; add an imputer step",
                frame.features[j].name
            ),
        ));
    }
    Ok(())
}

/// Fit an estimator by registry id. Models and supervised selectors need a
/// target of the same length as the frame.
pub fn fit(
    id: &str,
    params: &BTreeMap<String, Value>,
    frame: &Frame,
    target: Option<&Target>,
    ctx: FitContext,
) -> Result<FittedEstimator> {
    if frame.n_rows() == 0 {
        return Err(Error::fit(id, "empty training matrix"));
    }
    let info = registry::lookup(id).ok_or_else(|| Error::invalid(format!("unknown estimator `{id}`")))?;
    let needs_target = info.kind == StepKind::Model || id == "select_univariate";
    let target = match target {
        Some(t) if t.len() != frame.n_rows() => {
            return Err(Error::fit(
                id,
                format!("target has {} rows, features {}", t.len(), frame.n_rows()),
            ));
        }
        None if needs_target => return Err(Error::fit(id, "a target is required")),
        t => t,
    };
    if info.kind == StepKind::Model {
        require_complete(id, frame)?;
    }
    let state = match id {
        "ridge" => linear::fit_ridge(frame, target.unwrap(), param_f64(params, "alpha", 1.0))?,
        "logistic" => linear::fit_logistic(
            frame,
            target.unwrap(),
            param_f64(params, "alpha", 1.0),
            param_usize(params, "max_iter", 10_000),
            param_f64(params, "tol", 1e-8),
        )?,
        "dtree" => tree::fit_dtree(frame, target.unwrap(), params)?,
        "forest" => tree::fit_forest(frame, target.unwrap(), params, ctx.seed)?,
        "knn" => knn::fit(frame, target.unwrap(), param_usize(params, "k", 5))?,
        "constant" => knn::fit_constant(target.unwrap()),
        "scaler_standard" => transform::fit_standard(frame, ctx.scope),
        "scaler_robust" => transform::fit_robust(frame, ctx.scope),
        "impute_mean" => transform::fit_impute(frame, ctx.scope, false),
        "impute_median" => transform::fit_impute(frame, ctx.scope, true),
        "onehot" => transform::fit_onehot(frame, ctx.scope),
        "select_variance" => transform::fit_variance(frame, ctx.scope, param_f64(params, "threshold", 0.0))?,
        "select_univariate" => {
            transform::fit_univariate(frame, target.unwrap(), ctx.scope, param_usize(params, "k", 10))?
        }
        _ => return Err(Error::Unsupported(format!("estimator `{id}` has no implementation"))),
    };
    Ok(FittedEstimator {
        estimator: id.to_string(),
        input: frame.features.clone(),
        state,
    })
}

impl FittedEstimator {
    pub fn is_model(&self) -> bool {
        matches!(
            self.state,
            State::Linear(_) | State::Tree { .. } | State::Forest { .. } | State::Knn { .. } | State::Constant { .. }
        )
    }

    fn check_schema(&self, frame: &Frame) -> Result<()> {
        for (i, want) in self.input.iter().enumerate() {
            match frame.features.get(i) {
                Some(got) if got == want => {}
                Some(got) => {
                    return Err(Error::SchemaMismatch {
                        column: got.name.clone(),
                        message: format!("expected `{}` ({:?}) at position {i}", want.name, want.kind),
                    })
                }
                None => {
                    return Err(Error::SchemaMismatch {
                        column: want.name.clone(),
                        message: "column absent from input".into(),
                    })
                }
            }
        }
        if let Some(extra) = frame.features.get(self.input.len()) {
            return Err(Error::SchemaMismatch {
                column: extra.name.clone(),
                message: "column not present at fit time".into(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, frame: &Frame) -> Result<Predictions> {
        self.check_schema(frame)?;
        if !self.is_model() {
            return Err(Error::Unsupported(format!(
                "`{}` is a transformer, not a model",
                self.estimator
            )));
        }
        require_complete(&self.estimator, frame)?;
        Ok(match &self.state {
            State::Linear(m) => m.predict(&frame.x),
            State::Tree { tree } => tree::predict_trees(std::slice::from_ref(tree), &frame.x),
            State::Forest { trees } => tree::predict_trees(trees, &frame.x),
            State::Knn { x, y, k } => knn::predict(x, y, *k, &frame.x),
            State::Constant { output, classification } => {
                let n = frame.n_rows();
                if *classification {
                    Predictions::from_proba(vec![output.clone(); n])
                } else {
                    Predictions::Values(vec![output[0]; n])
                }
            }
            _ => unreachable!(),
        })
    }

    pub fn transform(&self, frame: &Frame) -> Result<Frame> {
        self.check_schema(frame)?;
        if self.is_model() {
            return Err(Error::Unsupported(format!(
                "`{}` is a model, not a transformer",
                self.estimator
            )));
        }
        Ok(transform::apply(&self.state, frame))
    }
}
