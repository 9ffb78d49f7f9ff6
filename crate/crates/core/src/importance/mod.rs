//! Feature importance: native linear coefficients, permutation importance
//! with permuted-target p-values, and Shapley-value attributions.
//!
//! All importances live in the model's input space (after every transformer
//! step); each feature carries the raw column it derives from.

mod permutation;
mod shapley;

use serde::{Deserialize, Serialize};

pub use permutation::{permutation_importance, permuted_target_significance, SignificanceOptions};
pub use shapley::{shapley_explain, shapley_values, Attribution, ShapleyMode, EXACT_MAX_FEATURES};

use crate::error::{Error, Result};
use crate::estimators::{Feature, FittedEstimator, State};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_repeats: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_permutations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_coalitions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// `coefficients`, `permutation`, `permuted_target`, or `shapley`.
    pub method: String,
    pub features: Vec<String>,
    /// Raw dataset column each feature derives from.
    pub sources: Vec<String>,
    pub values: Vec<f64>,
    /// One coefficient vector per class, for multiclass linear models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instances: Vec<Attribution>,
    pub meta: ImportanceMeta,
}

impl ImportanceReport {
    pub(crate) fn new(method: &str, features: &[Feature], values: Vec<f64>) -> Self {
        ImportanceReport {
            method: method.to_string(),
            features: features.iter().map(|f| f.name.clone()).collect(),
            sources: features.iter().map(|f| f.source.clone()).collect(),
            values,
            per_class: None,
            p_values: None,
            base_value: None,
            instances: Vec::new(),
            meta: ImportanceMeta::default(),
        }
    }

    /// Feature indices by decreasing value (ties keep feature order).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]));
        idx
    }
}

/// Coefficients of a fitted ridge or logistic model, aligned with the
/// model's input features. Multiclass models report one vector per class
/// and, as the headline value, the mean absolute coefficient per feature.
pub fn coef_importance(model: &FittedEstimator) -> Result<ImportanceReport> {
    let State::Linear(linear) = &model.state else {
        return Err(Error::Unsupported(format!(
            "coefficient importance needs a linear model, not `{}`",
            model.estimator
        )));
    };
    if linear.coefs.len() == 1 {
        return Ok(ImportanceReport::new(
            "coefficients",
            &model.input,
            linear.coefs[0].clone(),
        ));
    }
    let k = linear.coefs.len() as f64;
    let values = (0..model.input.len())
        .map(|j| linear.coefs.iter().map(|c| c[j].abs()).sum::<f64>() / k)
        .collect();
    let mut report = ImportanceReport::new("coefficients", &model.input, values);
    report.per_class = Some(linear.coefs.clone());
    Ok(report)
}
