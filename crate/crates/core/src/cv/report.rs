use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Metric;
use crate::canonical;
use crate::error::Result;
use crate::estimators::{FittedPipeline, Predictions, ProblemType, Target};
use crate::pipeline::ParamConfig;
use crate::search::SearchTrace;
use crate::tabular::{mean_std, RowId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldStatus {
    Ok,
    Failed,
}

/// Out-of-fold model output, kept in memory for post-hoc analyses.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutput {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub predictions: Predictions,
    pub fitted: Arc<FittedPipeline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    /// Fold index as text, or `holdout` for a final test.
    pub label: String,
    pub n_train: usize,
    pub n_val: usize,
    pub config: ParamConfig,
    /// `None` marks a metric undefined on this fold.
    pub scores: BTreeMap<String, Option<f64>>,
    pub status: FoldStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchTrace>,
    #[serde(skip)]
    pub output: Option<FoldOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    /// Population standard deviation over folds.
    pub std: Option<f64>,
    pub n_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetFilter {
    pub column: String,
    pub level: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub n: usize,
    pub scores: BTreeMap<String, Option<f64>>,
    /// Metrics with no value in this group, with the reason.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub undefined: BTreeMap<String, String>,
}

/// Metrics recomputed within each group of a covariate; the first row is
/// the pooled `overall` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTable {
    pub column: String,
    pub rows: Vec<GroupRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `cv`, `nested_cv`, or `holdout`.
    pub protocol: String,
    pub problem_type: ProblemType,
    pub metrics: Vec<Metric>,
    pub folds: Vec<FoldReport>,
    pub aggregate: BTreeMap<String, MetricSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<SubsetFilter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratified: Option<GroupTable>,
    /// Content digest of everything above.
    pub digest: String,
}

impl EvalReport {
    pub(crate) fn assemble(
        protocol: &str,
        problem_type: ProblemType,
        metrics: &[Metric],
        folds: Vec<FoldReport>,
    ) -> Result<Self> {
        let mut warnings = Vec::new();
        for f in &folds {
            if let Some(e) = &f.error {
                warnings.push(format!("fold {} failed: {e}", f.label));
            }
            for (m, s) in &f.scores {
                if s.is_none() && f.status == FoldStatus::Ok {
                    warnings.push(format!("fold {}: {m} undefined", f.label));
                }
            }
        }
        let aggregate = metrics
            .iter()
            .map(|m| {
                let values: Vec<f64> = folds
                    .iter()
                    .filter_map(|f| f.scores.get(m.id()).copied().flatten())
                    .collect();
                let summary = if values.is_empty() {
                    MetricSummary {
                        mean: None,
                        std: None,
                        n_folds: 0,
                    }
                } else {
                    let (mean, std) = mean_std(&values);
                    MetricSummary {
                        mean: Some(mean),
                        std: Some(std),
                        n_folds: values.len(),
                    }
                };
                (m.id().to_string(), summary)
            })
            .collect();
        let mut report = EvalReport {
            protocol: protocol.to_string(),
            problem_type,
            metrics: metrics.to_vec(),
            folds,
            aggregate,
            warnings,
            subset: None,
            stratified: None,
            digest: String::new(),
        };
        report.seal()?;
        Ok(report)
    }

    /// Recompute the content digest after editing the report.
    pub fn seal(&mut self) -> Result<()> {
        self.digest = canonical::digest(self, &["digest"])?;
        Ok(())
    }

    /// Validation-row predictions of all successful folds, concatenated in
    /// fold order, with their dataset positions.
    pub fn pooled_predictions(&self) -> Option<(Vec<usize>, Predictions)> {
        let outputs: Vec<&FoldOutput> = self.folds.iter().filter_map(|f| f.output.as_ref()).collect();
        let first = outputs.first()?;
        let positions = outputs.iter().flat_map(|o| o.val.iter().copied()).collect();
        let pred = match &first.predictions {
            Predictions::Values(_) => Predictions::Values(
                outputs
                    .iter()
                    .flat_map(|o| match &o.predictions {
                        Predictions::Values(v) => v.clone(),
                        Predictions::Classes { .. } => unreachable!(),
                    })
                    .collect(),
            ),
            Predictions::Classes { .. } => {
                let mut proba = Vec::new();
                let mut labels = Vec::new();
                for o in &outputs {
                    if let Predictions::Classes { proba: p, labels: l } = &o.predictions {
                        proba.extend(p.iter().cloned());
                        labels.extend_from_slice(l);
                    }
                }
                Predictions::Classes { proba, labels }
            }
        };
        Some((positions, pred))
    }
}

pub(crate) fn score_all(metrics: &[Metric], truth: &Target, pred: &Predictions) -> BTreeMap<String, Option<f64>> {
    metrics
        .iter()
        .map(|m| (m.id().to_string(), m.score(truth, pred).ok()))
        .collect()
}

/// Recompute every metric within each group. Groups where a metric is
/// undefined keep their row, with the metric flagged.
pub fn post_stratify(
    column: &str,
    truth: &Target,
    pred: &Predictions,
    groups: &[String],
    metrics: &[Metric],
) -> GroupTable {
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(g.as_str()).or_default().push(i);
    }
    let row = |name: &str, idx: &[usize]| {
        let (t, p) = (truth.select(idx), pred.select(idx));
        let mut scores = BTreeMap::new();
        let mut undefined = BTreeMap::new();
        for m in metrics {
            match m.score(&t, &p) {
                Ok(v) => {
                    scores.insert(m.id().to_string(), Some(v));
                }
                Err(e) => {
                    scores.insert(m.id().to_string(), None);
                    undefined.insert(m.id().to_string(), e.to_string());
                }
            }
        }
        GroupRow {
            group: name.to_string(),
            n: idx.len(),
            scores,
            undefined,
        }
    };
    let all: Vec<usize> = (0..groups.len()).collect();
    let mut rows = vec![row("overall", &all)];
    rows.extend(by_group.iter().map(|(g, idx)| row(g, idx)));
    GroupTable {
        column: column.to_string(),
        rows,
    }
}

/// Row ids for dataset positions.
pub(crate) fn ids(row_ids: &[RowId], positions: &[usize]) -> Vec<RowId> {
    positions.iter().map(|&p| row_ids[p]).collect()
}
