//! Run configuration document and its validation.
//!
//! A run config is one JSON document. Validation reports every problem it
//! can find, each with the dotted path of the offending key
//! (`cv.outer.k`, `pipeline.steps[1].params.alpha`, `metrics[0]`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::cv::{CVScheme, Metric, SubsetFilter};
use crate::error::{ConfigIssue, Error, Result};
use crate::pipeline::{Cardinality, PipelineSpec};
use crate::search::SearchStrategy;
use crate::tabular::{default_missing_tokens, DType, FlagDisposition, LoadOptions, OutlierMethod};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierRule {
    pub column: String,
    pub method: OutlierMethod,
    #[serde(default = "default_disposition")]
    pub action: FlagDisposition,
}

fn default_disposition() -> FlagDisposition {
    FlagDisposition::DropRows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// CSV path; relative paths resolve against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Id of a dataset uploaded to the API service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub dtypes: BTreeMap<String, DType>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outliers: Vec<OutlierRule>,
}

impl DatasetSection {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            dtype_overrides: self.dtypes.clone(),
            missing_tokens: match &self.missing_tokens {
                Some(t) => t.iter().cloned().collect(),
                None => default_missing_tokens(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolesSection {
    pub target: String,
    /// Columns kept out of the feature matrix (groups, covariates).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub non_input: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratify_by: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSection {
    pub outer: CVScheme,
    /// Required when the pipeline has anything to search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<CVScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_stratify_by: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<SubsetFilter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermutationSection {
    /// Defaults to the objective.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    #[serde(default = "default_repeats")]
    pub n_repeats: usize,
}

fn default_repeats() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignificanceSection {
    pub n_permutations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainRows {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapleySection {
    /// Rows to explain. Test rows require a split section.
    pub rows: ExplainRows,
    #[serde(default = "default_background")]
    pub n_background: usize,
    #[serde(default = "default_explain")]
    pub n_explain: usize,
    /// Absent means exact enumeration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_coalitions: Option<usize>,
    /// Class whose probability is explained; defaults to the last class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_index: Option<usize>,
}

fn default_background() -> usize {
    20
}

fn default_explain() -> usize {
    10
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceSection {
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub coefficients: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<PermutationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significance: Option<SignificanceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shapley: Option<ShapleySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub roles: RolesSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSection>,
    pub pipeline: PipelineSpec,
    pub cv: CvSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchStrategy>,
    pub metrics: Vec<Metric>,
    /// Metric the search optimizes; defaults to the first metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<Metric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<ImportanceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Keys that must be present, as paths into the document.
const REQUIRED: [&str; 7] = [
    "dataset",
    "roles",
    "roles.target",
    "pipeline",
    "pipeline.problem_type",
    "pipeline.steps",
    "cv",
];

fn lookup<'a>(doc: &'a Json, path: &str) -> Option<&'a Json> {
    path.split('.').try_fold(doc, |node, key| node.get(key))
}

impl RunConfig {
    pub fn objective(&self) -> Metric {
        self.objective.unwrap_or(self.metrics[0])
    }

    /// True when the pipeline space has more than one configuration.
    pub fn needs_search(&self) -> bool {
        self.pipeline.space_cardinality() != Cardinality::Finite(1)
    }

    /// Parse and validate a config document.
    pub fn from_json(doc: &Json) -> std::result::Result<RunConfig, Vec<ConfigIssue>> {
        if !doc.is_object() {
            return Err(vec![ConfigIssue::new("", "config must be a JSON object")]);
        }
        let mut issues: Vec<ConfigIssue> = REQUIRED
            .iter()
            .filter(|path| {
                let parent = path.rsplit_once('.').map(|(p, _)| p);
                // report a missing child only when its parent exists
                parent.is_none_or(|p| lookup(doc, p).is_some_and(Json::is_object)) && lookup(doc, path).is_none()
            })
            .map(|path| ConfigIssue::new(*path, "missing required key"))
            .collect();
        if doc.get("cv").is_some_and(Json::is_object) && lookup(doc, "cv.outer").is_none() {
            issues.push(ConfigIssue::new("cv.outer", "missing required key"));
        }
        if doc.get("metrics").is_none() {
            issues.push(ConfigIssue::new("metrics", "missing required key"));
        }
        if !issues.is_empty() {
            return Err(issues);
        }
        let config: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            vec![ConfigIssue::new(path, e.into_inner().to_string())]
        })?;
        let issues = config.check();
        if issues.is_empty() {
            Ok(config)
        } else {
            Err(issues)
        }
    }

    pub fn from_str(text: &str) -> Result<(RunConfig, Json)> {
        let doc: Json = serde_json::from_str(text)
            .map_err(|e| Error::Config(vec![ConfigIssue::new("", format!("not valid JSON: {e}"))]))?;
        let config = RunConfig::from_json(&doc).map_err(Error::Config)?;
        Ok((config, doc))
    }

    /// Semantic checks that need no dataset.
    pub fn check(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut push = |path: String, message: String| issues.push(ConfigIssue::new(path, message));
        match (&self.dataset.path, &self.dataset.id) {
            (None, None) => push("dataset.path".into(), "one of `path` or `id` is required".into()),
            (Some(_), Some(_)) => push("dataset".into(), "give either `path` or `id`, not both".into()),
            _ => {}
        }
        for (i, rule) in self.dataset.outliers.iter().enumerate() {
            let bad = match rule.method {
                OutlierMethod::Std { k } => !(k > 0.0),
                OutlierMethod::Quantile { lo, hi } => !(0.0 <= lo && lo < hi && hi <= 1.0),
            };
            if bad {
                push(
                    format!("dataset.outliers[{i}].method"),
                    "needs k > 0 or 0 <= lo < hi <= 1".into(),
                );
            }
        }
        if self.roles.non_input.contains(&self.roles.target) {
            push(
                "roles.non_input".into(),
                format!("`{}` is the target", self.roles.target),
            );
        }
        if let Some(split) = &self.split {
            if !(split.test_fraction > 0.0 && split.test_fraction < 1.0) {
                push(
                    "split.test_fraction".into(),
                    format!("must lie in (0, 1), got {}", split.test_fraction),
                );
            }
            if split.stratify_by.is_some() && split.group_by.is_some() {
                push("split".into(), "set at most one of `stratify_by` and `group_by`".into());
            }
        }
        for v in self.pipeline.validate().violations {
            push(format!("pipeline.{}", v.path), v.message);
        }
        for (field, msg) in self.cv.outer.check() {
            push(format!("cv.outer.{field}"), msg);
        }
        if let Some(inner) = &self.cv.inner {
            for (field, msg) in inner.check() {
                push(format!("cv.inner.{field}"), msg);
            }
        }
        if self.needs_search() {
            if self.cv.inner.is_none() {
                push(
                    "cv.inner".into(),
                    "required when the pipeline has parameters to search".into(),
                );
            }
            if self.search.is_none() {
                push(
                    "search".into(),
                    "required when the pipeline has parameters to search".into(),
                );
            }
        }
        if let Some(search) = &self.search {
            for (field, msg) in search.check() {
                push(format!("search.{field}"), msg);
            }
        }
        if self.metrics.is_empty() {
            push("metrics".into(), "list at least one metric".into());
        }
        for (i, m) in self.metrics.iter().enumerate() {
            if !m.admits(self.pipeline.problem_type) {
                push(
                    format!("metrics[{i}]"),
                    format!(
                        "`{m}` does not apply to {} problems",
                        self.pipeline.problem_type.as_str()
                    ),
                );
            }
        }
        if let Some(obj) = self.objective {
            if !self.metrics.contains(&obj) {
                push("objective".into(), format!("`{obj}` must be one of `metrics`"));
            }
        }
        if let Some(imp) = &self.importance {
            if let Some(p) = &imp.permutation {
                if p.n_repeats < 1 {
                    push("importance.permutation.n_repeats".into(), "must be >= 1".into());
                }
                if let Some(m) = p.metric {
                    if !m.admits(self.pipeline.problem_type) {
                        push("importance.permutation.metric".into(), format!("`{m}` does not apply"));
                    }
                }
            }
            if let Some(s) = &imp.significance {
                if s.n_permutations < 10 {
                    push("importance.significance.n_permutations".into(), "must be >= 10".into());
                }
            }
            if let Some(s) = &imp.shapley {
                if s.n_background < 1 {
                    push("importance.shapley.n_background".into(), "must be >= 1".into());
                }
                if s.n_explain < 1 {
                    push("importance.shapley.n_explain".into(), "must be >= 1".into());
                }
                if s.rows == ExplainRows::Test && self.split.is_none() {
                    push("importance.shapley.rows".into(), "`test` needs a split section".into());
                }
            }
        }
        issues
    }
}
