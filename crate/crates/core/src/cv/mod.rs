//! Leakage-safe evaluation: fold splitters, metrics, cross-validation,
//! nested model selection, and the final holdout test.
//!
//! Every fit receives a physically sliced copy of its training rows, and
//! every slice handed to a fit or predict is recorded in an
//! [`AccessLedger`] against the rows its phase was allowed to train on.

mod folds;
mod ledger;
mod metrics;
mod report;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

pub use folds::{make_folds, CVScheme, CvKind, Fold};
pub use ledger::{Access, AccessEntry, AccessLedger, LeakViolation};
pub use metrics::{
    accuracy, balanced_accuracy, log_loss, macro_f1, mae, r2, rmse, roc_auc, Direction, Metric, LOG_LOSS_EPS,
};
pub use report::{
    post_stratify, EvalReport, FoldOutput, FoldReport, FoldStatus, GroupRow, GroupTable, MetricSummary, SubsetFilter,
};

use report::{ids, score_all};

use crate::error::{Error, Result};
use crate::estimators::{FittedPipeline, Target};
use crate::pipeline::{bind, sample, BoundPipeline, Cardinality, ParamConfig, PipelineSpec};
use crate::search::{best_of, optimize, SearchStrategy, SearchTrace};
use crate::tabular::{DType, Dataset, Role, RowId, SplitIndices};

/// Runs evaluation protocols over one dataset, recording row access.
pub struct Evaluator<'a> {
    ds: &'a Dataset,
    metrics: Vec<Metric>,
    ledger: AccessLedger,
    cancel: Option<&'a AtomicBool>,
    progress: Option<&'a (dyn Fn(usize, usize) + Sync)>,
}

impl<'a> Evaluator<'a> {
    pub fn new(ds: &'a Dataset, metrics: &[Metric]) -> Self {
        Evaluator {
            ds,
            metrics: metrics.to_vec(),
            ledger: AccessLedger::new(),
            cancel: None,
            progress: None,
        }
    }

    /// Abort with [`Error::Cancelled`] at the next fit once `flag` is set.
    pub fn with_cancel(mut self, flag: &'a AtomicBool) -> Self {
        self.cancel = Some(flag);
        self
    }

    /// Called with (completed, total) each time an outer fold finishes.
    /// Calls may arrive out of order from parallel folds.
    pub fn with_progress(mut self, callback: &'a (dyn Fn(usize, usize) + Sync)) -> Self {
        self.progress = Some(callback);
        self
    }

    fn fold_done(&self, counter: &AtomicUsize, total: usize) {
        let done = counter.fetch_add(1, Ordering::SeqCst) + 1;
        if let Some(cb) = self.progress {
            cb(done, total);
        }
    }

    pub fn ledger(&self) -> &AccessLedger {
        &self.ledger
    }

    pub fn dataset(&self) -> &Dataset {
        self.ds
    }

    fn check_cancel(&self) -> Result<()> {
        match self.cancel {
            Some(flag) if flag.load(Ordering::Relaxed) => Err(Error::Cancelled),
            _ => Ok(()),
        }
    }

    fn precheck(&self, spec: &PipelineSpec, metrics: &[Metric]) -> Result<()> {
        let report = spec.validate();
        if !report.is_ok() {
            let msgs: Vec<String> = report
                .violations
                .iter()
                .map(|v| format!("{}: {}", v.path, v.message))
                .collect();
            return Err(Error::invalid(format!("invalid pipeline: {}", msgs.join("; "))));
        }
        if metrics.is_empty() {
            return Err(Error::invalid("at least one metric is required"));
        }
        for m in metrics {
            if !m.admits(spec.problem_type) {
                return Err(Error::invalid(format!(
                    "metric `{m}` does not apply to {} problems",
                    spec.problem_type.as_str()
                )));
            }
        }
        self.ds.target()?;
        Ok(())
    }

    /// The single configuration of an all-fixed spec.
    fn single_point(spec: &PipelineSpec) -> Result<ParamConfig> {
        if spec.space_cardinality() != Cardinality::Finite(1) {
            return Err(Error::invalid(
                "this protocol needs every parameter fixed; use nested evaluation to search",
            ));
        }
        sample(spec, 0)
    }

    fn fit(&self, phase: &str, bound: &BoundPipeline, train: &[usize], seed: u64) -> Result<FittedPipeline> {
        self.check_cancel()?;
        self.ledger.record(phase, Access::Fit, &ids(self.ds.row_ids(), train));
        FittedPipeline::fit(bound, self.ds, train, seed)
    }

    /// Fit on `train`, predict `val`, score every metric.
    fn run_fold(
        &self,
        phase: &str,
        fold: usize,
        label: String,
        config: ParamConfig,
        bound: &BoundPipeline,
        rows: (&[usize], &[usize]),
        seed: u64,
    ) -> Result<FoldReport> {
        let (train, val) = rows;
        let mut report = FoldReport {
            fold,
            label,
            n_train: train.len(),
            n_val: val.len(),
            config,
            scores: BTreeMap::new(),
            status: FoldStatus::Ok,
            error: None,
            search: None,
            output: None,
        };
        let outcome = self.fit(phase, bound, train, seed).and_then(|fitted| {
            self.ledger.record(phase, Access::Predict, &ids(self.ds.row_ids(), val));
            let pred = fitted.predict(self.ds, val)?;
            let truth = Target::from_dataset(self.ds, val, bound.problem_type)?;
            Ok((fitted, pred, truth))
        });
        match outcome {
            Ok((fitted, predictions, truth)) => {
                report.scores = score_all(&self.metrics, &truth, &predictions);
                report.output = Some(FoldOutput {
                    train: train.to_vec(),
                    val: val.to_vec(),
                    predictions,
                    fitted: Arc::new(fitted),
                });
            }
            Err(Error::Cancelled) => return Err(Error::Cancelled),
            Err(e) => {
                report.status = FoldStatus::Failed;
                report.error = Some(e.to_string());
                report.scores = self.metrics.iter().map(|m| (m.id().to_string(), None)).collect();
            }
        }
        Ok(report)
    }

    fn folds(&self, rows: &[usize], scheme: &CVScheme, seed: u64) -> Result<Vec<Fold>> {
        make_folds(self.ds, rows, scheme, scheme.seed.unwrap_or(seed))
    }

    /// Cross-validate an all-fixed pipeline over `train` rows.
    pub fn evaluate(&self, spec: &PipelineSpec, train: &[RowId], scheme: &CVScheme, seed: u64) -> Result<EvalReport> {
        self.precheck(spec, &self.metrics)?;
        let config = Self::single_point(spec)?;
        let bound = bind(spec, &config)?;
        let rows = self.ds.positions(train)?;
        self.ledger.declare("cv", train);
        let folds = self.folds(&rows, scheme, seed_of!(seed, "outer"))?;
        let done = AtomicUsize::new(0);
        let reports = folds
            .par_iter()
            .enumerate()
            .map(|(f, fold)| {
                let phase = format!("cv/fold/{f}");
                self.ledger.declare(&phase, &ids(self.ds.row_ids(), &fold.train));
                let report = self.run_fold(
                    &phase,
                    f,
                    f.to_string(),
                    config.clone(),
                    &bound,
                    (&fold.train, &fold.val),
                    seed_of!(seed, "fit", f),
                )?;
                self.fold_done(&done, folds.len());
                Ok(report)
            })
            .collect::<Result<Vec<_>>>()?;
        EvalReport::assemble("cv", spec.problem_type, &self.metrics, reports)
    }

    /// Hyperparameter search over `rows`, each candidate scored by the mean
    /// of `objective` over `inner` folds of those rows only.
    pub fn search(
        &self,
        phase: &str,
        spec: &PipelineSpec,
        rows: &[usize],
        inner: &CVScheme,
        strategy: &SearchStrategy,
        objective: Metric,
        seed: u64,
    ) -> Result<SearchTrace> {
        let inner_folds = self.folds(rows, inner, seed_of!(seed, "inner"))?;
        for (j, fold) in inner_folds.iter().enumerate() {
            self.ledger
                .declare(&format!("{phase}/inner/{j}"), &ids(self.ds.row_ids(), &fold.train));
        }
        let problem = spec.problem_type;
        optimize(
            spec,
            strategy,
            seed_of!(seed, "search"),
            objective.direction(),
            |c, config| {
                let bound = bind(spec, config)?;
                let mut total = 0.0;
                for (j, fold) in inner_folds.iter().enumerate() {
                    let fit_phase = format!("{phase}/inner/{j}/candidate/{c}");
                    let fitted = self.fit(&fit_phase, &bound, &fold.train, seed_of!(seed, "fit", "inner", j))?;
                    self.ledger
                        .record(&fit_phase, Access::Predict, &ids(self.ds.row_ids(), &fold.val));
                    let pred = fitted.predict(self.ds, &fold.val)?;
                    let truth = Target::from_dataset(self.ds, &fold.val, problem)?;
                    total += objective.score(&truth, &pred)?;
                }
                Ok(total / inner_folds.len() as f64)
            },
        )
    }

    /// Nested cross-validation: per outer fold, search on the outer-train
    /// rows with inner CV, refit the winner on all outer-train rows, score
    /// it on the outer-validation rows.
    #[allow(clippy::too_many_arguments)]
    pub fn nested_evaluate(
        &self,
        spec: &PipelineSpec,
        train: &[RowId],
        outer: &CVScheme,
        inner: &CVScheme,
        strategy: &SearchStrategy,
        objective: Metric,
        seed: u64,
    ) -> Result<EvalReport> {
        self.precheck(spec, &self.metrics)?;
        if !self.metrics.contains(&objective) {
            return Err(Error::invalid(format!(
                "objective `{objective}` must be one of the metrics"
            )));
        }
        if strategy.budget < 1 {
            return Err(Error::invalid("search budget must be >= 1"));
        }
        let rows = self.ds.positions(train)?;
        self.ledger.declare("nested", train);
        let folds = self.folds(&rows, outer, seed_of!(seed, "outer"))?;
        let done = AtomicUsize::new(0);
        let reports = folds
            .par_iter()
            .enumerate()
            .map(|(f, fold)| {
                let phase = format!("nested/fold/{f}");
                self.ledger.declare(&phase, &ids(self.ds.row_ids(), &fold.train));
                let fold_seed = seed_of!(seed, "fold", f);
                let trace = match self.search(
                    &format!("{phase}/search"),
                    spec,
                    &fold.train,
                    inner,
                    strategy,
                    objective,
                    fold_seed,
                ) {
                    Ok(t) => t,
                    Err(Error::Cancelled) => return Err(Error::Cancelled),
                    Err(e) => {
                        self.fold_done(&done, folds.len());
                        return Ok(self.failed_fold(f, fold, e));
                    }
                };
                let config = best_of(&trace)?.clone();
                let mut report = match bind(spec, &config) {
                    Ok(bound) => self.run_fold(
                        &format!("{phase}/refit"),
                        f,
                        f.to_string(),
                        config,
                        &bound,
                        (&fold.train, &fold.val),
                        seed_of!(seed, "fit", f),
                    )?,
                    Err(e) => self.failed_fold(f, fold, e),
                };
                report.search = Some(trace);
                self.fold_done(&done, folds.len());
                Ok(report)
            })
            .collect::<Result<Vec<_>>>()?;
        EvalReport::assemble("nested_cv", spec.problem_type, &self.metrics, reports)
    }

    fn failed_fold(&self, f: usize, fold: &Fold, e: Error) -> FoldReport {
        FoldReport {
            fold: f,
            label: f.to_string(),
            n_train: fold.train.len(),
            n_val: fold.val.len(),
            config: ParamConfig { steps: Vec::new() },
            scores: self.metrics.iter().map(|m| (m.id().to_string(), None)).collect(),
            status: FoldStatus::Failed,
            error: Some(e.to_string()),
            search: None,
            output: None,
        }
    }

    /// Fit `bound` on `train` under a declared phase of its own.
    pub fn fit_model(&self, phase: &str, bound: &BoundPipeline, train: &[RowId], seed: u64) -> Result<FittedPipeline> {
        let rows = self.ds.positions(train)?;
        self.ledger.declare(phase, train);
        self.fit(phase, bound, &rows, seed)
    }

    /// Fit once on the split's training rows and score once on its test
    /// rows. The report has a single fold labelled `holdout`.
    pub fn final_test(&self, spec: &PipelineSpec, split: &SplitIndices, seed: u64) -> Result<EvalReport> {
        self.precheck(spec, &self.metrics)?;
        let config = Self::single_point(spec)?;
        let bound = bind(spec, &config)?;
        let train = self.ds.positions(&split.train)?;
        let test = self.ds.positions(&split.test)?;
        self.ledger.declare("holdout", &split.train);
        let report = self.run_fold(
            "holdout",
            0,
            "holdout".into(),
            config,
            &bound,
            (&train, &test),
            seed_of!(seed, "fit", "holdout"),
        )?;
        EvalReport::assemble("holdout", spec.problem_type, &self.metrics, vec![report])
    }
}

/// Rows of `ds` whose `column` equals `level`, as a new dataset keeping the
/// original row ids. The column must be a discrete non-input column.
pub fn subset(ds: &Dataset, filter: &SubsetFilter) -> Result<Dataset> {
    let col = ds.column(&filter.column)?;
    if col.role == Role::InputFeature || col.dtype == DType::Continuous {
        return Err(Error::invalid(format!(
            "subset column `{}` must be a binary or categorical non-input column",
            filter.column
        )));
    }
    let positions: Vec<usize> = (0..ds.n_rows())
        .filter(|&p| col.label(p).as_deref() == Some(filter.level.as_str()))
        .collect();
    if positions.is_empty() {
        return Err(Error::invalid(format!(
            "no rows have `{}` = `{}`",
            filter.column, filter.level
        )));
    }
    Ok(ds.take_rows(&positions))
}

/// Run `op` on the subset selected by `filter` and tag its report.
pub fn subset_run<F>(ds: &Dataset, filter: &SubsetFilter, op: F) -> Result<EvalReport>
where
    F: FnOnce(&Dataset) -> Result<EvalReport>,
{
    let sub = subset(ds, filter)?;
    let mut report = op(&sub)?;
    report.subset = Some(filter.clone());
    report.seal()?;
    Ok(report)
}
