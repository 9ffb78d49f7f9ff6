//! End-to-end run: load → split → (nested) cross-validation → final model
//! → importance → run record.
//!
//! [`prepare`] does everything that can fail because of the config or the
//! data (so callers can reject a run before queueing it) and fixes the run
//! id. [`Prepared::execute`] always produces a record; errors past that
//! point end up in `status`/`error`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use rand::seq::SliceRandom;
use serde_json::Value as Json;

use crate::canonical;
use crate::config::{ExplainRows, RunConfig};
use crate::cv::{self, post_stratify, Access, EvalReport, Evaluator, Metric};
use crate::error::{ConfigIssue, Error, Result};
use crate::estimators::{FittedPipeline, Frame, Matrix, Predictions, ProblemType, Target};
use crate::importance::{
    coef_importance, permutation_importance, permuted_target_significance, shapley_explain, ImportanceReport,
    ShapleyMode, SignificanceOptions,
};
use crate::pipeline::{bind, sample, ParamConfig};
use crate::runstore::{
    run_id, Artifact, Audit, DatasetRef, Phase, Reports, RunLog, RunRecord, RunStatus, SCHEMA_VERSION, TOOL_VERSION,
};
use crate::search::best_of;
use crate::seeding;
use crate::tabular::{detect_outliers, drop_flagged, global_split, load_csv, DType, Dataset, Role, RowId, SchemaView};

/// Environment variable consulted for the seed when neither the caller nor
/// the config sets one.
pub const SEED_ENV: &str = "WB_SEED";

/// Where to find the data and which seed to use.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config seed.
    pub seed: Option<u64>,
    /// Directory relative dataset paths resolve against.
    pub base_dir: PathBuf,
    /// Directory holding uploaded datasets as `<id>.csv`, for `dataset.id`.
    pub datasets_dir: Option<PathBuf>,
    /// Read the data from here instead of the configured location.
    pub data_override: Option<PathBuf>,
    /// Refuse to run unless the loaded data has this fingerprint and schema.
    pub expect: Option<(String, SchemaView)>,
}

/// Execution controls that do not affect results.
#[derive(Default)]
pub struct RunControl<'a> {
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    pub cancel: Option<&'a AtomicBool>,
    /// Called with (phase, completed outer folds, total outer folds).
    pub progress: Option<&'a (dyn Fn(&str, usize, usize) + Sync)>,
}

/// Caller seed, else config seed, else `WB_SEED`, else 0.
pub fn resolve_seed(cli: Option<u64>, config: &RunConfig) -> Result<u64> {
    if let Some(s) = cli.or(config.seed) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            Error::Config(vec![ConfigIssue::new(
                "seed",
                format!("{SEED_ENV}=`{v}` is not an unsigned integer"),
            )])
        }),
        Err(_) => Ok(0),
    }
}

/// A validated run whose data is loaded and whose id is known.
pub struct Prepared {
    config: RunConfig,
    doc: Json,
    seed: u64,
    dataset: DatasetRef,
    ds: Dataset,
    run_id: String,
    log: RunLog,
}

fn resolve_path(config: &RunConfig, opts: &RunOptions) -> Result<(String, PathBuf)> {
    if let Some(p) = &opts.data_override {
        let source = config
            .dataset
            .path
            .clone()
            .or(config.dataset.id.clone())
            .unwrap_or_default();
        return Ok((source, p.clone()));
    }
    if let Some(p) = &config.dataset.path {
        let path = Path::new(p);
        let resolved = if path.is_absolute() {
            path.to_path_buf()
        } else {
            opts.base_dir.join(path)
        };
        return Ok((p.clone(), resolved));
    }
    let id = config.dataset.id.clone().unwrap_or_default();
    let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric());
    match &opts.datasets_dir {
        Some(dir) if valid => Ok((id.clone(), dir.join(format!("{id}.csv")))),
        _ => Err(Error::Config(vec![ConfigIssue::new(
            "dataset.id",
            format!("unknown dataset `{id}`"),
        )])),
    }
}

/// Human-readable differences between the expected and the loaded data.
pub fn fingerprint_diff(expected: &SchemaView, found: &SchemaView) -> String {
    let mut diffs = Vec::new();
    if expected.n_rows != found.n_rows {
        diffs.push(format!("rows {} -> {}", expected.n_rows, found.n_rows));
    }
    for c in &expected.columns {
        match found.columns.iter().find(|f| f.name == c.name) {
            None => diffs.push(format!("column `{}` removed", c.name)),
            Some(f) if f.dtype != c.dtype => diffs.push(format!(
                "column `{}` dtype {} -> {}",
                c.name,
                c.dtype.as_str(),
                f.dtype.as_str()
            )),
            Some(f) if f.n_missing != c.n_missing => diffs.push(format!(
                "column `{}` missing {} -> {}",
                c.name, c.n_missing, f.n_missing
            )),
            Some(f) if f.levels != c.levels => diffs.push(format!("column `{}` levels changed", c.name)),
            _ => {}
        }
    }
    for f in &found.columns {
        if !expected.columns.iter().any(|c| c.name == f.name) {
            diffs.push(format!("column `{}` added", f.name));
        }
    }
    if diffs.is_empty() {
        diffs.push("same schema, cell values differ".into());
    }
    diffs.join("; ")
}

/// Config checks that need the loaded data.
fn check_against(config: &RunConfig, ds: &Dataset) -> Vec<ConfigIssue> {
    let mut issues = Vec::new();
    let need = |issues: &mut Vec<ConfigIssue>, path: String, name: &str| {
        if ds.column(name).is_err() {
            issues.push(ConfigIssue::new(path, format!("no column `{name}` in the dataset")));
            false
        } else {
            true
        }
    };
    let target_ok = need(&mut issues, "roles.target".into(), &config.roles.target);
    for (i, c) in config.roles.non_input.iter().enumerate() {
        need(&mut issues, format!("roles.non_input[{i}]"), c);
    }
    for (i, rule) in config.dataset.outliers.iter().enumerate() {
        need(&mut issues, format!("dataset.outliers[{i}].column"), &rule.column);
    }
    if let Some(split) = &config.split {
        if let Some(c) = &split.stratify_by {
            need(&mut issues, "split.stratify_by".into(), c);
        }
        if let Some(c) = &split.group_by {
            need(&mut issues, "split.group_by".into(), c);
        }
    }
    let schemes = [
        ("cv.outer", Some(&config.cv.outer)),
        ("cv.inner", config.cv.inner.as_ref()),
    ];
    for (path, scheme) in schemes {
        let Some(scheme) = scheme else { continue };
        if let Some(c) = &scheme.group_column {
            if need(&mut issues, format!("{path}.group_column"), c) && !config.roles.non_input.contains(c) {
                issues.push(ConfigIssue::new(
                    format!("{path}.group_column"),
                    format!("group column `{c}` must be listed in roles.non_input"),
                ));
            }
        }
        if let Some(c) = &scheme.stratify_column {
            need(&mut issues, format!("{path}.stratify_column"), c);
        }
    }
    if let Some(c) = &config.cv.post_stratify_by {
        need(&mut issues, "cv.post_stratify_by".into(), c);
    }
    if let Some(filter) = &config.cv.subset {
        if need(&mut issues, "cv.subset.column".into(), &filter.column)
            && !config.roles.non_input.contains(&filter.column)
        {
            issues.push(ConfigIssue::new(
                "cv.subset.column",
                format!("subset column `{}` must be listed in roles.non_input", filter.column),
            ));
        }
    }
    if target_ok {
        let col = ds.column(&config.roles.target).unwrap();
        let ok = match config.pipeline.problem_type {
            ProblemType::Regression => col.dtype == DType::Continuous,
            ProblemType::Binary => col.levels.len() == 2,
            ProblemType::Categorical => col.dtype != DType::Continuous && col.levels.len() >= 2,
        };
        if !ok {
            issues.push(ConfigIssue::new(
                "pipeline.problem_type",
                format!(
                    "{} does not fit target `{}` ({}, {} levels)",
                    config.pipeline.problem_type.as_str(),
                    col.name,
                    col.dtype.as_str(),
                    col.levels.len()
                ),
            ));
        }
    }
    issues
}

/// Load and check the data, apply roles and row filters, fix the run id.
pub fn prepare(config: RunConfig, doc: Json, opts: &RunOptions) -> Result<Prepared> {
    let seed = resolve_seed(opts.seed, &config)?;
    let (source, resolved) = resolve_path(&config, opts)?;
    let raw = load_csv(&resolved, &config.dataset.load_options())?;
    let fingerprint = raw.fingerprint();
    if let Some((fp, schema)) = &opts.expect {
        if *fp != fingerprint {
            return Err(Error::FingerprintMismatch(fingerprint_diff(schema, &raw.schema())));
        }
    }
    let issues = check_against(&config, &raw);
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    let log = RunLog::default();
    log.push(
        Phase::Load,
        format!(
            "loaded {} rows x {} columns from {source} (fingerprint {})",
            raw.n_rows(),
            raw.n_cols(),
            &fingerprint[..12]
        ),
    );
    let dataset = DatasetRef {
        source,
        resolved_path: resolved.display().to_string(),
        fingerprint: fingerprint.clone(),
        schema: raw.schema(),
    };

    let mut ds = raw;
    for rule in &config.dataset.outliers {
        let mask = detect_outliers(&ds, &rule.column, rule.method)?;
        log.push(
            Phase::Load,
            format!(
                "outliers in `{}`: {} flagged, {:?}",
                rule.column,
                mask.count(),
                rule.action
            ),
        );
        ds = drop_flagged(&ds, &mask, rule.action)?;
    }
    ds = ds.set_role(&config.roles.target, Role::Target)?;
    for c in &config.roles.non_input {
        ds = ds.set_role(c, Role::NonInput)?;
    }
    let target = ds.target()?;
    let keep: Vec<usize> = (0..ds.n_rows()).filter(|&p| !target.is_missing(p)).collect();
    if keep.len() < ds.n_rows() {
        log.push(
            Phase::Load,
            format!("dropped {} rows with missing target", ds.n_rows() - keep.len()),
        );
        ds = ds.take_rows(&keep);
    }
    if let Some(filter) = &config.cv.subset {
        ds = cv::subset(&ds, filter)?;
        log.push(
            Phase::Load,
            format!("subset `{}` = `{}`: {} rows", filter.column, filter.level, ds.n_rows()),
        );
    }
    let run_id = run_id(&doc, &fingerprint, seed)?;
    Ok(Prepared {
        config,
        doc,
        seed,
        dataset,
        ds,
        run_id,
        log,
    })
}

fn fmt_scores(scores: &BTreeMap<String, Option<f64>>) -> String {
    scores
        .iter()
        .map(|(m, v)| match v {
            Some(v) => format!("{m}={v:.6}"),
            None => format!("{m}=undefined"),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Everything the run produces besides its log.
#[derive(Default)]
struct Outcome {
    split: Option<crate::tabular::SplitIndices>,
    reports: Reports,
    final_config: Option<ParamConfig>,
    model: Option<FittedPipeline>,
    importance: Vec<ImportanceReport>,
}

impl Prepared {
    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dataset(&self) -> &Dataset {
        &self.ds
    }

    pub fn execute(self, control: &RunControl) -> Result<RunRecord> {
        let mut out = Outcome::default();
        let outer_progress = |done: usize, total: usize| {
            if let Some(cb) = control.progress {
                cb("cv", done, total);
            }
        };
        let mut ev = Evaluator::new(&self.ds, &self.config.metrics).with_progress(&outer_progress);
        if let Some(flag) = control.cancel {
            ev = ev.with_cancel(flag);
        }
        let ev = &ev;
        let result = match control.jobs {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid(format!("cannot start {n} workers: {e}")))?
                .install(|| self.run_all(ev, &mut out)),
            None => self.run_all(ev, &mut out),
        };
        let (status, error) = match result {
            Ok(()) => (RunStatus::Done, None),
            Err(Error::Cancelled) => {
                self.log.push(Phase::Fit, "run interrupted");
                (RunStatus::Interrupted, Some("cancelled".to_string()))
            }
            Err(e) => {
                self.log.push(Phase::Fit, format!("run failed: {e}"));
                (RunStatus::Failed, Some(e.to_string()))
            }
        };

        let entries = ev.ledger().entries();
        let audit = Audit {
            fit_entries: entries.iter().filter(|e| e.access == Access::Fit).count(),
            predict_entries: entries.iter().filter(|e| e.access == Access::Predict).count(),
            violations: ev.ledger().violations(),
        };
        let mut artifacts = Vec::new();
        if let Some(model) = &out.model {
            artifacts.push(Artifact {
                name: "model".into(),
                digest: canonical::digest(model, &[])?,
            });
        }
        let mut record = RunRecord {
            schema_version: SCHEMA_VERSION,
            run_id: self.run_id.clone(),
            tool_version: TOOL_VERSION.into(),
            config: self.doc.clone(),
            dataset: self.dataset.clone(),
            seed: self.seed,
            status,
            error,
            log: self.log.events(),
            split: out.split,
            reports: out.reports,
            final_config: out.final_config,
            importance: out.importance,
            model: out.model,
            artifacts,
            audit,
            digest: String::new(),
        };
        record.seal()?;
        Ok(record)
    }

    fn run_all(&self, ev: &Evaluator, out: &mut Outcome) -> Result<()> {
        let config = &self.config;
        let ds = &self.ds;
        let seed = self.seed;
        let log = &self.log;

        let split = match &config.split {
            Some(s) => {
                let split = global_split(
                    ds,
                    s.test_fraction,
                    s.stratify_by.as_deref(),
                    s.group_by.as_deref(),
                    seed_of!(seed, "split"),
                )?;
                log.push(
                    Phase::Split,
                    format!(
                        "{} split: {} train / {} test rows",
                        split.strategy,
                        split.train.len(),
                        split.test.len()
                    ),
                );
                Some(split)
            }
            None => {
                log.push(
                    Phase::Split,
                    format!("no holdout: all {} rows used for cross-validation", ds.n_rows()),
                );
                None
            }
        };
        out.split = split.clone();
        let train: Vec<RowId> = match &split {
            Some(s) => s.train.clone(),
            None => ds.row_ids().to_vec(),
        };

        let objective = config.objective();
        let mut cv_report = if config.needs_search() {
            let inner = config.cv.inner.as_ref().expect("validated");
            let strategy = config.search.as_ref().expect("validated");
            ev.nested_evaluate(
                &config.pipeline,
                &train,
                &config.cv.outer,
                inner,
                strategy,
                objective,
                seed,
            )?
        } else {
            ev.evaluate(&config.pipeline, &train, &config.cv.outer, seed)?
        };
        for fold in &cv_report.folds {
            if let Some(trace) = &fold.search {
                let best = trace.candidates[trace.best].value;
                log.push(
                    Phase::Search,
                    format!(
                        "fold {}: {} candidates, best {} {objective}={}",
                        fold.label,
                        trace.candidates.len(),
                        fold.config.key(),
                        best.map_or("none".into(), |v| format!("{v:.6}"))
                    ),
                );
            }
            match &fold.error {
                Some(e) => log.push(Phase::Fit, format!("fold {} failed: {e}", fold.label)),
                None => log.push(
                    Phase::Score,
                    format!(
                        "fold {} ({} train / {} val): {}",
                        fold.label,
                        fold.n_train,
                        fold.n_val,
                        fmt_scores(&fold.scores)
                    ),
                ),
            }
        }
        if let Some(column) = &config.cv.post_stratify_by {
            if let Some((positions, pred)) = cv_report.pooled_predictions() {
                let truth = Target::from_dataset(ds, &positions, config.pipeline.problem_type)?;
                let col = ds.column(column)?;
                let groups: Vec<String> = positions
                    .iter()
                    .map(|&p| col.label(p).unwrap_or_else(|| "<missing>".into()))
                    .collect();
                let table = post_stratify(column, &truth, &pred, &groups, &config.metrics);
                log.push(
                    Phase::Score,
                    format!("post-stratified by `{column}`: {} groups", table.rows.len() - 1),
                );
                cv_report.stratified = Some(table);
            }
        }
        cv_report.subset = config.cv.subset.clone();
        cv_report.seal()?;
        let fold_outputs = cv_report.clone();
        out.reports.cv = Some(cv_report);

        let final_config = if config.needs_search() {
            let inner = config.cv.inner.as_ref().expect("validated");
            let strategy = config.search.as_ref().expect("validated");
            ev.ledger().declare("final", &train);
            let rows = ds.positions(&train)?;
            let trace = ev.search(
                "final/search",
                &config.pipeline,
                &rows,
                inner,
                strategy,
                objective,
                seed_of!(seed, "final"),
            )?;
            let best = best_of(&trace)?.clone();
            log.push(
                Phase::Search,
                format!(
                    "final search: {} candidates, chose {}",
                    trace.candidates.len(),
                    best.key()
                ),
            );
            best
        } else {
            sample(&config.pipeline, 0)?
        };
        let bound = bind(&config.pipeline, &final_config)?;
        out.final_config = Some(final_config);

        let model = match &split {
            Some(split) => {
                let report = ev.final_test(&bound.to_spec(), split, seed)?;
                let fold = &report.folds[0];
                match &fold.error {
                    Some(e) => log.push(Phase::Fit, format!("holdout fit failed: {e}")),
                    None => log.push(Phase::Score, format!("holdout: {}", fmt_scores(&fold.scores))),
                }
                let model = fold.output.as_ref().map(|o| (*o.fitted).clone());
                out.reports.holdout = Some(report);
                model
            }
            None => {
                let model = ev.fit_model("final", &bound, &train, seed_of!(seed, "fit", "final"))?;
                log.push(Phase::Fit, format!("final model fitted on {} rows", train.len()));
                Some(model)
            }
        };
        out.model = model.clone();

        if let (Some(model), Some(section)) = (&model, &config.importance) {
            let problem = config.pipeline.problem_type;
            if section.coefficients {
                match coef_importance(model.model()) {
                    Ok(r) => {
                        log.push(
                            Phase::Explain,
                            format!("coefficients for {} features", r.features.len()),
                        );
                        out.importance.push(r);
                    }
                    Err(e) => log.push(Phase::Explain, format!("coefficients skipped: {e}")),
                }
            }
            let perm_metric = section.permutation.as_ref().and_then(|p| p.metric).unwrap_or(objective);
            let n_repeats = section.permutation.as_ref().map_or(5, |p| p.n_repeats);
            if section.permutation.is_some() {
                let report = match &split {
                    Some(split) => {
                        let test = ds.positions(&split.test)?;
                        let x = model.transform_features(&Frame::from_dataset(ds, &test))?;
                        let y = Target::from_dataset(ds, &test, problem)?;
                        permutation_importance(
                            model.model(),
                            &x,
                            &y,
                            perm_metric,
                            n_repeats,
                            seed_of!(seed, "importance"),
                        )
                        .map(|mut r| {
                            r.meta.rows = Some("test".into());
                            r
                        })
                    }
                    None => fold_permutation(ds, &fold_outputs, problem, perm_metric, n_repeats, seed),
                };
                match report {
                    Ok(r) => {
                        log.push(
                            Phase::Explain,
                            format!(
                                "permutation importance ({perm_metric}) for {} features",
                                r.features.len()
                            ),
                        );
                        out.importance.push(r);
                    }
                    Err(e) => log.push(Phase::Explain, format!("permutation importance skipped: {e}")),
                }
            }
            if let Some(sig) = &section.significance {
                let opts = SignificanceOptions {
                    metric: perm_metric,
                    n_repeats,
                    n_permutations: sig.n_permutations,
                };
                match permuted_target_significance(
                    &bound.to_spec(),
                    ds,
                    &train,
                    &config.cv.outer,
                    &opts,
                    seed_of!(seed, "significance"),
                ) {
                    Ok(mut r) => {
                        r.meta.rows = Some("train".into());
                        log.push(
                            Phase::Explain,
                            format!("permuted-target p-values from {} permutations", sig.n_permutations),
                        );
                        out.importance.push(r);
                    }
                    Err(Error::Cancelled) => return Err(Error::Cancelled),
                    Err(e) => log.push(Phase::Explain, format!("significance skipped: {e}")),
                }
            }
            if let Some(shap) = &section.shapley {
                let explain_rows = match (shap.rows, &split) {
                    (ExplainRows::Test, Some(s)) => s.test.clone(),
                    _ => train.clone(),
                };
                match explain_shapley(ds, model, &train, &explain_rows, shap, seed) {
                    Ok(mut r) => {
                        r.meta.rows = Some(match shap.rows {
                            ExplainRows::Train => "train".into(),
                            ExplainRows::Test => "test".into(),
                        });
                        log.push(
                            Phase::Explain,
                            format!("shapley values for {} instances", r.instances.len()),
                        );
                        out.importance.push(r);
                    }
                    Err(e) => log.push(Phase::Explain, format!("shapley skipped: {e}")),
                }
            }
        }
        Ok(())
    }
}

/// Permutation importance on each fold's validation rows with that fold's
/// model, averaged by feature name (a feature absent from a fold counts 0).
fn fold_permutation(
    ds: &Dataset,
    report: &EvalReport,
    problem: ProblemType,
    metric: Metric,
    n_repeats: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    let mut names: Vec<(String, String)> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut n_folds = 0;
    for fold in &report.folds {
        let Some(output) = &fold.output else { continue };
        let x = output
            .fitted
            .transform_features(&Frame::from_dataset(ds, &output.val))?;
        let y = Target::from_dataset(ds, &output.val, problem)?;
        let r = permutation_importance(
            output.fitted.model(),
            &x,
            &y,
            metric,
            n_repeats,
            seed_of!(seed, "importance", fold.fold),
        )?;
        for ((name, source), v) in r.features.iter().zip(&r.sources).zip(&r.values) {
            match names.iter().position(|(n, _)| n == name) {
                Some(i) => sums[i] += v,
                None => {
                    names.push((name.clone(), source.clone()));
                    sums.push(*v);
                }
            }
        }
        n_folds += 1;
    }
    if n_folds == 0 {
        return Err(Error::invalid(
            "no successful fold to compute permutation importance on",
        ));
    }
    let mut r = ImportanceReport {
        method: "permutation".into(),
        features: names.iter().map(|(n, _)| n.clone()).collect(),
        sources: names.into_iter().map(|(_, s)| s).collect(),
        values: sums.iter().map(|s| s / n_folds as f64).collect(),
        per_class: None,
        p_values: None,
        base_value: None,
        instances: Vec::new(),
        meta: Default::default(),
    };
    r.meta.metric = Some(metric.id().to_string());
    r.meta.n_repeats = Some(n_repeats);
    r.meta.seed = Some(seed);
    r.meta.rows = Some("cv_folds".into());
    Ok(r)
}

fn seeded_sample(rows: &[RowId], n: usize, seed: u64) -> Vec<RowId> {
    let mut rows = rows.to_vec();
    rows.shuffle(&mut seeding::rng(seed));
    rows.truncate(n);
    rows.sort();
    rows
}

/// Shapley values of the final model in its own input space, for a seeded
/// sample of rows against a seeded background sample of training rows.
fn explain_shapley(
    ds: &Dataset,
    model: &FittedPipeline,
    train: &[RowId],
    explain: &[RowId],
    section: &crate::config::ShapleySection,
    seed: u64,
) -> Result<ImportanceReport> {
    let bg_ids = seeded_sample(train, section.n_background.max(1), seed_of!(seed, "background"));
    let ex_ids = seeded_sample(explain, section.n_explain.max(1), seed_of!(seed, "explain_rows"));
    let background = model.transform_features(&Frame::from_dataset(ds, &ds.positions(&bg_ids)?))?;
    let instances = model.transform_features(&Frame::from_dataset(ds, &ds.positions(&ex_ids)?))?;
    let n_classes = if model.problem_type.is_classification() {
        ds.target()?.levels.len()
    } else {
        0
    };
    let class = section.class_index.unwrap_or(n_classes.saturating_sub(1));
    if n_classes > 0 && class >= n_classes {
        return Err(Error::invalid(format!(
            "class_index {class} out of range for {n_classes} classes"
        )));
    }
    let features = background.features.clone();
    let f = |m: &Matrix| -> Result<Vec<f64>> {
        Ok(match model.model().predict(&Frame::new(features.clone(), m.clone()))? {
            Predictions::Values(v) => v,
            Predictions::Classes { proba, .. } => proba.iter().map(|row| row[class]).collect(),
        })
    };
    let mode = match section.n_coalitions {
        Some(n_coalitions) => ShapleyMode::Sampled { n_coalitions },
        None => ShapleyMode::Exact,
    };
    let mut attributions = shapley_explain(&f, &background.x, &instances.x, mode, seed_of!(seed, "shapley"))?;
    for (a, id) in attributions.iter_mut().zip(&ex_ids) {
        a.row = Some(id.0);
    }
    let m = features.len();
    let values = (0..m)
        .map(|j| attributions.iter().map(|a| a.phi[j].abs()).sum::<f64>() / attributions.len() as f64)
        .collect();
    let mut r = ImportanceReport::new("shapley", &features, values);
    r.base_value = attributions.first().map(|a| a.base);
    r.instances = attributions;
    r.meta.seed = Some(seed);
    r.meta.background_size = Some(bg_ids.len());
    r.meta.n_coalitions = section.n_coalitions;
    if n_classes > 0 {
        r.meta.class_index = Some(class);
    }
    Ok(r)
}

/// Re-execute a stored record's config with its seed against its dataset
/// (or `data` instead). Refuses if the data no longer matches.
pub fn replay(record: &RunRecord, data: Option<&Path>, control: &RunControl) -> Result<RunRecord> {
    let config = RunConfig::from_json(&record.config).map_err(Error::Config)?;
    let opts = RunOptions {
        seed: Some(record.seed),
        base_dir: PathBuf::new(),
        datasets_dir: None,
        data_override: Some(data.map_or_else(|| PathBuf::from(&record.dataset.resolved_path), Path::to_path_buf)),
        expect: Some((record.dataset.fingerprint.clone(), record.dataset.schema.clone())),
    };
    prepare(config, record.config.clone(), &opts)?.execute(control)
}

/// Parse, prepare and execute in one go.
pub fn run(doc: Json, opts: &RunOptions, control: &RunControl) -> Result<RunRecord> {
    let config = RunConfig::from_json(&doc).map_err(Error::Config)?;
    prepare(config, doc, opts)?.execute(control)
}
