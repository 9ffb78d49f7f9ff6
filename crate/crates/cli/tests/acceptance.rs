//! Acceptance suite. Every criterion prints one PASS or FAIL line; the
//! process fails if any criterion does.
//!
//! Run a subset with `cargo test -p wb-cli --test acceptance -- <name>`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::net::TcpStream;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};
use wb_core::cv::{make_folds, CVScheme, EvalReport, Evaluator, Metric};
use wb_core::estimators::{
    fit, logistic_gradient, logistic_objective, FitContext, FittedEstimator, Frame, Matrix, Predictions, ProblemType,
    State, StepKind, Target,
};
use wb_core::importance::{
    permutation_importance, permuted_target_significance, shapley_values, ShapleyMode, SignificanceOptions,
};
use wb_core::pipeline::{ColumnScope, ParamDist, PipelineSpec, Scale, StepSpec, Value};
use wb_core::search::SearchStrategy;
use wb_core::tabular::{global_split, Column, DType, Dataset, Role, RowId};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("leakage", leakage),
        ("nesting-equivalence", nesting_equivalence),
        ("split-laws", split_laws),
        ("estimator-numerics", estimator_numerics),
        ("metric-oracles", metric_oracles),
        ("shapley-oracle", shapley_oracle),
        ("permutation-importance", permutation_importance_criterion),
        ("model-selection", model_selection),
        ("reproducibility", reproducibility),
        ("cli-api-equivalence", cli_api_equivalence),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<24} {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<24} {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; good enough for fixtures.
    let u: f64 = r.gen_range(1e-12..1.0);
    let v: f64 = r.gen();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

// ---------------------------------------------------------------- fixtures

/// Mixed-type dataset: three continuous inputs (x1 sometimes with missing
/// cells), a categorical input, a non-input group column with five groups
/// and a target. Classes are balanced so stratified schemes always apply.
fn random_dataset(r: &mut ChaCha8Rng, problem: ProblemType) -> (Dataset, bool) {
    let n = r.gen_range(30..48);
    let with_missing = r.gen_bool(0.4);
    let n_classes = match problem {
        ProblemType::Regression => 0,
        ProblemType::Binary => 2,
        ProblemType::Categorical => 3,
    };
    let mut classes: Vec<usize> = (0..n).map(|i| if n_classes > 0 { i % n_classes } else { 0 }).collect();
    classes.shuffle(r);
    let mut x: [Vec<f64>; 3] = Default::default();
    let mut missing1 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for &c in &classes {
        let x0 = c as f64 + normal(r);
        let x1 = normal(r);
        let x2 = r.gen_range(-2.0..2.0);
        x[0].push(x0);
        x[1].push(x1);
        x[2].push(x2);
        missing1.push(with_missing && r.gen_bool(0.15));
        y.push(x0 + 0.5 * x1 + 0.3 * normal(r));
    }
    let cat: Vec<String> = (0..n).map(|_| ["p", "q", "r"][r.gen_range(0..3)].to_string()).collect();
    let grp: Vec<String> = (0..n).map(|i| format!("g{}", i % 5)).collect();
    let target = match problem {
        ProblemType::Regression => Column::continuous("y", y, vec![false; n]),
        _ => {
            let labels: Vec<String> = classes.iter().map(|c| format!("c{c}")).collect();
            let dtype = if n_classes == 2 {
                DType::Binary
            } else {
                DType::Categorical
            };
            Column::discrete("y", dtype, &opt(&labels))
        }
    };
    let ds = Dataset::new(vec![
        Column::continuous("x0", x[0].clone(), vec![false; n]),
        Column::continuous("x1", x[1].clone(), missing1),
        Column::continuous("x2", x[2].clone(), vec![false; n]),
        Column::discrete("cat", DType::Categorical, &opt(&cat)),
        Column::discrete("grp", DType::Categorical, &opt(&grp)).with_role(Role::NonInput),
        target.with_role(Role::Target),
    ])
    .unwrap();
    (ds, with_missing)
}

fn opt(labels: &[String]) -> Vec<Option<&str>> {
    labels.iter().map(|s| Some(s.as_str())).collect()
}

fn random_problem(r: &mut ChaCha8Rng) -> ProblemType {
    [ProblemType::Regression, ProblemType::Binary, ProblemType::Categorical][r.gen_range(0..3)]
}

fn metrics_for(problem: ProblemType) -> Vec<Metric> {
    match problem {
        ProblemType::Regression => vec![Metric::R2, Metric::Mae, Metric::Rmse],
        ProblemType::Binary => vec![
            Metric::Accuracy,
            Metric::RocAuc,
            Metric::LogLoss,
            Metric::BalancedAccuracy,
        ],
        ProblemType::Categorical => vec![Metric::Accuracy, Metric::MacroF1, Metric::LogLoss],
    }
}

fn pick<T: Clone>(r: &mut ChaCha8Rng, items: &[T]) -> T {
    items[r.gen_range(0..items.len())].clone()
}

/// A model step; `searchable` gives it a non-singleton parameter space.
fn random_model(r: &mut ChaCha8Rng, problem: ProblemType, searchable: bool) -> StepSpec {
    let linear = if problem == ProblemType::Regression {
        "ridge"
    } else {
        "logistic"
    };
    let id = pick(r, &[linear, "dtree", "forest", "knn", "constant"]);
    let m = |name: &str| StepSpec::new(StepKind::Model, name);
    let choice_or = |r: &mut ChaCha8Rng, fixed: Value, values: Vec<Value>| {
        if searchable {
            ParamDist::Choice { values }
        } else {
            let _ = r;
            ParamDist::Fixed { value: fixed }
        }
    };
    match id {
        "ridge" | "logistic" => {
            let a = pick(r, &[0.01, 0.1, 1.0]);
            let dist = if searchable && r.gen_bool(0.5) {
                ParamDist::float_range(1e-3, 10.0, Scale::Log)
            } else {
                choice_or(r, Value::Float(a), vec![Value::Float(0.01), Value::Float(1.0)])
            };
            m(id).param("alpha", dist)
        }
        "dtree" => {
            let d = r.gen_range(1..5);
            let dist = choice_or(r, Value::Int(d), vec![Value::Int(1), Value::Int(3)]);
            m(id).param("max_depth", dist)
        }
        "forest" => {
            let t = r.gen_range(2..6);
            let dist = choice_or(r, Value::Int(t), vec![Value::Int(2), Value::Int(4)]);
            m(id).param("n_trees", dist).param("max_depth", ParamDist::fixed(3i64))
        }
        "knn" => {
            let k = r.gen_range(1..6);
            let dist = choice_or(r, Value::Int(k), vec![Value::Int(1), Value::Int(3), Value::Int(5)]);
            m(id).param("k", dist)
        }
        _ if searchable => StepSpec::select(
            StepKind::Model,
            vec![m("constant"), m("knn").param("k", ParamDist::fixed(3i64))],
        ),
        _ => m("constant"),
    }
}

fn random_spec(r: &mut ChaCha8Rng, problem: ProblemType, with_missing: bool, searchable: bool) -> PipelineSpec {
    let mut steps = Vec::new();
    if with_missing || r.gen_bool(0.3) {
        steps.push(StepSpec::new(
            StepKind::Imputer,
            pick(r, &["impute_mean", "impute_median"]),
        ));
    }
    if r.gen_bool(0.5) {
        steps.push(StepSpec::new(StepKind::Encoder, "onehot").scope(ColumnScope::CategoricalOnly));
    }
    if r.gen_bool(0.5) {
        let scope = pick(r, &[ColumnScope::AllInput, ColumnScope::ContinuousOnly]);
        steps.push(StepSpec::new(StepKind::Scaler, pick(r, &["scaler_standard", "scaler_robust"])).scope(scope));
    }
    if r.gen_bool(0.3) {
        let step = if r.gen_bool(0.5) {
            StepSpec::new(StepKind::Selector, "select_variance")
        } else {
            StepSpec::new(StepKind::Selector, "select_univariate")
                .param("k", ParamDist::fixed(r.gen_range(1..4) as i64))
        };
        steps.push(step);
    }
    steps.push(random_model(r, problem, searchable));
    PipelineSpec::new(problem, steps)
}

fn random_outer(r: &mut ChaCha8Rng, problem: ProblemType) -> CVScheme {
    let classification = problem != ProblemType::Regression;
    match r.gen_range(0..4) {
        0 => CVScheme::kfold(r.gen_range(2..6)),
        1 if classification => CVScheme::stratified(r.gen_range(2..4), None),
        2 => CVScheme::group_kfold(r.gen_range(2..4), "grp"),
        3 => CVScheme::leave_one_group_out("grp"),
        _ => CVScheme::kfold(3),
    }
}

fn random_inner(r: &mut ChaCha8Rng, problem: ProblemType) -> CVScheme {
    if problem != ProblemType::Regression && r.gen_bool(0.5) {
        CVScheme::stratified(2, None)
    } else {
        CVScheme::kfold(r.gen_range(2..4))
    }
}

fn random_strategy(r: &mut ChaCha8Rng) -> SearchStrategy {
    let budget = r.gen_range(1..5);
    if r.gen_bool(0.5) {
        SearchStrategy::random(budget)
    } else {
        SearchStrategy::evolutionary(budget)
    }
}

// ---------------------------------------------------------------- leakage

fn row_ids(ds: &Dataset, positions: &[usize]) -> BTreeSet<RowId> {
    positions.iter().map(|&p| ds.row_ids()[p]).collect()
}

fn in_scope(phase: &str, root: &str) -> bool {
    phase == root || phase.starts_with(&format!("{root}/"))
}

/// Checks the ledger against facts the evaluator does not compute from it:
/// the caller's training rows, the test rows, and each fold's reported
/// validation rows. Returns the number of fit entries inspected.
fn audit(
    ev: &Evaluator,
    train: &BTreeSet<RowId>,
    test: &BTreeSet<RowId>,
    reports: &[(&str, &EvalReport)],
) -> Result<usize, String> {
    let ledger = ev.ledger();
    let violations = ledger.violations();
    ensure!(violations.is_empty(), "ledger reports violations: {violations:?}");
    let entries = ledger.entries();
    let fits: Vec<_> = entries
        .iter()
        .filter(|e| e.access == wb_core::cv::Access::Fit)
        .collect();
    for e in &fits {
        for row in &e.rows {
            ensure!(
                train.contains(row),
                "{} fitted on row {row} outside the training set",
                e.phase
            );
            ensure!(!test.contains(row), "{} fitted on test row {row}", e.phase);
        }
    }
    for (root, report) in reports {
        for fold in &report.folds {
            let Some(out) = &fold.output else { continue };
            let val = row_ids(ev.dataset(), &out.val);
            let scope = format!("{root}/fold/{}", fold.fold);
            for e in fits.iter().filter(|e| in_scope(&e.phase, &scope)) {
                if let Some(row) = e.rows.iter().find(|r| val.contains(r)) {
                    return Err(format!("{} fitted on validation row {row} of its outer fold", e.phase));
                }
            }
        }
    }
    let mut by_phase: BTreeMap<&str, (BTreeSet<RowId>, BTreeSet<RowId>)> = BTreeMap::new();
    for e in &entries {
        let slot = by_phase.entry(&e.phase).or_default();
        let set = if e.access == wb_core::cv::Access::Fit {
            &mut slot.0
        } else {
            &mut slot.1
        };
        set.extend(e.rows.iter().copied());
    }
    for (phase, (fitted, predicted)) in &by_phase {
        ensure!(fitted.is_disjoint(predicted), "{phase} predicted rows it was fitted on");
    }
    Ok(fits.len())
}

fn leakage() -> Check {
    let mut fit_entries = 0;
    let mut protocols = BTreeMap::new();
    for t in 0..200u64 {
        let mut r = rng(1000 + t);
        let problem = random_problem(&mut r);
        let (ds, with_missing) = random_dataset(&mut r, problem);
        let metrics = metrics_for(problem);
        let seed: u64 = r.gen();
        let stratify = (problem != ProblemType::Regression).then_some("y");
        let split = global_split(&ds, 0.2, stratify, None, seed).map_err(|e| format!("triple {t}: {e}"))?;
        let train: BTreeSet<RowId> = split.train.iter().copied().collect();
        let test: BTreeSet<RowId> = split.test.iter().copied().collect();
        let fixed = random_spec(&mut r, problem, with_missing, false);
        let outer = random_outer(&mut r, problem);
        let ev = Evaluator::new(&ds, &metrics);
        let protocol = t % 3;
        let report = if protocol == 0 {
            ev.evaluate(&fixed, &split.train, &outer, seed)
        } else {
            let searchable = random_spec(&mut r, problem, with_missing, true);
            let inner = random_inner(&mut r, problem);
            ev.nested_evaluate(
                &searchable,
                &split.train,
                &outer,
                &inner,
                &random_strategy(&mut r),
                metrics[0],
                seed,
            )
        };
        let report = report.map_err(|e| format!("triple {t}: {e}"))?;
        let root = if protocol == 0 { "cv" } else { "nested" };
        let mut reports = vec![(root, &report)];
        let holdout;
        if protocol == 2 {
            holdout = ev
                .final_test(&fixed, &split, seed)
                .map_err(|e| format!("triple {t}: {e}"))?;
            reports.push(("holdout", &holdout));
            let touched = ev.ledger().fit_touched("holdout");
            ensure!(
                touched == train,
                "triple {t}: holdout fit did not use exactly the training rows"
            );
        }
        fit_entries += audit(&ev, &train, &test, &reports).map_err(|e| format!("triple {t}: {e}"))?;
        *protocols
            .entry(["cv", "nested", "nested+holdout"][protocol as usize])
            .or_insert(0) += 1;
    }
    Ok(format!(
        "200 triples ({protocols:?}), {fit_entries} fit entries, 0 violations"
    ))
}

// ---------------------------------------------------------------- nesting

fn nesting_equivalence() -> Check {
    let mut folds = 0;
    for t in 0..50u64 {
        let mut r = rng(2000 + t);
        let problem = random_problem(&mut r);
        let (ds, with_missing) = random_dataset(&mut r, problem);
        let metrics = metrics_for(problem);
        let spec = random_spec(&mut r, problem, with_missing, false);
        let outer = random_outer(&mut r, problem);
        let inner = random_inner(&mut r, problem);
        let strategy = random_strategy(&mut r);
        let seed: u64 = r.gen();
        let ids = ds.row_ids().to_vec();
        let plain = Evaluator::new(&ds, &metrics)
            .evaluate(&spec, &ids, &outer, seed)
            .map_err(|e| format!("fixture {t}: {e}"))?;
        let nested = Evaluator::new(&ds, &metrics)
            .nested_evaluate(&spec, &ids, &outer, &inner, &strategy, metrics[0], seed)
            .map_err(|e| format!("fixture {t}: {e}"))?;
        ensure!(
            plain.folds.len() == nested.folds.len(),
            "fixture {t}: fold counts differ"
        );
        for (a, b) in plain.folds.iter().zip(&nested.folds) {
            ensure!(
                a.scores == b.scores,
                "fixture {t} fold {}: {:?} != {:?}",
                a.fold,
                a.scores,
                b.scores
            );
            ensure!(
                (a.n_train, a.n_val, a.status) == (b.n_train, b.n_val, b.status),
                "fixture {t} fold {}: shapes differ",
                a.fold
            );
            let preds = |f: &wb_core::cv::FoldReport| f.output.as_ref().map(|o| o.predictions.clone());
            ensure!(preds(a) == preds(b), "fixture {t} fold {}: predictions differ", a.fold);
            folds += 1;
        }
        ensure!(plain.aggregate == nested.aggregate, "fixture {t}: aggregates differ");
    }
    Ok(format!("50 fixtures, {folds} folds identical score-for-score"))
}

// ---------------------------------------------------------------- splits

fn fold_dataset(labels: &[usize], groups: &[usize]) -> Dataset {
    let n = labels.len();
    let lab: Vec<String> = labels.iter().map(|l| format!("l{l}")).collect();
    let grp: Vec<String> = groups.iter().map(|g| format!("g{g:02}")).collect();
    Dataset::new(vec![
        Column::continuous("x", (0..n).map(|i| i as f64).collect(), vec![false; n]),
        Column::discrete("g", DType::Categorical, &opt(&grp)).with_role(Role::NonInput),
        Column::discrete("y", DType::Categorical, &opt(&lab)).with_role(Role::Target),
    ])
    .unwrap()
}

/// Partition law shared by every scheme: validation sets are disjoint,
/// cover all rows, and each training set is exactly the complement.
fn check_partition(n: usize, folds: &[wb_core::cv::Fold]) -> Result<(), String> {
    let mut seen = vec![0; n];
    for f in folds {
        ensure!(!f.val.is_empty(), "empty validation fold");
        for &p in &f.val {
            seen[p] += 1;
        }
        let complement: Vec<usize> = (0..n).filter(|p| !f.val.contains(p)).collect();
        ensure!(
            f.train == complement,
            "training rows are not the complement of validation rows"
        );
    }
    ensure!(
        seen.iter().all(|&c| c == 1),
        "validation folds do not partition the rows"
    );
    Ok(())
}

fn check_kfold(n: usize, k: usize, seed: u64) -> Result<(), String> {
    let ds = fold_dataset(&vec![0; n], &vec![0; n]);
    let rows: Vec<usize> = (0..n).collect();
    let folds = make_folds(&ds, &rows, &CVScheme::kfold(k), seed).map_err(|e| e.to_string())?;
    ensure!(folds.len() == k, "kfold n={n} k={k}: {} folds", folds.len());
    check_partition(n, &folds)?;
    for f in &folds {
        ensure!(
            f.val.len() == n / k || f.val.len() == n.div_ceil(k),
            "kfold n={n} k={k}: fold of {}",
            f.val.len()
        );
    }
    Ok(())
}

fn check_stratified(labels: &[usize], k: usize, seed: u64) -> Result<(), String> {
    let n = labels.len();
    let ds = fold_dataset(labels, &vec![0; n]);
    let rows: Vec<usize> = (0..n).collect();
    let result = make_folds(&ds, &rows, &CVScheme::stratified(k, None), seed);
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let feasible = counts.values().all(|&c| c >= k);
    let folds = match result {
        Ok(f) => f,
        Err(_) if !feasible => return Ok(()),
        Err(e) => return Err(format!("stratified {labels:?} k={k}: {e}")),
    };
    ensure!(
        feasible,
        "stratified {labels:?} k={k}: accepted a stratum smaller than k"
    );
    ensure!(folds.len() == k, "stratified: {} folds", folds.len());
    check_partition(n, &folds)?;
    for (&level, &total) in &counts {
        for f in &folds {
            let c = f.val.iter().filter(|&&p| labels[p] == level).count();
            ensure!(
                c == total / k || c == total.div_ceil(k),
                "stratified {labels:?} k={k}: level {level} has {c} in a fold"
            );
        }
    }
    let sizes: Vec<usize> = folds.iter().map(|f| f.val.len()).collect();
    ensure!(
        sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1,
        "stratified {labels:?} k={k}: fold sizes {sizes:?}"
    );
    Ok(())
}

fn check_groups(groups: &[usize], k: usize, seed: u64) -> Result<(), String> {
    let n = groups.len();
    let ds = fold_dataset(&vec![0; n], groups);
    let rows: Vec<usize> = (0..n).collect();
    let n_groups = groups.iter().collect::<BTreeSet<_>>().len();
    let atomic = |folds: &[wb_core::cv::Fold]| -> Result<(), String> {
        for f in folds {
            let inside: BTreeSet<usize> = f.val.iter().map(|&p| groups[p]).collect();
            let outside: BTreeSet<usize> = f.train.iter().map(|&p| groups[p]).collect();
            ensure!(
                inside.is_disjoint(&outside),
                "group {groups:?} split across train and validation"
            );
        }
        Ok(())
    };
    match make_folds(&ds, &rows, &CVScheme::group_kfold(k, "g"), seed) {
        Ok(folds) => {
            ensure!(n_groups >= k, "group kfold accepted {n_groups} groups for k={k}");
            ensure!(folds.len() == k, "group kfold: {} folds", folds.len());
            check_partition(n, &folds)?;
            atomic(&folds)?;
        }
        Err(e) => ensure!(n_groups < k, "group kfold {groups:?} k={k}: {e}"),
    }
    match make_folds(&ds, &rows, &CVScheme::leave_one_group_out("g"), seed) {
        Ok(folds) => {
            ensure!(
                folds.len() == n_groups,
                "logo: {} folds for {n_groups} groups",
                folds.len()
            );
            check_partition(n, &folds)?;
            atomic(&folds)?;
            for f in &folds {
                let inside: BTreeSet<usize> = f.val.iter().map(|&p| groups[p]).collect();
                ensure!(inside.len() == 1, "logo fold holds {} groups", inside.len());
            }
        }
        Err(e) => ensure!(n_groups < 2, "logo {groups:?}: {e}"),
    }
    Ok(())
}

/// Integer partitions of `n` (group size multisets), largest part first.
fn integer_partitions(n: usize, max: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if n == 0 {
        out.push(prefix.clone());
        return;
    }
    for part in (1..=n.min(max)).rev() {
        prefix.push(part);
        integer_partitions(n - part, part, prefix, out);
        prefix.pop();
    }
}

fn split_laws() -> Check {
    let mut instances = 0usize;
    for n in 2..=12usize {
        for k in 2..=n {
            for seed in 0..3 {
                check_kfold(n, k, seed)?;
                instances += 1;
            }
        }
        // Every two-level labelling, and every three-level one up to n = 8.
        for mask in 0u32..(1 << n) {
            let labels: Vec<usize> = (0..n).map(|i| (mask >> i & 1) as usize).collect();
            for k in 2..=n.min(4) {
                check_stratified(&labels, k, u64::from(mask))?;
                instances += 1;
            }
        }
        if n <= 8 {
            for code in 0..3usize.pow(n as u32) {
                let labels: Vec<usize> = (0..n).map(|i| code / 3usize.pow(i as u32) % 3).collect();
                check_stratified(&labels, 2 + code % 2, code as u64)?;
                instances += 1;
            }
        }
        // Every group-size multiset, laid out contiguously and interleaved.
        let mut parts = Vec::new();
        integer_partitions(n, n, &mut Vec::new(), &mut parts);
        for sizes in &parts {
            let contiguous: Vec<usize> = sizes
                .iter()
                .enumerate()
                .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
                .collect();
            let mut interleaved = Vec::with_capacity(n);
            let mut left = sizes.clone();
            while interleaved.len() < n {
                for (g, l) in left.iter_mut().enumerate() {
                    if *l > 0 {
                        interleaved.push(g);
                        *l -= 1;
                    }
                }
            }
            for groups in [&contiguous, &interleaved] {
                for k in 2..=n.min(5) {
                    check_groups(groups, k, n as u64 * 31 + k as u64)?;
                    instances += 1;
                }
            }
        }
    }
    let exhaustive = instances;
    let mut r = rng(3000);
    for _ in 0..300 {
        let n = r.gen_range(13..200);
        let k = r.gen_range(2..11);
        check_kfold(n, k, r.gen())?;
        let levels = r.gen_range(2..5);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..levels)).collect();
        check_stratified(&labels, k, r.gen())?;
        let n_groups = r.gen_range(2..30);
        let groups: Vec<usize> = (0..n).map(|_| r.gen_range(0..n_groups)).collect();
        check_groups(&groups, k, r.gen())?;
        instances += 3;
    }
    Ok(format!(
        "{exhaustive} exhaustive instances (n <= 12), {} randomized",
        instances - exhaustive
    ))
}

// ---------------------------------------------------------------- numerics

fn random_matrix(r: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| scale * normal(r)).collect()).collect();
    Matrix::from_rows(&rows)
}

/// Minimizes `‖y − Xw − b‖² + α‖w‖²` by conjugate gradients on the
/// quadratic in `(w, b)`, using only gradient evaluations.
fn ridge_by_gradient(x: &Matrix, y: &[f64], alpha: f64) -> Vec<f64> {
    let d = x.n_cols;
    let grad = |theta: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; d + 1];
        for i in 0..x.n_rows {
            let row = x.row(i);
            let resid = row.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + theta[d] - y[i];
            for j in 0..d {
                g[j] += 2.0 * resid * row[j];
            }
            g[d] += 2.0 * resid;
        }
        for j in 0..d {
            g[j] += 2.0 * alpha * theta[j];
        }
        g
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut theta = vec![0.0; d + 1];
    let g0 = grad(&theta);
    let mut resid: Vec<f64> = g0.iter().map(|v| -v).collect();
    let mut dir = resid.clone();
    for _ in 0..10 * (d + 1) {
        if dot(&resid, &resid).sqrt() < 1e-13 {
            break;
        }
        // Hessian-vector product from two gradients of a quadratic.
        let g_at = grad(&dir);
        let hd: Vec<f64> = g_at.iter().zip(&g0).map(|(a, b)| a - b).collect();
        let step = dot(&resid, &resid) / dot(&dir, &hd);
        for (t, p) in theta.iter_mut().zip(&dir) {
            *t += step * p;
        }
        let next: Vec<f64> = resid.iter().zip(&hd).map(|(r, h)| r - step * h).collect();
        let beta = dot(&next, &next) / dot(&resid, &resid);
        dir = next.iter().zip(&dir).map(|(r, p)| r + beta * p).collect();
        resid = next;
    }
    theta
}

fn linear_state(est: &FittedEstimator) -> (Vec<f64>, f64) {
    match &est.state {
        State::Linear(m) => (m.coefs[0].clone(), m.intercepts[0]),
        other => panic!("expected a linear model, got {other:?}"),
    }
}

fn alpha(a: f64) -> BTreeMap<String, Value> {
    BTreeMap::from([("alpha".to_string(), Value::Float(a))])
}

fn estimator_numerics() -> Check {
    let mut r = rng(4000);
    let mut worst_fd: f64 = 0.0;
    for _ in 0..20 {
        let (n, d) = (r.gen_range(5..30), r.gen_range(1..6));
        let x = random_matrix(&mut r, n, d, 1.5);
        let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(r.gen_bool(0.5)))).collect();
        let w: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
        let b = normal(&mut r);
        let a = r.gen_range(0.0..2.0);
        let (gw, gb) = logistic_gradient(&x, &y, &w, b, a);
        let h = 1e-5;
        let mut fd = Vec::with_capacity(d + 1);
        for j in 0..d {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += h;
            down[j] -= h;
            fd.push((logistic_objective(&x, &y, &up, b, a) - logistic_objective(&x, &y, &down, b, a)) / (2.0 * h));
        }
        fd.push((logistic_objective(&x, &y, &w, b + h, a) - logistic_objective(&x, &y, &w, b - h, a)) / (2.0 * h));
        let analytic: Vec<f64> = gw.iter().copied().chain([gb]).collect();
        let norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        let err = analytic
            .iter()
            .zip(&fd)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt()
            / norm;
        worst_fd = worst_fd.max(err);
    }
    ensure!(
        worst_fd <= 1e-5,
        "logistic gradient vs finite differences: relative error {worst_fd:e}"
    );

    let mut worst_gd: f64 = 0.0;
    for _ in 0..20 {
        let (n, d) = (r.gen_range(8..40), r.gen_range(1..6));
        let x = random_matrix(&mut r, n, d, 1.0);
        let y: Vec<f64> = (0..n).map(|_| 3.0 * normal(&mut r)).collect();
        let a = r.gen_range(0.05..5.0);
        let frame = Frame::from_rows(&(0..n).map(|i| x.row(i).to_vec()).collect::<Vec<_>>());
        let est = fit(
            "ridge",
            &alpha(a),
            &frame,
            Some(&Target::Continuous(y.clone())),
            FitContext::default(),
        )
        .map_err(|e| e.to_string())?;
        let (w, b) = linear_state(&est);
        let theta = ridge_by_gradient(&x, &y, a);
        let err = w
            .iter()
            .chain([&b])
            .zip(&theta)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        worst_gd = worst_gd.max(err);
    }
    ensure!(
        worst_gd <= 1e-6,
        "ridge closed form vs gradient solve: max difference {worst_gd:e}"
    );

    let mut worst_exact: f64 = 0.0;
    for _ in 0..20 {
        let (n, d) = (r.gen_range(10..40), r.gen_range(1..6));
        let x = random_matrix(&mut r, n, d, 2.0);
        let w: Vec<f64> = (0..d).map(|_| r.gen_range(-3.0..3.0)).collect();
        let b = r.gen_range(-5.0..5.0);
        let y: Vec<f64> = (0..n)
            .map(|i| x.row(i).iter().zip(&w).map(|(p, q)| p * q).sum::<f64>() + b)
            .collect();
        let frame = Frame::from_rows(&(0..n).map(|i| x.row(i).to_vec()).collect::<Vec<_>>());
        let est = fit(
            "ridge",
            &alpha(0.0),
            &frame,
            Some(&Target::Continuous(y)),
            FitContext::default(),
        )
        .map_err(|e| e.to_string())?;
        let (got_w, got_b) = linear_state(&est);
        let err = got_w
            .iter()
            .chain([&got_b])
            .zip(w.iter().chain([&b]))
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        worst_exact = worst_exact.max(err);
    }
    ensure!(
        worst_exact <= 1e-10,
        "ridge on exact linear data: coefficient error {worst_exact:e}"
    );
    Ok(format!(
        "logistic FD rel err {worst_fd:.1e} (<= 1e-5), ridge vs CG {worst_gd:.1e} (<= 1e-6), exact recovery {worst_exact:.1e} (<= 1e-10)"
    ))
}

// ---------------------------------------------------------------- metrics

fn metric_oracles() -> Check {
    let mut r = rng(5000);
    for t in 0..1000 {
        let n = r.gen_range(2..80);
        let mut positive: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        positive[0] = true;
        positive[1] = false;
        positive.shuffle(&mut r);
        // Coarse scores force ties.
        let levels = r.gen_range(2..12);
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..levels) as f64 / levels as f64).collect();
        let (mut twice_wins, mut pairs) = (0u64, 0u64);
        for i in (0..n).filter(|&i| positive[i]) {
            for j in (0..n).filter(|&j| !positive[j]) {
                pairs += 1;
                twice_wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
        let brute = twice_wins as f64 / (2 * pairs) as f64;
        let truth = Target::Classes {
            codes: positive.iter().map(|&p| usize::from(p)).collect(),
            levels: vec!["neg".into(), "pos".into()],
        };
        let pred = Predictions::from_proba(scores.iter().map(|&s| vec![1.0 - s, s]).collect());
        let got = Metric::RocAuc.score(&truth, &pred).map_err(|e| e.to_string())?;
        ensure!(got == brute, "vector {t}: roc_auc {got} != pair count {brute}");
    }

    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = r.gen_range(2..60);
        let y: Vec<f64> = (0..n).map(|_| 10.0 * normal(&mut r)).collect();
        let p: Vec<f64> = y.iter().map(|v| v + 3.0 * normal(&mut r)).collect();
        let mean = y.iter().sum::<f64>() / n as f64;
        let sse: f64 = y.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
        let sst: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
        let expected = [
            (Metric::R2, 1.0 - sse / sst),
            (
                Metric::Mae,
                y.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64,
            ),
            (Metric::Rmse, (sse / n as f64).sqrt()),
        ];
        let truth = Target::Continuous(y.clone());
        let pred = Predictions::Values(p.clone());
        for (metric, want) in expected {
            let got = metric.score(&truth, &pred).map_err(|e| e.to_string())?;
            let err = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    ensure!(worst <= 1e-12, "r2/mae/rmse differ from direct formulas by {worst:e}");
    Ok(format!(
        "roc_auc exact on 1000 vectors; r2/mae/rmse within {worst:.1e} (<= 1e-12) on 1000 vectors"
    ))
}

// ---------------------------------------------------------------- shapley

/// Nonlinear test function with pairwise interactions. Features listed in
/// `ignore` do not enter it at all.
fn synthetic_model(
    r: &mut ChaCha8Rng,
    m: usize,
    ignore: Option<usize>,
) -> impl Fn(&Matrix) -> wb_core::Result<Vec<f64>> + Sync {
    let used = move |j: usize| Some(j) != ignore;
    let lin: Vec<f64> = (0..m).map(|j| if used(j) { normal(r) } else { 0.0 }).collect();
    let mut pairs = Vec::new();
    for a in (0..m).filter(|&a| used(a)) {
        for b in (a + 1..m).filter(|&b| used(b)) {
            if r.gen_bool(0.5) {
                pairs.push((a, b, normal(r)));
            }
        }
    }
    let mut waves = Vec::new();
    for j in (0..m).filter(|&j| used(j)) {
        if r.gen_bool(0.5) {
            waves.push((j, normal(r)));
        }
    }
    move |x: &Matrix| {
        Ok((0..x.n_rows)
            .map(|i| {
                let row = x.row(i);
                let mut v: f64 = row
                    .iter()
                    .zip(&lin)
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(a, w)| a * w)
                    .sum();
                for &(a, b, c) in &pairs {
                    v += c * row[a] * row[b];
                }
                for &(j, c) in &waves {
                    v += c * row[j].sin();
                }
                v
            })
            .collect())
    }
}

fn fitted_model(r: &mut ChaCha8Rng, m: usize) -> (impl Fn(&Matrix) -> wb_core::Result<Vec<f64>> + Sync, Matrix) {
    let n = 40;
    let x = random_matrix(r, n, m, 1.0);
    let frame = Frame::from_rows(&(0..n).map(|i| x.row(i).to_vec()).collect::<Vec<_>>());
    let signal: Vec<f64> = (0..n).map(|i| x.row(i).iter().sum::<f64>() + 0.5 * normal(r)).collect();
    let id = pick(r, &["ridge", "logistic", "dtree", "forest", "knn"]);
    let target = if id == "logistic" || r.gen_bool(0.3) && id != "ridge" {
        Target::Classes {
            codes: signal.iter().map(|&s| usize::from(s > 0.0)).collect(),
            levels: vec!["a".into(), "b".into()],
        }
    } else {
        Target::Continuous(signal)
    };
    let params = match id {
        "forest" => BTreeMap::from([("n_trees".to_string(), Value::Int(5))]),
        "knn" => BTreeMap::from([("k".to_string(), Value::Int(3))]),
        _ => BTreeMap::new(),
    };
    let est = fit(
        id,
        &params,
        &frame,
        Some(&target),
        FitContext {
            seed: r.gen(),
            ..FitContext::default()
        },
    )
    .unwrap();
    let model = move |x: &Matrix| -> wb_core::Result<Vec<f64>> {
        let frame = Frame::new(est.input.clone(), x.clone());
        Ok(match est.predict(&frame)? {
            Predictions::Values(v) => v,
            Predictions::Classes { proba, .. } => proba.iter().map(|p| p[1]).collect(),
        })
    };
    (model, x)
}

fn shapley_oracle() -> Check {
    let mut r = rng(6000);
    let mut worst_enum: f64 = 0.0;
    for m in 1..=8 {
        for _ in 0..5 {
            let model = synthetic_model(&mut r, m, None);
            let bg = random_matrix(&mut r, 6, m, 1.0);
            let x: Vec<f64> = (0..m).map(|_| normal(&mut r)).collect();
            let exact = shapley_values(&model, &bg, &x, ShapleyMode::Exact, 0).map_err(|e| e.to_string())?;
            let full = (1usize << m).saturating_sub(2).max(1);
            let sampled = shapley_values(&model, &bg, &x, ShapleyMode::Sampled { n_coalitions: full }, r.gen())
                .map_err(|e| e.to_string())?;
            let err = exact
                .phi
                .iter()
                .zip(&sampled.phi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_enum = worst_enum.max(err);
        }
    }
    ensure!(
        worst_enum <= 1e-6,
        "full-enumeration sampled mode differs from exact by {worst_enum:e}"
    );

    let mut worst_local: f64 = 0.0;
    for i in 0..100 {
        let m = r.gen_range(2..7);
        let mode = if i % 2 == 0 {
            ShapleyMode::Exact
        } else {
            ShapleyMode::Sampled {
                n_coalitions: r.gen_range(4 * m..(1 << m) + 10),
            }
        };
        let x: Vec<f64> = (0..m).map(|_| normal(&mut r)).collect();
        let (phi_sum, base, direct) = if i < 50 {
            let model = synthetic_model(&mut r, m, None);
            let bg = random_matrix(&mut r, 8, m, 1.0);
            let a = shapley_values(&model, &bg, &x, mode, r.gen()).map_err(|e| format!("model {i}: {e}"))?;
            (
                a.phi.iter().sum::<f64>(),
                a.base,
                model(&Matrix::from_rows(std::slice::from_ref(&x))).unwrap()[0],
            )
        } else {
            let (model, data) = fitted_model(&mut r, m);
            let bg = data.select_rows(&(0..10).collect::<Vec<_>>());
            let a = shapley_values(&model, &bg, &x, mode, r.gen()).map_err(|e| format!("model {i}: {e}"))?;
            (
                a.phi.iter().sum::<f64>(),
                a.base,
                model(&Matrix::from_rows(std::slice::from_ref(&x))).unwrap()[0],
            )
        };
        worst_local = worst_local.max((phi_sum + base - direct).abs());
    }
    ensure!(worst_local <= 1e-8, "local accuracy violated by {worst_local:e}");

    for m in 2..=8 {
        let dummy = r.gen_range(0..m);
        let model = synthetic_model(&mut r, m, Some(dummy));
        let bg = random_matrix(&mut r, 6, m, 1.0);
        let x: Vec<f64> = (0..m).map(|_| normal(&mut r)).collect();
        let a = shapley_values(&model, &bg, &x, ShapleyMode::Exact, 0).map_err(|e| e.to_string())?;
        ensure!(
            a.phi[dummy] == 0.0,
            "dummy feature {dummy} of {m} got phi {}",
            a.phi[dummy]
        );
    }
    Ok(format!(
        "enumeration vs exact {worst_enum:.1e} (<= 1e-6, M <= 8); local accuracy {worst_local:.1e} (<= 1e-8, 100 models); dummy phi = 0"
    ))
}

// ---------------------------------------------------------------- permutation

fn regression_fixture(seed: u64, n: usize, signal: f64) -> Dataset {
    let mut r = rng(seed);
    let a: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let b: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let y: Vec<f64> = a.iter().map(|v| signal * v + normal(&mut r)).collect();
    Dataset::new(vec![
        Column::continuous("a", a, vec![false; n]),
        Column::continuous("b", b, vec![false; n]),
        Column::continuous("y", y, vec![false; n]).with_role(Role::Target),
    ])
    .unwrap()
}

/// Kolmogorov-Smirnov distance between the sample and U(0, 1).
fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

fn permutation_importance_criterion() -> Check {
    // A depth-1 tree that splits on `x` never reads `z`.
    let n = 20;
    let frame = Frame::from_rows(&(0..n).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect::<Vec<_>>());
    let y = Target::Classes {
        codes: (0..n).map(|i| usize::from(i >= n / 2)).collect(),
        levels: vec!["lo".into(), "hi".into()],
    };
    let depth1 = BTreeMap::from([("max_depth".to_string(), Value::Int(1))]);
    let tree = fit("dtree", &depth1, &frame, Some(&y), FitContext::default()).map_err(|e| e.to_string())?;
    let constant =
        fit("constant", &BTreeMap::new(), &frame, Some(&y), FitContext::default()).map_err(|e| e.to_string())?;
    let imp = permutation_importance(&tree, &frame, &y, Metric::Accuracy, 10, 1).map_err(|e| e.to_string())?;
    ensure!(imp.values[1] == 0.0, "ignored feature scored {}", imp.values[1]);
    ensure!(imp.values[0] > 0.0, "split feature scored {}", imp.values[0]);
    let imp = permutation_importance(&constant, &frame, &y, Metric::LogLoss, 10, 1).map_err(|e| e.to_string())?;
    ensure!(
        imp.values.iter().all(|&v| v == 0.0),
        "constant model importances {:?}",
        imp.values
    );

    let ridge = PipelineSpec::new(ProblemType::Regression, vec![StepSpec::new(StepKind::Model, "ridge")]);
    let opts = SignificanceOptions {
        metric: Metric::R2,
        n_repeats: 1,
        n_permutations: 99,
    };
    let ds = regression_fixture(7000, 40, 1.5);
    let rep = permuted_target_significance(&ridge, &ds, ds.row_ids(), &CVScheme::kfold(4), &opts, 1)
        .map_err(|e| e.to_string())?;
    let p = rep.p_values.clone().unwrap();
    ensure!(p[0] <= 0.05, "informative feature p = {}", p[0]);

    let binary = {
        let mut r = rng(7001);
        let n = 40;
        let a: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let b: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let labels: Vec<String> = a
            .iter()
            .map(|v| if v + 0.3 * normal(&mut r) > 0.0 { "yes" } else { "no" }.to_string())
            .collect();
        Dataset::new(vec![
            Column::continuous("a", a, vec![false; n]),
            Column::continuous("b", b, vec![false; n]),
            Column::discrete("y", DType::Binary, &opt(&labels)).with_role(Role::Target),
        ])
        .unwrap()
    };
    let logistic = PipelineSpec::new(ProblemType::Binary, vec![StepSpec::new(StepKind::Model, "logistic")]);
    let opts_auc = SignificanceOptions {
        metric: Metric::RocAuc,
        n_repeats: 1,
        n_permutations: 99,
    };
    let rep = permuted_target_significance(
        &logistic,
        &binary,
        binary.row_ids(),
        &CVScheme::stratified(4, None),
        &opts_auc,
        2,
    )
    .map_err(|e| e.to_string())?;
    let p_bin = rep.p_values.clone().unwrap();
    ensure!(p_bin[0] <= 0.05, "informative feature (binary) p = {}", p_bin[0]);

    // Pure-noise fixtures: every feature is null.
    let mut null_p = Vec::new();
    for f in 0..60u64 {
        let ds = regression_fixture(7100 + f, 30, 0.0);
        let rep = permuted_target_significance(&ridge, &ds, ds.row_ids(), &CVScheme::kfold(3), &opts, f)
            .map_err(|e| e.to_string())?;
        null_p.extend(rep.p_values.unwrap());
    }
    let ks = ks_uniform(null_p.clone());
    ensure!(ks < 0.2, "null p-values are {ks:.3} from uniform (KS)");
    Ok(format!(
        "ignored feature = 0 exactly; informative p = {:.2} / {:.2}; {} null p-values KS = {ks:.3} (< 0.2)",
        p[0],
        p_bin[0],
        null_p.len()
    ))
}

// ---------------------------------------------------------------- selection

fn model_selection() -> Check {
    // Two well separated clusters of three rows per class in each outer
    // training fold. Inner leave-one-out: 1-NN always finds a same-class
    // neighbour (score 1), the constant predicts the class the held-out row
    // is outnumbered by (score 0).
    let x: Vec<f64> = (0..6)
        .map(f64::from)
        .chain((0..6).map(|i| 100.0 + f64::from(i)))
        .collect();
    let labels: Vec<String> = (0..12).map(|i| if i < 6 { "a" } else { "b" }.to_string()).collect();
    let ds = Dataset::new(vec![
        Column::continuous("x", x, vec![false; 12]),
        Column::discrete("y", DType::Binary, &opt(&labels)).with_role(Role::Target),
    ])
    .unwrap();
    let knn = StepSpec::new(StepKind::Model, "knn").param("k", ParamDist::fixed(1i64));
    let spec = PipelineSpec::new(
        ProblemType::Binary,
        vec![StepSpec::select(
            StepKind::Model,
            vec![StepSpec::new(StepKind::Model, "constant"), knn],
        )],
    );
    let mut folds = 0;
    for seed in 0..10 {
        let ev = Evaluator::new(&ds, &[Metric::Accuracy]);
        let report = ev
            .nested_evaluate(
                &spec,
                ds.row_ids(),
                &CVScheme::stratified(2, None),
                &CVScheme::kfold(6),
                &SearchStrategy::random(2),
                Metric::Accuracy,
                seed,
            )
            .map_err(|e| e.to_string())?;
        for fold in &report.folds {
            ensure!(
                fold.config.steps[0].estimator == "knn",
                "seed {seed} fold {}: chose {}",
                fold.fold,
                fold.config.steps[0].estimator
            );
            let trace = fold.search.as_ref().ok_or("no search trace")?;
            for c in &trace.candidates {
                let want = if c.config.steps[0].estimator == "knn" { 1.0 } else { 0.0 };
                ensure!(
                    c.value == Some(want),
                    "seed {seed} fold {}: {} scored {:?}, expected {want}",
                    fold.fold,
                    c.config.steps[0].estimator,
                    c.value
                );
            }
            folds += 1;
        }
    }
    Ok(format!(
        "1-NN chosen in all {folds} outer folds over 10 seeds; inner scores 1 vs 0 as computed by hand"
    ))
}

// ---------------------------------------------------------------- CLI helpers

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

const EXAMPLES: [&str; 2] = ["regression.json", "classification.json"];

fn wb(args: &[&str]) -> Result<Json, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_wb"))
        .args(args)
        .env_remove("WB_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "wb {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| format!("wb {}: {e}", args.join(" ")))
}

fn cli_run(config: &Path, out: &Path, extra: &[&str]) -> Result<Json, String> {
    let mut args = vec![
        "run",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--json",
    ];
    args.extend_from_slice(extra);
    wb(&args)
}

fn strip_timestamps(v: &mut Json) {
    match v {
        Json::Object(map) => {
            map.remove("timestamp_ms");
            map.values_mut().for_each(strip_timestamps);
        }
        Json::Array(items) => items.iter_mut().for_each(strip_timestamps),
        _ => {}
    }
}

fn reproducibility() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for name in EXAMPLES {
        let config = assets().join(name);
        let first = cli_run(&config, dir.path(), &[])?;
        let second = cli_run(&config, &dir.path().join("again"), &[])?;
        ensure!(
            first["digest"] == second["digest"],
            "{name}: digests differ between identical runs"
        );
        let record = |v: &Json| {
            let mut doc: Json = serde_json::from_slice(&std::fs::read(v["record"].as_str().unwrap()).unwrap()).unwrap();
            strip_timestamps(&mut doc);
            doc
        };
        ensure!(
            record(&first) == record(&second),
            "{name}: stored records differ beyond timestamps"
        );
        let sequential = cli_run(&config, &dir.path().join("seq"), &["--jobs", "1"])?;
        let parallel = cli_run(&config, &dir.path().join("par"), &["--jobs", "8"])?;
        ensure!(
            sequential["digest"] == first["digest"],
            "{name}: --jobs 1 changed the digest"
        );
        ensure!(
            parallel["digest"] == first["digest"],
            "{name}: --jobs 8 changed the digest"
        );
        let replay = wb(&["replay", first["record"].as_str().unwrap(), "--json"])?;
        ensure!(
            replay["digest"] == first["digest"] && replay["match"] == true,
            "{name}: replay digest differs"
        );
        lines.push(format!("{name} {}", &first["digest"].as_str().unwrap()[..12]));
    }
    Ok(format!("rerun, --jobs 1/8 and replay agree: {}", lines.join(", ")))
}

// ---------------------------------------------------------------- HTTP

struct Response {
    status: u16,
    headers: BTreeMap<String, String>,
    body: Json,
}

fn http(addr: &str, method: &str, path: &str, content_type: Option<&str>, body: &[u8]) -> Response {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(60))).unwrap();
    let mut head = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Length: {}\r\n",
        body.len()
    );
    if let Some(ct) = content_type {
        head.push_str(&format!("Content-Type: {ct}\r\n"));
    }
    head.push_str("\r\n");
    s.write_all(head.as_bytes()).unwrap();
    s.write_all(body).unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).unwrap();
    let split = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .expect("header terminator");
    let head = String::from_utf8_lossy(&raw[..split]).to_string();
    let mut lines = head.lines();
    let status = lines
        .next()
        .unwrap()
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    let headers: BTreeMap<String, String> = lines
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_ascii_lowercase(), v.trim().to_string()))
        .collect();
    let mut payload = raw[split + 4..].to_vec();
    if headers.get("transfer-encoding").is_some_and(|v| v.contains("chunked")) {
        payload = dechunk(&payload);
    }
    let body = serde_json::from_slice(&payload).unwrap_or(Json::Null);
    Response { status, headers, body }
}

fn dechunk(mut data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let eol = data.windows(2).position(|w| w == b"\r\n").unwrap();
        let size = usize::from_str_radix(std::str::from_utf8(&data[..eol]).unwrap().trim(), 16).unwrap();
        if size == 0 {
            return out;
        }
        out.extend_from_slice(&data[eol + 2..eol + 2 + size]);
        data = &data[eol + 4 + size..];
    }
}

struct Contract {
    addr: String,
    checked: usize,
}

impl Contract {
    fn expect(&mut self, method: &str, path: &str, ct: Option<&str>, body: &[u8], status: u16) -> Result<Json, String> {
        let resp = http(&self.addr, method, path, ct, body);
        ensure!(
            resp.status == status,
            "{method} {path}: status {} (expected {status}): {}",
            resp.status,
            resp.body
        );
        ensure!(
            resp.headers.get("x-wb-schema").map(String::as_str) == Some("1"),
            "{method} {path}: missing X-WB-Schema"
        );
        ensure!(
            resp.body["schema_version"] == 1,
            "{method} {path}: body lacks schema_version"
        );
        self.checked += 1;
        Ok(resp.body)
    }

    fn json(&mut self, method: &str, path: &str, body: &Json, status: u16) -> Result<Json, String> {
        self.expect(
            method,
            path,
            Some("application/json"),
            body.to_string().as_bytes(),
            status,
        )
    }

    fn get(&mut self, path: &str, status: u16) -> Result<Json, String> {
        self.expect("GET", path, None, b"", status)
    }

    fn wait(&mut self, id: &str) -> Result<Json, String> {
        let mut last = 0;
        for _ in 0..6000 {
            let job = self.get(&format!("/runs/{id}"), 200)?;
            let completed = job["progress"]["completed"].as_u64().unwrap_or(0);
            ensure!(completed >= last, "progress of {id} went from {last} to {completed}");
            last = completed;
            match job["status"].as_str() {
                Some("queued" | "running") => std::thread::sleep(Duration::from_millis(10)),
                _ => return Ok(job),
            }
        }
        Err(format!("run {id} did not finish"))
    }
}

fn cli_api_equivalence() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let state = wb_server::AppState::new(wb_server::ServerConfig {
        runs_dir: dir.path().join("server"),
        base_dir: assets(),
        workers: 2,
    })
    .map_err(|e| e.to_string())?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .map_err(|e| e.to_string())?;
    let addr = listener.local_addr().unwrap().to_string();
    runtime.spawn(wb_server::serve(listener, Arc::clone(&state), std::future::pending()));
    let mut api = Contract { addr, checked: 0 };

    // Same config through both surfaces.
    let mut digests = Vec::new();
    for name in EXAMPLES {
        let path = assets().join(name);
        let cli = cli_run(&path, &dir.path().join("cli"), &[])?;
        let doc: Json = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let job = api.json("POST", "/runs", &doc, 202)?;
        let id = job["run_id"].as_str().ok_or("no run_id")?.to_string();
        ensure!(id == cli["run_id"].as_str().unwrap(), "{name}: run ids differ");
        let done = api.wait(&id)?;
        ensure!(done["status"] == "done", "{name}: run ended {}", done["status"]);
        ensure!(
            done["digest"] == cli["digest"],
            "{name}: API digest {} != CLI digest {}",
            done["digest"],
            cli["digest"]
        );
        let report = api.get(&format!("/runs/{id}/report"), 200)?;
        ensure!(report["digest"] == cli["digest"], "{name}: report digest differs");
        ensure!(
            report["cv"]["aggregate"].is_object(),
            "{name}: report lacks aggregate metrics"
        );
        let imp = api.get(&format!("/runs/{id}/importance"), 200)?;
        ensure!(
            !imp["reports"].as_array().unwrap().is_empty(),
            "{name}: no importance reports"
        );
        digests.push(cli["digest"].as_str().unwrap()[..12].to_string());
    }

    // Remaining endpoints, success and error codes.
    let health = api.get("/health", 200)?;
    ensure!(health["status"] == "ok", "health body {health}");
    api.get("/no/such/route", 404)?;
    let csv = std::fs::read(assets().join("synthetic.csv")).unwrap();
    let up = api.expect("POST", "/datasets", Some("text/csv"), &csv, 201)?;
    let id = up["id"].as_str().ok_or("no dataset id")?.to_string();
    ensure!(
        up["fingerprint"].as_str().unwrap().starts_with(&id),
        "dataset id is not fingerprint-derived"
    );
    let again = api.expect("POST", "/datasets", Some("text/csv"), &csv, 200)?;
    ensure!(again["id"] == up["id"], "re-upload changed the id");
    let boundary = "acceptance-boundary";
    let mut multipart = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"s.csv\"\r\nContent-Type: text/csv\r\n\r\n"
    )
    .into_bytes();
    multipart.extend_from_slice(&csv);
    multipart.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    let multi = api.expect(
        "POST",
        "/datasets",
        Some(&format!("multipart/form-data; boundary={boundary}")),
        &multipart,
        200,
    )?;
    ensure!(multi["id"] == up["id"], "multipart upload gave another id");
    api.expect("POST", "/datasets", Some("application/json"), b"{}", 415)?;
    api.expect("POST", "/datasets", Some("text/csv"), b"a,b\n1,2,3\n", 400)?;

    let summary = api.get(&format!("/datasets/{id}/summary"), 200)?;
    ensure!(
        summary["columns"].as_array().unwrap().len() == 10,
        "summary has {} columns",
        summary["columns"]
    );
    api.get("/datasets/0000000000000000/summary", 404)?;
    let roles = json!({"target": "diagnosis", "non_input": ["site", "sex", "outcome"]});
    let schema = api.json("POST", &format!("/datasets/{id}/roles"), &roles, 200)?;
    ensure!(
        schema.to_string().contains("diagnosis"),
        "roles response lacks the schema"
    );
    api.json(
        "POST",
        &format!("/datasets/{id}/roles"),
        &json!({"target": "nope"}),
        400,
    )?;
    api.json("POST", "/datasets/0000000000000000/roles", &roles, 404)?;

    let mut by_id: Json =
        serde_json::from_str(&std::fs::read_to_string(assets().join("classification.json")).unwrap()).unwrap();
    by_id["dataset"] = json!({"id": id});
    let mut bad = by_id.clone();
    bad["cv"]["outer"]["k"] = json!(1);
    let err = api.json("POST", "/runs", &bad, 400)?;
    ensure!(
        err["issues"]
            .as_array()
            .unwrap()
            .iter()
            .any(|i| i["path"] == "cv.outer.k"),
        "400 does not name cv.outer.k: {err}"
    );
    api.expect("POST", "/runs", Some("application/json"), b"{oops", 400)?;
    let job = api.json("POST", "/runs", &json!({"config": by_id}), 202)?;
    let run_id = job["run_id"].as_str().unwrap().to_string();
    ensure!(
        api.wait(&run_id)?["status"] == "done",
        "run by dataset id did not finish"
    );
    api.get("/runs/ffffffffffffffff", 404)?;
    api.get("/runs/ffffffffffffffff/report", 404)?;
    api.get("/runs/ffffffffffffffff/importance", 404)?;
    let list = api.get("/runs", 200)?;
    ensure!(
        list["runs"].as_array().unwrap().len() == 3,
        "run list has {} entries",
        list["runs"]
    );

    // After cancellation, a new run ends interrupted and has no report.
    runtime.block_on(state.shutdown());
    let mut other = by_id.clone();
    other["seed"] = json!(12);
    let job = api.json("POST", "/runs", &other, 202)?;
    let late = job["run_id"].as_str().unwrap().to_string();
    let end = api.wait(&late)?;
    ensure!(end["status"] == "interrupted", "cancelled run ended {}", end["status"]);
    api.get(&format!("/runs/{late}/report"), 404)?;
    api.get(&format!("/runs/{late}/importance"), 404)?;
    runtime.shutdown_background();
    Ok(format!(
        "CLI and API digests equal ({}); {} HTTP exchanges checked",
        digests.join(", "),
        api.checked
    ))
}
