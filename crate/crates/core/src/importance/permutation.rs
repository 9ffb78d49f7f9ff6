use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::ImportanceReport;
use crate::cv::{CVScheme, Direction, Evaluator, Metric};
use crate::error::{Error, Result};
use crate::estimators::{Feature, FittedEstimator, Frame, Target};
use crate::pipeline::PipelineSpec;
use crate::seeding;
use crate::tabular::{ColumnValues, Dataset, RowId};

fn drop_in_score(metric: Metric, base: f64, permuted: f64) -> f64 {
    match metric.direction() {
        Direction::HigherBetter => base - permuted,
        Direction::LowerBetter => permuted - base,
    }
}

/// Mean score drop when one column of the validation frame is shuffled,
/// the model held fixed. Positive means the feature matters, whatever the
/// metric's direction. Each (feature, repeat) pair draws its permutation
/// from its own derived seed.
pub fn permutation_importance(
    model: &FittedEstimator,
    x_val: &Frame,
    y_val: &Target,
    metric: Metric,
    n_repeats: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    if n_repeats < 1 {
        return Err(Error::invalid("n_repeats must be >= 1"));
    }
    if x_val.n_rows() < 2 {
        return Err(Error::invalid(
            "permutation importance needs at least two validation rows",
        ));
    }
    let base = metric.score(y_val, &model.predict(x_val)?)?;
    let values = (0..x_val.x.n_cols)
        .into_par_iter()
        .map(|j| {
            let mut total = 0.0;
            for r in 0..n_repeats {
                let mut order: Vec<usize> = (0..x_val.n_rows()).collect();
                order.shuffle(&mut seeding::rng(seed_of!(seed, "permute", j, r)));
                let mut shuffled = x_val.clone();
                for (i, &src) in order.iter().enumerate() {
                    shuffled.x.set(i, j, x_val.x.get(src, j));
                }
                let score = metric.score(y_val, &model.predict(&shuffled)?)?;
                total += drop_in_score(metric, base, score);
            }
            Ok(total / n_repeats as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut report = ImportanceReport::new("permutation", &x_val.features, values);
    report.meta.metric = Some(metric.id().to_string());
    report.meta.n_repeats = Some(n_repeats);
    report.meta.seed = Some(seed);
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SignificanceOptions {
    pub metric: Metric,
    pub n_repeats: usize,
    pub n_permutations: usize,
}

/// Permutation importance averaged over the validation folds of `scheme`.
/// Features are matched by name across folds; a feature missing from a
/// fold (e.g. dropped by a selector) counts as 0 there.
fn cv_importance(
    spec: &PipelineSpec,
    ds: &Dataset,
    train: &[RowId],
    scheme: &CVScheme,
    opts: &SignificanceOptions,
    seed: u64,
) -> Result<(Vec<Feature>, Vec<f64>)> {
    let evaluator = Evaluator::new(ds, &[opts.metric]);
    let report = evaluator.evaluate(spec, train, scheme, seed)?;
    let mut features: Vec<Feature> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut n_folds = 0;
    for fold in &report.folds {
        let Some(out) = &fold.output else {
            return Err(Error::invalid(format!(
                "fold {} failed: {}",
                fold.label,
                fold.error.as_deref().unwrap_or("unknown")
            )));
        };
        n_folds += 1;
        let x_val = out.fitted.transform_features(&Frame::from_dataset(ds, &out.val))?;
        let y_val = Target::from_dataset(ds, &out.val, spec.problem_type)?;
        let imp = permutation_importance(
            out.fitted.model(),
            &x_val,
            &y_val,
            opts.metric,
            opts.n_repeats,
            seed_of!(seed, "importance", fold.fold),
        )?;
        for (f, v) in x_val.features.iter().zip(imp.values) {
            match features.iter().position(|g| g.name == f.name) {
                Some(i) => sums[i] += v,
                None => {
                    features.push(f.clone());
                    sums.push(v);
                }
            }
        }
    }
    Ok((features, sums.into_iter().map(|s| s / n_folds as f64).collect()))
}

/// `ds` with the target values shuffled among the `train` rows only.
fn permute_target(ds: &Dataset, train: &[usize], seed: u64) -> Result<Dataset> {
    let idx = ds.column_index(&ds.target()?.name)?;
    let mut col = ds.columns()[idx].clone();
    let mut order = train.to_vec();
    order.shuffle(&mut seeding::rng(seed));
    let missing = col.missing.clone();
    match &mut col.values {
        ColumnValues::Numeric(v) => {
            let orig = v.clone();
            for (&dst, &src) in train.iter().zip(&order) {
                v[dst] = orig[src];
            }
        }
        ColumnValues::Codes(c) => {
            let orig = c.clone();
            for (&dst, &src) in train.iter().zip(&order) {
                c[dst] = orig[src];
            }
        }
    }
    for (&dst, &src) in train.iter().zip(&order) {
        col.missing[dst] = missing[src];
    }
    Ok(ds.replace_column(idx, col))
}

/// Cross-validated permutation importance with p-values from a null
/// distribution: the whole protocol is rerun `n_permutations` times on data
/// whose target is shuffled among the training rows.
///
/// `p_j = (#{null_j >= observed_j} + 1) / (n_permutations + 1)`.
pub fn permuted_target_significance(
    spec: &PipelineSpec,
    ds: &Dataset,
    train: &[RowId],
    scheme: &CVScheme,
    opts: &SignificanceOptions,
    seed: u64,
) -> Result<ImportanceReport> {
    if opts.n_permutations < 10 {
        return Err(Error::invalid("n_permutations must be >= 10"));
    }
    let (features, observed) = cv_importance(spec, ds, train, scheme, opts, seed)?;
    let positions = ds.positions(train)?;
    let nulls = (0..opts.n_permutations)
        .into_par_iter()
        .map(|p| {
            let shuffled = permute_target(ds, &positions, seed_of!(seed, "null", p))?;
            let (names, values) = cv_importance(spec, &shuffled, train, scheme, opts, seed)?;
            Ok(features
                .iter()
                .map(|f| names.iter().position(|g| g.name == f.name).map_or(0.0, |i| values[i]))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let p_values = (0..features.len())
        .map(|j| {
            let hits = nulls.iter().filter(|null| null[j] >= observed[j]).count();
            (hits + 1) as f64 / (opts.n_permutations + 1) as f64
        })
        .collect();
    let mut report = ImportanceReport::new("permuted_target", &features, observed);
    report.p_values = Some(p_values);
    report.meta.metric = Some(opts.metric.id().to_string());
    report.meta.n_repeats = Some(opts.n_repeats);
    report.meta.n_permutations = Some(opts.n_permutations);
    report.meta.seed = Some(seed);
    Ok(report)
}
