//! Imputers, encoders, scalers, and feature selectors.
//!
//! Each transformer touches only the columns its scope admits and passes
//! the rest through unchanged. Statistics ignore missing cells.

use super::{Feature, FeatureKind, Frame, Matrix, State, Target};
use crate::error::{Error, Result};
use crate::pipeline::ColumnScope;
use crate::tabular::{mean_std, quantile_sorted};

fn observed(frame: &Frame, j: usize) -> Vec<f64> {
    (0..frame.n_rows())
        .map(|i| frame.x.get(i, j))
        .filter(|v| !v.is_nan())
        .collect()
}

fn sorted_observed(frame: &Frame, j: usize) -> Vec<f64> {
    let mut v = observed(frame, j);
    v.sort_by(f64::total_cmp);
    v
}

fn scalable(f: &Feature, scope: ColumnScope) -> bool {
    f.kind.in_scope(scope) && !matches!(f.kind, FeatureKind::Categorical { .. })
}

/// Zero spread maps to a unit divisor so constant columns become zeros.
fn nonzero(s: f64) -> f64 {
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

pub(super) fn fit_standard(frame: &Frame, scope: ColumnScope) -> State {
    let columns = (0..frame.x.n_cols)
        .map(|j| {
            let v = observed(frame, j);
            (scalable(&frame.features[j], scope) && !v.is_empty()).then(|| {
                let (m, s) = mean_std(&v);
                (m, nonzero(s))
            })
        })
        .collect();
    State::Affine { columns }
}

pub(super) fn fit_robust(frame: &Frame, scope: ColumnScope) -> State {
    let columns = (0..frame.x.n_cols)
        .map(|j| {
            let v = sorted_observed(frame, j);
            (scalable(&frame.features[j], scope) && !v.is_empty()).then(|| {
                let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
                (quantile_sorted(&v, 0.5), nonzero(iqr))
            })
        })
        .collect();
    State::Affine { columns }
}

/// Continuous columns get the mean (or median); binary and categorical
/// columns get their most frequent code, ties to the lowest. A column with
/// no observed values is filled with 0.
pub(super) fn fit_impute(frame: &Frame, scope: ColumnScope, median: bool) -> State {
    let fill = (0..frame.x.n_cols)
        .map(|j| {
            let f = &frame.features[j];
            if !f.kind.in_scope(scope) {
                return None;
            }
            let v = sorted_observed(frame, j);
            if v.is_empty() {
                return Some(0.0);
            }
            Some(match f.kind {
                FeatureKind::Continuous if median => quantile_sorted(&v, 0.5),
                FeatureKind::Continuous => mean_std(&v).0,
                _ => {
                    // v is sorted, so the first longest run is the lowest mode
                    let (mut best, mut best_len, mut run) = (v[0], 0, 0);
                    for (i, x) in v.iter().enumerate() {
                        run = if i > 0 && v[i - 1] == *x { run + 1 } else { 1 };
                        if run > best_len {
                            best = *x;
                            best_len = run;
                        }
                    }
                    best
                }
            })
        })
        .collect();
    State::Impute { fill }
}

/// Expands in-scope categorical columns into one `col=level` indicator per
/// level seen at fit time. Unseen levels and missing cells encode as all
/// zeros.
pub(super) fn fit_onehot(frame: &Frame, scope: ColumnScope) -> State {
    let mut expansions = Vec::new();
    let mut output = Vec::new();
    for (j, f) in frame.features.iter().enumerate() {
        match &f.kind {
            FeatureKind::Categorical { levels } if f.kind.in_scope(scope) => {
                let mut codes: Vec<u32> = observed(frame, j).into_iter().map(|v| v as u32).collect();
                codes.sort_unstable();
                codes.dedup();
                for &c in &codes {
                    output.push(Feature {
                        name: format!("{}={}", f.name, levels[c as usize]),
                        kind: FeatureKind::Binary,
                        source: f.source.clone(),
                    });
                }
                expansions.push(Some(codes));
            }
            _ => {
                output.push(f.clone());
                expansions.push(None);
            }
        }
    }
    State::OneHot { expansions, output }
}

pub(super) fn fit_variance(frame: &Frame, scope: ColumnScope, threshold: f64) -> Result<State> {
    let keep: Vec<usize> = (0..frame.x.n_cols)
        .filter(|&j| {
            if !frame.features[j].kind.in_scope(scope) {
                return true;
            }
            let v = observed(frame, j);
            !v.is_empty() && mean_std(&v).1.powi(2) > threshold
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::fit(
            "select_variance",
            format!("no feature has variance above {threshold}"),
        ));
    }
    Ok(State::Select { keep })
}

/// Absolute Pearson correlation over rows where the feature is observed;
/// zero when either side has no spread.
fn abs_correlation(x: &[f64], y: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, _)| !a.is_nan())
        .map(|(a, b)| (*a, *b))
        .collect();
    if pairs.len() < 2 {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).abs()
    }
}

/// Keeps the `k` in-scope features most correlated with the target (ties to
/// the earlier column) plus every out-of-scope feature, in input order.
pub(super) fn fit_univariate(frame: &Frame, target: &Target, scope: ColumnScope, k: usize) -> Result<State> {
    if k == 0 {
        return Err(Error::fit("select_univariate", "k must be >= 1"));
    }
    let y = target.as_f64();
    let mut scored: Vec<(f64, usize)> = (0..frame.x.n_cols)
        .filter(|&j| frame.features[j].kind.in_scope(scope))
        .map(|j| (abs_correlation(&frame.x.column(j), &y), j))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let chosen: Vec<usize> = scored.iter().take(k).map(|s| s.1).collect();
    let keep = (0..frame.x.n_cols)
        .filter(|&j| !frame.features[j].kind.in_scope(scope) || chosen.contains(&j))
        .collect();
    Ok(State::Select { keep })
}

pub(super) fn apply(state: &State, frame: &Frame) -> Frame {
    match state {
        State::Affine { columns } => {
            let mut out = frame.clone();
            for (j, c) in columns.iter().enumerate() {
                if let Some((center, scale)) = c {
                    for i in 0..out.n_rows() {
                        out.x.set(i, j, (frame.x.get(i, j) - center) / scale);
                    }
                    out.features[j].kind = FeatureKind::Continuous;
                }
            }
            out
        }
        State::Impute { fill } => {
            let mut out = frame.clone();
            for (j, f) in fill.iter().enumerate() {
                if let Some(f) = f {
                    for i in 0..out.n_rows() {
                        if out.x.get(i, j).is_nan() {
                            out.x.set(i, j, *f);
                        }
                    }
                }
            }
            out
        }
        State::OneHot { expansions, output } => {
            let mut x = Matrix::zeros(frame.n_rows(), output.len());
            for i in 0..frame.n_rows() {
                let mut at = 0;
                for (j, e) in expansions.iter().enumerate() {
                    let v = frame.x.get(i, j);
                    match e {
                        None => {
                            x.set(i, at, v);
                            at += 1;
                        }
                        Some(codes) => {
                            if let Some(p) = codes.iter().position(|&c| c as f64 == v) {
                                x.set(i, at + p, 1.0);
                            }
                            at += codes.len();
                        }
                    }
                }
            }
            Frame::new(output.clone(), x)
        }
        State::Select { keep } => Frame::new(
            keep.iter().map(|&j| frame.features[j].clone()).collect(),
            frame.x.select_cols(keep),
        ),
        _ => unreachable!("not a transformer state"),
    }
}
