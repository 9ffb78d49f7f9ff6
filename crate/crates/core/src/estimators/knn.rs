//! Nearest-neighbour and constant baselines.

use super::{Matrix, Predictions, State, Target};
use crate::error::{Error, Result};

pub(super) fn fit(frame: &super::Frame, target: &Target, k: usize) -> Result<State> {
    if k == 0 {
        return Err(Error::fit("knn", "k must be >= 1"));
    }
    Ok(State::Knn {
        x: frame.x.clone(),
        y: target.clone(),
        k: k.min(frame.n_rows()),
    })
}

/// Indices of the `k` training rows closest in Euclidean distance; equal
/// distances resolve to the lower row index.
fn neighbours(x: &Matrix, k: usize, query: &[f64]) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..x.n_rows)
        .map(|i| {
            let s: f64 = x.row(i).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (s, i)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, i)| i).collect()
}

pub(super) fn predict(x: &Matrix, y: &Target, k: usize, query: &Matrix) -> Predictions {
    let rows = (0..query.n_rows).map(|i| neighbours(x, k, query.row(i)));
    match y {
        Target::Continuous(v) => Predictions::Values(
            rows.map(|nb| nb.iter().map(|&j| v[j]).sum::<f64>() / nb.len() as f64)
                .collect(),
        ),
        Target::Classes { codes, levels } => Predictions::from_proba(
            rows.map(|nb| {
                let mut p = vec![0.0; levels.len()];
                for &j in &nb {
                    p[codes[j]] += 1.0 / nb.len() as f64;
                }
                p
            })
            .collect(),
        ),
    }
}

/// Predicts the training mean, or the training class frequencies.
pub(super) fn fit_constant(target: &Target) -> State {
    match target {
        Target::Continuous(v) => State::Constant {
            output: vec![v.iter().sum::<f64>() / v.len() as f64],
            classification: false,
        },
        Target::Classes { codes, levels } => {
            let mut p = vec![0.0; levels.len()];
            for &c in codes {
                p[c] += 1.0 / codes.len() as f64;
            }
            State::Constant {
                output: p,
                classification: true,
            }
        }
    }
}
