//! Ridge regression and L2-regularized logistic regression.

use serde::{Deserialize, Serialize};

use super::{Frame, Matrix, Predictions, State, Target};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearKind {
    Regression,
    /// One coefficient vector for the second class.
    Binary,
    /// One coefficient vector per class, probabilities renormalized.
    OneVsRest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub coefs: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl LinearModel {
    pub fn predict(&self, x: &Matrix) -> Predictions {
        let z = |i: usize, c: usize| dot(x.row(i), &self.coefs[c]) + self.intercepts[c];
        match self.kind {
            LinearKind::Regression => Predictions::Values((0..x.n_rows).map(|i| z(i, 0)).collect()),
            LinearKind::Binary => Predictions::from_proba(
                (0..x.n_rows)
                    .map(|i| {
                        let p = sigmoid(z(i, 0));
                        vec![1.0 - p, p]
                    })
                    .collect(),
            ),
            LinearKind::OneVsRest => Predictions::from_proba(
                (0..x.n_rows)
                    .map(|i| {
                        let s: Vec<f64> = (0..self.coefs.len()).map(|c| sigmoid(z(i, c))).collect();
                        let total: f64 = s.iter().sum();
                        s.iter().map(|v| v / total).collect()
                    })
                    .collect(),
            ),
        }
    }
}

/// Closed-form ridge on centered data:
/// `w = (XcᵀXc + αI)⁻¹ Xcᵀ yc`, `b = ȳ − x̄ᵀw`.
pub(super) fn fit_ridge(frame: &Frame, target: &Target, alpha: f64) -> Result<State> {
    let Target::Continuous(y) = target else {
        return Err(Error::fit("ridge", "ridge needs a continuous target"));
    };
    let (n, d) = (frame.n_rows(), frame.x.n_cols);
    let x = &frame.x;
    let x_mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    for i in 0..n {
        let row: Vec<f64> = (0..d).map(|j| x.get(i, j) - x_mean[j]).collect();
        let yc = y[i] - y_mean;
        for a in 0..d {
            rhs[a] += row[a] * yc;
            for b in 0..=a {
                gram[a * d + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram[b * d + a] = gram[a * d + b];
        }
        gram[a * d + a] += alpha;
    }
    let w = if d == 0 {
        Vec::new()
    } else {
        linalg::solve_symmetric(&gram, &rhs, d)
            .ok_or_else(|| Error::fit("ridge", "normal equations are singular; increase alpha"))?
    };
    let b = y_mean - dot(&x_mean, &w);
    Ok(State::Linear(LinearModel {
        kind: LinearKind::Regression,
        coefs: vec![w],
        intercepts: vec![b],
    }))
}

/// Mean negative log-likelihood plus `(alpha/2)‖w‖²` for labels in {0, 1};
/// the intercept is not penalized.
pub fn logistic_objective(x: &Matrix, y: &[f64], w: &[f64], b: f64, alpha: f64) -> f64 {
    let n = x.n_rows as f64;
    let nll: f64 = (0..x.n_rows)
        .map(|i| {
            let z = dot(x.row(i), w) + b;
            softplus(z) - y[i] * z
        })
        .sum::<f64>()
        / n;
    nll + 0.5 * alpha * dot(w, w)
}

/// Analytic gradient of [`logistic_objective`] with respect to `(w, b)`.
pub fn logistic_gradient(x: &Matrix, y: &[f64], w: &[f64], b: f64, alpha: f64) -> (Vec<f64>, f64) {
    let n = x.n_rows as f64;
    let mut gw: Vec<f64> = w.iter().map(|wi| alpha * wi).collect();
    let mut gb = 0.0;
    for i in 0..x.n_rows {
        let row = x.row(i);
        let r = (sigmoid(dot(row, w) + b) - y[i]) / n;
        for (g, xv) in gw.iter_mut().zip(row) {
            *g += r * xv;
        }
        gb += r;
    }
    (gw, gb)
}

/// Full-batch gradient descent with Armijo backtracking. Trial steps start
/// from the Barzilai-Borwein estimate of the previous iteration.
fn descend(x: &Matrix, y: &[f64], alpha: f64, max_iter: usize, tol: f64) -> (Vec<f64>, f64) {
    let d = x.n_cols;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut f = logistic_objective(x, y, &w, b, alpha);
    let (mut gw, mut gb) = logistic_gradient(x, y, &w, b, alpha);
    let mut step = 1.0;
    for _ in 0..max_iter {
        let gnorm2 = dot(&gw, &gw) + gb * gb;
        if gnorm2.sqrt() <= tol {
            break;
        }
        let mut t = step;
        let (nw, nb, nf) = loop {
            let nw: Vec<f64> = w.iter().zip(&gw).map(|(a, g)| a - t * g).collect();
            let nb = b - t * gb;
            let nf = logistic_objective(x, y, &nw, nb, alpha);
            if nf <= f - 1e-4 * t * gnorm2 || t < 1e-20 {
                break (nw, nb, nf);
            }
            t *= 0.5;
        };
        if t < 1e-20 {
            break;
        }
        let (ngw, ngb) = logistic_gradient(x, y, &nw, nb, alpha);
        // Barzilai-Borwein: s·s / s·Δg
        let s: Vec<f64> = nw.iter().zip(&w).map(|(a, c)| a - c).collect();
        let sb = nb - b;
        let dg: Vec<f64> = ngw.iter().zip(&gw).map(|(a, c)| a - c).collect();
        let dgb = ngb - gb;
        let sy = dot(&s, &dg) + sb * dgb;
        let ss = dot(&s, &s) + sb * sb;
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            t * 2.0
        };
        w = nw;
        b = nb;
        f = nf;
        gw = ngw;
        gb = ngb;
    }
    (w, b)
}

pub(super) fn fit_logistic(frame: &Frame, target: &Target, alpha: f64, max_iter: usize, tol: f64) -> Result<State> {
    let Target::Classes { codes, levels } = target else {
        return Err(Error::fit("logistic", "logistic regression needs a class target"));
    };
    let mut present: Vec<usize> = codes.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::fit("logistic", "training target holds a single class"));
    }
    let x = &frame.x;
    let classes: Vec<usize> = if levels.len() == 2 {
        vec![1]
    } else {
        (0..levels.len()).collect()
    };
    let mut coefs = Vec::new();
    let mut intercepts = Vec::new();
    for c in classes {
        let y: Vec<f64> = codes.iter().map(|&k| (k == c) as u8 as f64).collect();
        let (w, b) = descend(x, &y, alpha, max_iter, tol);
        coefs.push(w);
        intercepts.push(b);
    }
    Ok(State::Linear(LinearModel {
        kind: if levels.len() == 2 {
            LinearKind::Binary
        } else {
            LinearKind::OneVsRest
        },
        coefs,
        intercepts,
    }))
}
