use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Matrix;
use crate::linalg;
use crate::seeding;

/// Largest feature count exact enumeration accepts.
pub const EXACT_MAX_FEATURES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ShapleyMode {
    Exact,
    /// Kernel weighted least squares over `n_coalitions` coalitions. When
    /// that covers every proper non-empty coalition they are all used once.
    Sampled {
        n_coalitions: usize,
    },
}

/// Shapley values of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<u32>,
    pub phi: Vec<f64>,
    /// `v(∅)`: the mean model output over the background.
    pub base: f64,
    /// `f(x)`, which equals `base + Σ phi`.
    pub prediction: f64,
}

/// Coalition value: mean model output over background rows, with the
/// coalition's features taken from `x`.
struct ValueFn<'a, F> {
    model: &'a F,
    background: &'a Matrix,
    x: &'a [f64],
}

impl<F: Fn(&Matrix) -> Result<Vec<f64>> + Sync> ValueFn<'_, F> {
    fn value(&self, mask: &[bool]) -> Result<f64> {
        let mut hybrid = self.background.clone();
        for i in 0..hybrid.n_rows {
            for (j, &on) in mask.iter().enumerate() {
                if on {
                    hybrid.set(i, j, self.x[j]);
                }
            }
        }
        let out = (self.model)(&hybrid)?;
        Ok(out.iter().sum::<f64>() / out.len() as f64)
    }
}

fn mask_of(bits: u64, m: usize) -> Vec<bool> {
    (0..m).map(|j| bits >> j & 1 == 1).collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Kernel weight of a coalition of size `s` out of `m`.
fn kernel_weight(m: usize, s: usize) -> f64 {
    (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64)
}

/// Shapley values of `model` at `x` against `background`.
///
/// `model` maps a batch of rows to one real output per row. Exact mode
/// enumerates all `2^M` coalitions; sampled mode fits the kernel weighted
/// least-squares problem with `Σ φ = f(x) - v(∅)` imposed exactly.
pub fn shapley_values<F>(model: &F, background: &Matrix, x: &[f64], mode: ShapleyMode, seed: u64) -> Result<Attribution>
where
    F: Fn(&Matrix) -> Result<Vec<f64>> + Sync,
{
    let m = x.len();
    if background.n_rows == 0 {
        return Err(Error::invalid("shapley background is empty"));
    }
    if background.n_cols != m {
        return Err(Error::invalid(format!(
            "background has {} features, instance has {m}",
            background.n_cols
        )));
    }
    let v = ValueFn { model, background, x };
    let base = v.value(&vec![false; m])?;
    let prediction = v.value(&vec![true; m])?;
    if m == 0 {
        return Ok(Attribution {
            row: None,
            phi: Vec::new(),
            base,
            prediction,
        });
    }
    let phi = match mode {
        ShapleyMode::Exact => {
            if m > EXACT_MAX_FEATURES {
                return Err(Error::invalid(format!(
                    "exact Shapley supports at most {EXACT_MAX_FEATURES} features, got {m}; use sampled mode"
                )));
            }
            let values = (0..1u64 << m)
                .into_par_iter()
                .map(|bits| v.value(&mask_of(bits, m)))
                .collect::<Result<Vec<f64>>>()?;
            let weight: Vec<f64> = (0..m).map(|s| 1.0 / (m as f64 * binomial(m - 1, s))).collect();
            (0..m)
                .map(|j| {
                    let mut phi = 0.0;
                    for bits in 0..1u64 << m {
                        if bits >> j & 1 == 0 {
                            let s = bits.count_ones() as usize;
                            phi += weight[s] * (values[(bits | 1 << j) as usize] - values[bits as usize]);
                        }
                    }
                    phi
                })
                .collect()
        }
        ShapleyMode::Sampled { n_coalitions } => {
            if m == 1 {
                vec![prediction - base]
            } else {
                let coalitions = coalitions(m, n_coalitions, seed)?;
                kernel_solve(&v, m, &coalitions, base, prediction)?
            }
        }
    };
    Ok(Attribution {
        row: None,
        phi,
        base,
        prediction,
    })
}

/// Proper non-empty coalitions with their regression weights. If the budget
/// covers all `2^M - 2` of them, each appears once with its kernel weight;
/// otherwise coalitions are drawn from the kernel distribution (size by its
/// total kernel mass, members uniformly) and weighted by draw count.
fn coalitions(m: usize, n: usize, seed: u64) -> Result<Vec<(Vec<bool>, f64)>> {
    if m > 63 {
        return Err(Error::invalid("sampled Shapley supports at most 63 features"));
    }
    let proper = (1u64 << m) - 2;
    if n as u64 >= proper {
        return Ok((1..(1u64 << m) - 1)
            .map(|bits| {
                let s = bits.count_ones() as usize;
                (mask_of(bits, m), kernel_weight(m, s))
            })
            .collect());
    }
    if n == 0 {
        return Err(Error::invalid("n_coalitions must be >= 1"));
    }
    // total kernel mass of size s is (m - 1) / (s (m - s))
    let size_mass: Vec<f64> = (1..m).map(|s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
    let total: f64 = size_mass.iter().sum();
    let mut rng = seeding::rng(seed);
    let mut counts: BTreeMap<Vec<bool>, f64> = BTreeMap::new();
    for _ in 0..n {
        let mut u = rng.gen::<f64>() * total;
        let mut s = m - 1;
        for (i, w) in size_mass.iter().enumerate() {
            if u < *w {
                s = i + 1;
                break;
            }
            u -= w;
        }
        let mut mask = vec![false; m];
        for j in sample_indices(&mut rng, m, s) {
            mask[j] = true;
        }
        *counts.entry(mask).or_insert(0.0) += 1.0;
    }
    Ok(counts.into_iter().collect())
}

/// Solve the constrained weighted least-squares problem by eliminating the
/// last feature: `φ_M = Δ - Σ_{j<M} φ_j`.
fn kernel_solve<F>(
    v: &ValueFn<'_, F>,
    m: usize,
    coalitions: &[(Vec<bool>, f64)],
    base: f64,
    prediction: f64,
) -> Result<Vec<f64>>
where
    F: Fn(&Matrix) -> Result<Vec<f64>> + Sync,
{
    let delta = prediction - base;
    let values = coalitions
        .par_iter()
        .map(|(mask, _)| v.value(mask))
        .collect::<Result<Vec<f64>>>()?;
    let p = m - 1;
    let mut ata = vec![0.0; p * p];
    let mut atb = vec![0.0; p];
    for ((mask, w), value) in coalitions.iter().zip(&values) {
        let last = if mask[m - 1] { 1.0 } else { 0.0 };
        let row: Vec<f64> = (0..p).map(|j| f64::from(u8::from(mask[j])) - last).collect();
        let target = value - base - last * delta;
        for a in 0..p {
            atb[a] += w * row[a] * target;
            for b in 0..p {
                ata[a * p + b] += w * row[a] * row[b];
            }
        }
    }
    let head = linalg::solve_symmetric(&ata, &atb, p)
        .ok_or_else(|| Error::invalid("too few distinct coalitions to identify all Shapley values"))?;
    let mut phi = head.clone();
    phi.push(delta - head.iter().sum::<f64>());
    Ok(phi)
}

/// Attributions for several instances against one background.
pub fn shapley_explain<F>(
    model: &F,
    background: &Matrix,
    instances: &Matrix,
    mode: ShapleyMode,
    seed: u64,
) -> Result<Vec<Attribution>>
where
    F: Fn(&Matrix) -> Result<Vec<f64>> + Sync,
{
    (0..instances.n_rows)
        .map(|i| shapley_values(model, background, instances.row(i), mode, seed_of!(seed, "explain", i)))
        .collect()
}
