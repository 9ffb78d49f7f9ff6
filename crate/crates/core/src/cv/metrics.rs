use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Predictions, ProblemType, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    R2,
    Mae,
    Rmse,
    Accuracy,
    BalancedAccuracy,
    RocAuc,
    MacroF1,
    LogLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::HigherBetter => a > b,
            Direction::LowerBetter => a < b,
        }
    }

    pub fn worst(self) -> f64 {
        match self {
            Direction::HigherBetter => f64::NEG_INFINITY,
            Direction::LowerBetter => f64::INFINITY,
        }
    }
}

pub const LOG_LOSS_EPS: f64 = 1e-15;

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::R2,
        Metric::Mae,
        Metric::Rmse,
        Metric::Accuracy,
        Metric::BalancedAccuracy,
        Metric::RocAuc,
        Metric::MacroF1,
        Metric::LogLoss,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Metric::R2 => "r2",
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
            Metric::Accuracy => "accuracy",
            Metric::BalancedAccuracy => "balanced_accuracy",
            Metric::RocAuc => "roc_auc",
            Metric::MacroF1 => "macro_f1",
            Metric::LogLoss => "log_loss",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Metric::Mae | Metric::Rmse | Metric::LogLoss => Direction::LowerBetter,
            _ => Direction::HigherBetter,
        }
    }

    pub fn admits(self, problem: ProblemType) -> bool {
        match self {
            Metric::R2 | Metric::Mae | Metric::Rmse => problem == ProblemType::Regression,
            Metric::RocAuc => problem == ProblemType::Binary,
            _ => problem.is_classification(),
        }
    }

    /// Score predictions against the truth.
    pub fn score(self, truth: &Target, pred: &Predictions) -> Result<f64> {
        if truth.len() != pred.len() {
            return Err(Error::invalid(format!(
                "{}: {} labels but {} predictions",
                self.id(),
                truth.len(),
                pred.len()
            )));
        }
        let mismatch = || Error::invalid(format!("{} does not apply to these predictions", self.id()));
        match (self, truth, pred) {
            (Metric::R2, Target::Continuous(y), Predictions::Values(p)) => r2(y, p),
            (Metric::Mae, Target::Continuous(y), Predictions::Values(p)) => Ok(mae(y, p)),
            (Metric::Rmse, Target::Continuous(y), Predictions::Values(p)) => Ok(rmse(y, p)),
            (Metric::Accuracy, Target::Classes { codes, .. }, Predictions::Classes { labels, .. }) => {
                Ok(accuracy(codes, labels))
            }
            (Metric::BalancedAccuracy, Target::Classes { codes, .. }, Predictions::Classes { labels, .. }) => {
                Ok(balanced_accuracy(codes, labels))
            }
            (Metric::MacroF1, Target::Classes { codes, .. }, Predictions::Classes { labels, .. }) => {
                Ok(macro_f1(codes, labels))
            }
            (Metric::RocAuc, Target::Classes { codes, levels }, Predictions::Classes { proba, .. })
                if levels.len() == 2 =>
            {
                let positive: Vec<bool> = codes.iter().map(|&c| c == 1).collect();
                let scores: Vec<f64> = proba.iter().map(|p| p[1]).collect();
                roc_auc(&positive, &scores)
            }
            (Metric::LogLoss, Target::Classes { codes, .. }, Predictions::Classes { proba, .. }) => {
                Ok(log_loss(codes, proba))
            }
            _ => Err(mismatch()),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric `{s}`")))
    }
}

fn undefined(metric: &str, reason: &str) -> Error {
    Error::UndefinedMetric {
        metric: metric.to_string(),
        reason: reason.to_string(),
    }
}

/// `1 - SSE/SST`.
pub fn r2(y: &[f64], p: &[f64]) -> Result<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if sst == 0.0 {
        return Err(undefined("r2", "target has zero variance"));
    }
    let sse: f64 = y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - sse / sst)
}

pub fn mae(y: &[f64], p: &[f64]) -> f64 {
    y.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64
}

pub fn rmse(y: &[f64], p: &[f64]) -> f64 {
    (y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64).sqrt()
}

pub fn accuracy(y: &[usize], p: &[usize]) -> f64 {
    y.iter().zip(p).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

fn n_classes(y: &[usize], p: &[usize]) -> usize {
    y.iter().chain(p).max().map_or(0, |m| m + 1)
}

/// Mean recall over the classes present in `y`.
pub fn balanced_accuracy(y: &[usize], p: &[usize]) -> f64 {
    let k = n_classes(y, p);
    let mut support = vec![0usize; k];
    let mut hits = vec![0usize; k];
    for (&a, &b) in y.iter().zip(p) {
        support[a] += 1;
        hits[a] += usize::from(a == b);
    }
    let recalls: Vec<f64> = (0..k)
        .filter(|&c| support[c] > 0)
        .map(|c| hits[c] as f64 / support[c] as f64)
        .collect();
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

/// Unweighted mean of per-class F1 over classes appearing in `y` or `p`.
pub fn macro_f1(y: &[usize], p: &[usize]) -> f64 {
    let k = n_classes(y, p);
    let (mut tp, mut fp, mut fneg) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (&a, &b) in y.iter().zip(p) {
        if a == b {
            tp[a] += 1;
        } else {
            fp[b] += 1;
            fneg[a] += 1;
        }
    }
    let f1: Vec<f64> = (0..k)
        .filter(|&c| tp[c] + fp[c] + fneg[c] > 0)
        .map(|c| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fneg[c]) as f64)
        .collect();
    f1.iter().sum::<f64>() / f1.len() as f64
}

/// Mann-Whitney form: the fraction of (positive, negative) pairs ordered
/// correctly, ties counted as one half.
pub fn roc_auc(positive: &[bool], scores: &[f64]) -> Result<f64> {
    let n_pos = positive.iter().filter(|&&b| b).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(undefined("roc_auc", "labels contain a single class"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the midrank keeps every quantity an exact integer
    let mut rank_sum2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_midrank = (i + 1 + j + 1) as u64;
        rank_sum2 += twice_midrank * order[i..=j].iter().filter(|&&r| positive[r]).count() as u64;
        i = j + 1;
    }
    let twice_u = rank_sum2 - (n_pos * (n_pos + 1)) as u64;
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Mean negative log-likelihood of the true class, probabilities clipped to
/// `[eps, 1 - eps]`.
pub fn log_loss(y: &[usize], proba: &[Vec<f64>]) -> f64 {
    y.iter()
        .zip(proba)
        .map(|(&c, p)| -p[c].clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS).ln())
        .sum::<f64>()
        / y.len() as f64
}
