use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::tabular::{group_positions, Dataset, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvKind {
    #[serde(alias = "k-fold")]
    Kfold,
    #[serde(alias = "stratified-kfold")]
    StratifiedKfold,
    #[serde(alias = "group-kfold")]
    GroupKfold,
    #[serde(alias = "leave-one-group-out")]
    LeaveOneGroupOut,
}

fn default_k() -> usize {
    5
}

/// How to cut a row set into validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CVScheme {
    pub kind: CvKind,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_column: Option<String>,
    /// Defaults to the target column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratify_column: Option<String>,
    /// Overrides the seed derived from the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CVScheme {
    pub fn kfold(k: usize) -> Self {
        CVScheme {
            kind: CvKind::Kfold,
            k,
            group_column: None,
            stratify_column: None,
            seed: None,
        }
    }

    pub fn stratified(k: usize, column: Option<&str>) -> Self {
        CVScheme {
            kind: CvKind::StratifiedKfold,
            stratify_column: column.map(str::to_string),
            ..CVScheme::kfold(k)
        }
    }

    pub fn group_kfold(k: usize, column: &str) -> Self {
        CVScheme {
            kind: CvKind::GroupKfold,
            group_column: Some(column.to_string()),
            ..CVScheme::kfold(k)
        }
    }

    pub fn leave_one_group_out(column: &str) -> Self {
        CVScheme {
            kind: CvKind::LeaveOneGroupOut,
            group_column: Some(column.to_string()),
            ..CVScheme::kfold(2)
        }
    }

    /// Structural problems independent of any dataset, as (field, message).
    pub fn check(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.kind != CvKind::LeaveOneGroupOut && self.k < 2 {
            out.push(("k", format!("must be >= 2, got {}", self.k)));
        }
        let grouped = matches!(self.kind, CvKind::GroupKfold | CvKind::LeaveOneGroupOut);
        if grouped && self.group_column.is_none() {
            out.push(("group_column", "required for group schemes".to_string()));
        }
        out
    }
}

/// One train/validation cut, as dataset positions in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Cut `rows` (dataset positions) into folds.
///
/// - kfold: shuffle, then contiguous chunks; the first `n % k` folds get one
///   extra row.
/// - stratified: shuffle within each level, concatenate levels in code order
///   and deal rows round-robin, so every level's per-fold count is within one
///   of proportional.
/// - group kfold: groups in decreasing size (ties in shuffled order), each
///   to the currently smallest fold (ties to the lowest index).
/// - leave-one-group-out: one fold per group, in label order.
pub fn make_folds(ds: &Dataset, rows: &[usize], scheme: &CVScheme, seed: u64) -> Result<Vec<Fold>> {
    if let Some((field, msg)) = scheme.check().into_iter().next() {
        return Err(Error::invalid(format!("cv scheme {field}: {msg}")));
    }
    let mut rng = seeding::rng(seed);
    let k = scheme.k;
    let assignment: Vec<Vec<usize>> = match scheme.kind {
        CvKind::Kfold => {
            if rows.len() < k {
                return Err(Error::invalid(format!("{} rows cannot fill {k} folds", rows.len())));
            }
            let mut shuffled = rows.to_vec();
            shuffled.shuffle(&mut rng);
            let (base, extra) = (rows.len() / k, rows.len() % k);
            let mut out = Vec::with_capacity(k);
            let mut at = 0;
            for f in 0..k {
                let len = base + usize::from(f < extra);
                out.push(shuffled[at..at + len].to_vec());
                at += len;
            }
            out
        }
        CvKind::StratifiedKfold => {
            let column = match &scheme.stratify_column {
                Some(c) => c.clone(),
                None => ds.target()?.name.clone(),
            };
            let strata = ds.level_positions(&column, rows)?;
            let mut dealt = Vec::with_capacity(rows.len());
            for (code, mut members) in strata {
                if members.len() < k {
                    let label = ds.column(&column)?.levels[code as usize].clone();
                    return Err(Error::invalid(format!(
                        "stratum `{label}` of `{column}` has {} rows, fewer than k = {k}",
                        members.len()
                    )));
                }
                members.shuffle(&mut rng);
                dealt.extend(members);
            }
            let mut out = vec![Vec::new(); k];
            for (i, p) in dealt.into_iter().enumerate() {
                out[i % k].push(p);
            }
            out
        }
        CvKind::GroupKfold | CvKind::LeaveOneGroupOut => {
            let column = scheme.group_column.as_deref().unwrap();
            if ds.column(column)?.role == Role::InputFeature {
                return Err(Error::invalid(format!(
                    "group column `{column}` must be a non-input column"
                )));
            }
            let groups: Vec<Vec<usize>> = group_positions(ds, column, rows)?.into_values().collect();
            if scheme.kind == CvKind::LeaveOneGroupOut {
                if groups.len() < 2 {
                    return Err(Error::invalid(format!("`{column}` has fewer than 2 groups")));
                }
                groups
            } else {
                if groups.len() < k {
                    return Err(Error::invalid(format!(
                        "`{column}` has {} groups, fewer than k = {k}",
                        groups.len()
                    )));
                }
                let mut order: Vec<usize> = (0..groups.len()).collect();
                order.shuffle(&mut rng);
                order.sort_by(|a, b| groups[*b].len().cmp(&groups[*a].len()));
                let mut out: Vec<Vec<usize>> = vec![Vec::new(); k];
                for g in order {
                    let target = (0..k).min_by_key(|&f| (out[f].len(), f)).unwrap();
                    out[target].extend_from_slice(&groups[g]);
                }
                out
            }
        }
    };
    let mut in_val = vec![usize::MAX; ds.n_rows()];
    for (f, val) in assignment.iter().enumerate() {
        for &p in val {
            in_val[p] = f;
        }
    }
    let mut sorted_rows = rows.to_vec();
    sorted_rows.sort_unstable();
    Ok(assignment
        .into_iter()
        .enumerate()
        .map(|(f, mut val)| {
            val.sort_unstable();
            let train = sorted_rows.iter().copied().filter(|&p| in_val[p] != f).collect();
            Fold { train, val }
        })
        .collect())
}
