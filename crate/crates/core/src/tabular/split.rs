use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, RowId};
use crate::error::{Error, Result};
use crate::seeding;

/// A global train/test partition of dataset rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<RowId>,
    pub test: Vec<RowId>,
    pub seed: u64,
    pub strategy: String,
}

/// Partition all rows into train and test.
///
/// Without options `|test| = round(test_fraction * n_rows)`. With
/// `stratify_by`, each level's test count is its proportional share rounded
/// by largest remainder so the total still hits the target. With `group_by`
/// whole groups move to test, greedily, while doing so brings the test size
/// closer to the target; the result is exact whenever group sizes allow.
pub fn global_split(
    ds: &Dataset,
    test_fraction: f64,
    stratify_by: Option<&str>,
    group_by: Option<&str>,
    seed: u64,
) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if stratify_by.is_some() && group_by.is_some() {
        return Err(Error::invalid("at most one of stratify_by / group_by may be set"));
    }
    let n = ds.n_rows();
    let target = (test_fraction * n as f64).round() as usize;
    if target == 0 || target >= n {
        return Err(Error::invalid(format!(
            "test_fraction {test_fraction} of {n} rows leaves an empty train or test side"
        )));
    }
    let mut rng = seeding::rng(seed);
    let all: Vec<usize> = (0..n).collect();

    let (test_pos, strategy) = if let Some(col) = stratify_by {
        let strata = ds.level_positions(col, &all)?;
        for (code, rows) in &strata {
            if rows.len() < 2 {
                let level = &ds.column(col)?.levels[*code as usize];
                return Err(Error::invalid(format!(
                    "stratum `{level}` of `{col}` has fewer than 2 rows"
                )));
            }
        }
        let counts = proportional_allocation(&strata.values().map(Vec::len).collect::<Vec<_>>(), target);
        let mut test = Vec::with_capacity(target);
        for (rows, count) in strata.into_values().zip(counts) {
            let mut rows = rows;
            rows.shuffle(&mut rng);
            test.extend_from_slice(&rows[..count]);
        }
        (test, format!("stratified by `{col}`"))
    } else if let Some(col) = group_by {
        let groups = group_positions(ds, col, &all)?;
        let mut order: Vec<Vec<usize>> = groups.into_values().collect();
        order.shuffle(&mut rng);
        let mut test = Vec::new();
        for rows in order {
            let now = test.len().abs_diff(target);
            let next = (test.len() + rows.len()).abs_diff(target);
            if next < now {
                test.extend(rows);
            }
            if test.len() == target {
                break;
            }
        }
        if test.is_empty() || test.len() >= n {
            return Err(Error::invalid(format!(
                "cannot split groups of `{col}` into non-empty train and test sides"
            )));
        }
        (test, format!("grouped by `{col}`"))
    } else {
        let mut rows = all.clone();
        rows.shuffle(&mut rng);
        rows.truncate(target);
        (rows, "random".to_string())
    };

    let mut is_test = vec![false; n];
    for p in &test_pos {
        is_test[*p] = true;
    }
    let ids = ds.row_ids();
    let mut train: Vec<RowId> = (0..n).filter(|p| !is_test[*p]).map(|p| ids[p]).collect();
    let mut test: Vec<RowId> = test_pos.iter().map(|&p| ids[p]).collect();
    train.sort();
    test.sort();
    Ok(SplitIndices {
        train,
        test,
        seed,
        strategy,
    })
}

/// Largest-remainder apportionment of `total` across strata proportional to
/// their sizes; ties go to the earlier stratum.
pub(crate) fn proportional_allocation(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let quotas: Vec<f64> = sizes.iter().map(|&s| total as f64 * s as f64 / n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Positions per group label (any dtype; missing labels are an error),
/// ordered by label.
pub(crate) fn group_positions(ds: &Dataset, column: &str, positions: &[usize]) -> Result<BTreeMap<String, Vec<usize>>> {
    let col = ds.column(column)?;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for &p in positions {
        let label = col
            .label(p)
            .ok_or_else(|| Error::invalid(format!("group column `{column}` is missing at row {}", ds.row_ids()[p])))?;
        groups.entry(label).or_default().push(p);
    }
    Ok(groups)
}
