use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dataset::{Column, ColumnValues, DType, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierMethod {
    /// Flag `|x - mean| > k * std`.
    Std { k: f64 },
    /// Flag cells strictly outside `[q(lo), q(hi)]`.
    Quantile { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierMask {
    pub column: String,
    pub flags: Vec<bool>,
}

impl OutlierMask {
    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn is_subset_of(&self, other: &OutlierMask) -> bool {
        self.flags.iter().zip(&other.flags).all(|(a, b)| !*a || *b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagDisposition {
    DropRows,
    ToMissing,
}

/// Linear interpolation between the closest order statistics of a sorted,
/// non-empty slice: `h = (n - 1) p`, `q = x[⌊h⌋] + (h - ⌊h⌋)(x[⌊h⌋+1] - x[⌊h⌋])`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn observed(col: &Column) -> Vec<f64> {
    (0..col.len()).filter_map(|r| col.numeric(r)).collect()
}

/// Population mean and std (denominator n).
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn detect_outliers(ds: &Dataset, column: &str, method: OutlierMethod) -> Result<OutlierMask> {
    let col = ds.column(column)?;
    if col.dtype != DType::Continuous {
        return Err(Error::Type(format!(
            "outlier detection needs a continuous column; `{column}` is {}",
            col.dtype.as_str()
        )));
    }
    let values = observed(col);
    if values.is_empty() {
        return Err(Error::invalid(format!("column `{column}` has no observed values")));
    }
    let flags = match method {
        OutlierMethod::Std { k } => {
            if !(k > 0.0) {
                return Err(Error::invalid("std multiplier k must be > 0"));
            }
            let (mean, std) = mean_std(&values);
            (0..col.len())
                .map(|r| col.numeric(r).is_some_and(|x| (x - mean).abs() > k * std))
                .collect()
        }
        OutlierMethod::Quantile { lo, hi } => {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(Error::invalid("quantile bounds must satisfy 0 <= lo < hi <= 1"));
            }
            let mut sorted = values;
            sorted.sort_by(f64::total_cmp);
            let (qlo, qhi) = (quantile_sorted(&sorted, lo), quantile_sorted(&sorted, hi));
            (0..col.len())
                .map(|r| col.numeric(r).is_some_and(|x| x < qlo || x > qhi))
                .collect()
        }
    };
    Ok(OutlierMask {
        column: column.to_string(),
        flags,
    })
}

pub fn drop_flagged(ds: &Dataset, mask: &OutlierMask, mode: FlagDisposition) -> Result<Dataset> {
    let idx = ds.column_index(&mask.column)?;
    if mask.flags.len() != ds.n_rows() {
        return Err(Error::invalid(format!(
            "mask has {} rows, dataset has {}",
            mask.flags.len(),
            ds.n_rows()
        )));
    }
    if mask.count() == 0 {
        return Ok(ds.clone());
    }
    Ok(match mode {
        FlagDisposition::DropRows => {
            let keep: Vec<usize> = (0..ds.n_rows()).filter(|&r| !mask.flags[r]).collect();
            ds.take_rows(&keep)
        }
        FlagDisposition::ToMissing => {
            let mut col = ds.columns()[idx].clone();
            for (m, f) in col.missing.iter_mut().zip(&mask.flags) {
                *m |= *f;
            }
            ds.replace_column(idx, col)
        }
    })
}

/// Report pairs `(earlier, later)` of columns that carry the same
/// information: identical missing masks and, at every observed position,
/// cells within `tol` (continuous) or equal labels (discrete).
pub fn find_duplicate_columns(ds: &Dataset, tol: f64) -> Result<Vec<(String, String)>> {
    if !(tol >= 0.0) {
        return Err(Error::invalid("tolerance must be >= 0"));
    }
    let cols = ds.columns();
    let mut pairs = Vec::new();
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            let (a, b) = (&cols[i], &cols[j]);
            if a.missing != b.missing || a.dtype.is_discrete() != b.dtype.is_discrete() {
                continue;
            }
            let same = match (&a.values, &b.values) {
                (ColumnValues::Numeric(x), ColumnValues::Numeric(y)) => x
                    .iter()
                    .zip(y)
                    .zip(&a.missing)
                    .all(|((p, q), m)| *m || (p - q).abs() <= tol),
                _ => (0..a.len()).all(|r| a.label(r) == b.label(r)),
            };
            if same {
                pairs.push((a.name.clone(), b.name.clone()));
            }
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub name: String,
    pub dtype: DType,
    pub n_rows: usize,
    /// Observed (non-missing) cell count.
    pub n: usize,
    pub n_missing: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub q25: Option<f64>,
    pub q50: Option<f64>,
    pub q75: Option<f64>,
    pub n_unique: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_counts: Option<BTreeMap<String, usize>>,
}

pub fn summarize(ds: &Dataset, column: &str) -> Result<SummaryStats> {
    let col = ds.column(column)?;
    let n_missing = col.n_missing();
    let mut stats = SummaryStats {
        name: col.name.clone(),
        dtype: col.dtype,
        n_rows: col.len(),
        n: col.len() - n_missing,
        n_missing,
        mean: None,
        std: None,
        min: None,
        max: None,
        q25: None,
        q50: None,
        q75: None,
        n_unique: 0,
        level_counts: None,
    };
    match col.dtype {
        DType::Continuous => {
            let mut values = observed(col);
            values.sort_by(f64::total_cmp);
            let mut uniq = values.clone();
            uniq.dedup();
            stats.n_unique = uniq.len();
            if !values.is_empty() {
                let (mean, std) = mean_std(&values);
                stats.mean = Some(mean);
                stats.std = Some(std);
                stats.min = values.first().copied();
                stats.max = values.last().copied();
                stats.q25 = Some(quantile_sorted(&values, 0.25));
                stats.q50 = Some(quantile_sorted(&values, 0.5));
                stats.q75 = Some(quantile_sorted(&values, 0.75));
            }
        }
        _ => {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for r in 0..col.len() {
                if let Some(l) = col.label(r) {
                    *counts.entry(l).or_default() += 1;
                }
            }
            stats.n_unique = counts.len();
            stats.level_counts = Some(counts);
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds_of(values: &[f64]) -> Dataset {
        Dataset::new(vec![Column::continuous(
            "x",
            values.to_vec(),
            vec![false; values.len()],
        )])
        .unwrap()
    }

    #[test]
    fn std_outlier_example() {
        let v = [0.0, 0.1, -0.2, 0.05, 50.0];
        // hand oracle: mean = 49.95 / 5, population std
        let mean = 49.95 / 5.0;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0;
        let expected: Vec<bool> = v.iter().map(|x| (x - mean).abs() > 1.5 * var.sqrt()).collect();
        assert_eq!(expected, vec![false, false, false, false, true]);
        let mask = detect_outliers(&ds_of(&v), "x", OutlierMethod::Std { k: 1.5 }).unwrap();
        assert_eq!(mask.flags, expected);
    }

    #[test]
    fn constant_and_full_quantile_flag_nothing() {
        let ds = ds_of(&[3.0; 6]);
        for k in [0.1, 1.0, 5.0] {
            assert_eq!(detect_outliers(&ds, "x", OutlierMethod::Std { k }).unwrap().count(), 0);
        }
        let ds = ds_of(&[1.0, 5.0, -3.0, 8.0]);
        let m = detect_outliers(&ds, "x", OutlierMethod::Quantile { lo: 0.0, hi: 1.0 }).unwrap();
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn outlier_errors() {
        let ds = Dataset::new(vec![
            Column::discrete("c", DType::Categorical, &[Some("a"), Some("b"), Some("c")]),
            Column::continuous("m", vec![0.0; 3], vec![true; 3]),
        ])
        .unwrap();
        assert!(matches!(
            detect_outliers(&ds, "c", OutlierMethod::Std { k: 1.0 }),
            Err(Error::Type(_))
        ));
        assert!(detect_outliers(&ds, "m", OutlierMethod::Std { k: 1.0 }).is_err());
        assert!(detect_outliers(&ds_of(&[1.0]), "x", OutlierMethod::Std { k: 0.0 }).is_err());
        assert!(detect_outliers(&ds_of(&[1.0]), "x", OutlierMethod::Quantile { lo: 0.5, hi: 0.5 }).is_err());
    }

    #[test]
    fn missing_never_flagged() {
        let ds = Dataset::new(vec![Column::continuous(
            "x",
            vec![0.0, 0.0, 0.0, 1000.0],
            vec![false, false, false, true],
        )])
        .unwrap();
        let m = detect_outliers(&ds, "x", OutlierMethod::Std { k: 0.5 }).unwrap();
        assert!(!m.flags[3]);
    }

    #[test]
    fn drop_and_to_missing() {
        let ds = ds_of(&[0.0, 0.1, -0.2, 0.05, 50.0]);
        let mask = detect_outliers(&ds, "x", OutlierMethod::Std { k: 1.5 }).unwrap();
        let dropped = drop_flagged(&ds, &mask, FlagDisposition::DropRows).unwrap();
        assert_eq!(dropped.n_rows(), 4);
        assert_eq!(dropped.row_ids().last().unwrap().0, 3);

        let before = summarize(&ds, "x").unwrap().n_missing;
        let nulled = drop_flagged(&ds, &mask, FlagDisposition::ToMissing).unwrap();
        assert_eq!(summarize(&nulled, "x").unwrap().n_missing, before + 1);

        let empty = OutlierMask {
            column: "x".into(),
            flags: vec![false; 5],
        };
        assert_eq!(drop_flagged(&ds, &empty, FlagDisposition::DropRows).unwrap(), ds);
        let bad = OutlierMask {
            column: "x".into(),
            flags: vec![false; 4],
        };
        assert!(drop_flagged(&ds, &bad, FlagDisposition::DropRows).is_err());
    }

    #[test]
    fn duplicate_detection() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let tol_vec = [1.0, -1.0, 1.0, 0.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        let half: Vec<f64> = x.iter().zip(&tol_vec).map(|(v, t)| v + 0.5 * t).collect();
        let ds = Dataset::new(vec![
            Column::continuous("x", x.clone(), vec![false; 4]),
            Column::continuous("copy", x.clone(), vec![false; 4]),
            Column::continuous("plus1", shifted, vec![false; 4]),
            Column::continuous("half", half.clone(), vec![false; 4]),
        ])
        .unwrap();
        let exact = find_duplicate_columns(&ds, 0.0).unwrap();
        assert_eq!(exact, vec![("x".to_string(), "copy".to_string())]);

        // brute-force oracle for the tolerance case
        let within = x.iter().zip(&half).all(|(a, b)| (a - b).abs() <= 1.0);
        assert!(within);
        let loose = find_duplicate_columns(&ds, 1.0).unwrap();
        assert!(loose.contains(&("x".to_string(), "half".to_string())));
        assert!(loose.contains(&("x".to_string(), "plus1".to_string())));
    }

    #[test]
    fn duplicates_need_matching_masks() {
        let ds = Dataset::new(vec![
            Column::continuous("a", vec![1.0, 2.0], vec![false, false]),
            Column::continuous("b", vec![1.0, 2.0], vec![false, true]),
            Column::discrete("c", DType::Binary, &[Some("u"), Some("v")]),
            Column::discrete("d", DType::Binary, &[Some("u"), Some("v")]),
        ])
        .unwrap();
        assert_eq!(
            find_duplicate_columns(&ds, 0.0).unwrap(),
            vec![("c".to_string(), "d".to_string())]
        );
    }

    #[test]
    fn summary_basic() {
        let s = summarize(&ds_of(&[1.0, 2.0, 3.0, 4.0]), "x").unwrap();
        assert_eq!(s.mean, Some(2.5));
        assert_eq!(s.q50, Some(2.5));
        assert_eq!(s.min, Some(1.0));
        assert_eq!(s.max, Some(4.0));
        let c = summarize(&ds_of(&[7.0; 5]), "x").unwrap();
        assert_eq!(c.std, Some(0.0));
        assert_eq!(c.n_unique, 1);
    }

    #[test]
    fn summary_quantile_matches_order_statistics_oracle() {
        let s = summarize(&ds_of(&[100.0, 3.0, 1.0, 4.0, 2.0]), "x").unwrap();
        // sorted [1,2,3,4,100]; rank (5-1)*0.75 = 3 exactly -> 4th order statistic
        assert_eq!(s.q75, Some(4.0));
        let s = summarize(&ds_of(&[1.0, 2.0, 3.0, 4.0, 100.0, 200.0]), "x").unwrap();
        // rank 5*0.75 = 3.75 -> 4 + 0.75*(100-4)
        assert_eq!(s.q75, Some(4.0 + 0.75 * 96.0));
    }

    #[test]
    fn summary_all_missing_has_absent_moments() {
        let ds = Dataset::new(vec![Column::continuous("x", vec![0.0; 3], vec![true; 3])]).unwrap();
        let s = summarize(&ds, "x").unwrap();
        assert_eq!(s.n, 0);
        assert_eq!(s.n_missing, 3);
        assert!(s.mean.is_none() && s.std.is_none() && s.q50.is_none());
    }

    #[test]
    fn summary_categorical_counts() {
        let ds = Dataset::new(vec![Column::discrete(
            "c",
            DType::Categorical,
            &[Some("b"), Some("a"), None, Some("b")],
        )])
        .unwrap();
        let s = summarize(&ds, "c").unwrap();
        assert_eq!(s.n_unique, 2);
        assert_eq!(s.level_counts.unwrap()["b"], 2);
        assert_eq!(s.n + s.n_missing, 4);
    }
}
