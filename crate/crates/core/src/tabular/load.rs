use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{Column, DType, Dataset};
use crate::error::{Error, Result};

pub fn default_missing_tokens() -> BTreeSet<String> {
    ["", "NA", "NaN", "nan", "null"].into_iter().map(String::from).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    #[serde(default)]
    pub dtype_overrides: BTreeMap<String, DType>,
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: BTreeSet<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            dtype_overrides: BTreeMap::new(),
            missing_tokens: default_missing_tokens(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&bytes, options)
}

/// Parse CSV bytes (header row mandatory) into a dataset with every column
/// in the input-feature role.
///
/// Inference: a column whose non-missing cells all parse as finite numbers is
/// continuous; any column with exactly two distinct non-missing values is
/// binary; remaining text columns are categorical.
pub fn parse_csv(bytes: &[u8], options: &LoadOptions) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: format!("input is not valid UTF-8: {e}"),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Parse {
            line: 1,
            message: "empty file or missing header row".into(),
        });
    }
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(Error::Parse {
                line: 1,
                message: format!("duplicate header name `{h}`"),
            });
        }
    }
    for name in options.dtype_overrides.keys() {
        if !seen.contains(name.as_str()) {
            return Err(Error::UnknownColumn(name.clone()));
        }
    }

    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let cell = if options.missing_tokens.contains(field) {
                None
            } else {
                Some(field.to_string())
            };
            cells[col].push(cell);
        }
    }
    if cells[0].is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "file has a header but no data rows".into(),
        });
    }

    let columns = headers
        .iter()
        .zip(cells)
        .map(|(name, col)| build_column(name, &col, options.dtype_overrides.get(name).copied()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(columns)
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn build_column(name: &str, cells: &[Option<String>], forced: Option<DType>) -> Result<Column> {
    let numeric: Option<Vec<Option<f64>>> = cells
        .iter()
        .map(|c| match c {
            None => Some(None),
            Some(s) => parse_number(s).map(Some),
        })
        .collect();
    let labels: Vec<Option<&str>> = cells.iter().map(|c| c.as_deref()).collect();
    let mut distinct: Vec<&str> = labels.iter().flatten().copied().collect();
    distinct.sort_unstable();
    distinct.dedup();

    let dtype = match forced {
        Some(d) => d,
        None if distinct.len() == 2 => DType::Binary,
        None if numeric.is_some() => DType::Continuous,
        None => DType::Categorical,
    };
    match dtype {
        DType::Continuous => {
            let values = numeric
                .ok_or_else(|| Error::Type(format!("column `{name}` has non-numeric cells; cannot be continuous")))?;
            let missing = values.iter().map(Option::is_none).collect();
            Ok(Column::continuous(
                name,
                values.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
                missing,
            ))
        }
        DType::Binary if distinct.len() != 2 => Err(Error::Type(format!(
            "column `{name}` has {} distinct values; binary requires exactly 2",
            distinct.len()
        ))),
        d => Ok(Column::discrete(name, d, &labels)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{ColumnValues, Role};

    #[test]
    fn numeric_csv_is_continuous() {
        let csv = "a,b,c\n1,2,3\n4,5,6\n7,8,9\n10,11,12\n13,14,15\n";
        let ds = parse_csv(csv.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.n_rows(), 5);
        assert_eq!(ds.n_cols(), 3);
        for c in ds.columns() {
            assert_eq!(c.dtype, DType::Continuous);
            assert_eq!(c.role, Role::InputFeature);
        }
    }

    #[test]
    fn two_labels_become_binary_with_sorted_levels() {
        let csv = "sex\nM\nF\nF\n";
        let ds = parse_csv(csv.as_bytes(), &LoadOptions::default()).unwrap();
        let col = ds.column("sex").unwrap();
        assert_eq!(col.dtype, DType::Binary);
        assert_eq!(col.levels, vec!["F", "M"]);
        assert_eq!(col.values, ColumnValues::Codes(vec![1, 0, 0]));
    }

    #[test]
    fn missing_token_sets_mask() {
        let csv = "x,y\n1,a\nNA,b\n3,c\n5,a\n";
        let opts = LoadOptions {
            missing_tokens: ["NA".to_string()].into_iter().collect(),
            ..Default::default()
        };
        let ds = parse_csv(csv.as_bytes(), &opts).unwrap();
        let x = ds.column("x").unwrap();
        assert_eq!(x.missing, vec![false, true, false, false]);
        assert_eq!(x.dtype, DType::Continuous);
        assert_eq!(ds.column("y").unwrap().dtype, DType::Categorical);
    }

    #[test]
    fn ragged_row_reports_line() {
        let csv = "a,b\n1,2\n3\n";
        match parse_csv(csv.as_bytes(), &LoadOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_and_duplicate_headers_rejected() {
        assert!(parse_csv(b"", &LoadOptions::default()).is_err());
        assert!(parse_csv(b"a,b\n", &LoadOptions::default()).is_err());
        assert!(parse_csv(b"a,a\n1,2\n", &LoadOptions::default()).is_err());
    }

    #[test]
    fn overrides_apply() {
        let csv = "site\n1\n2\n3\n";
        let mut opts = LoadOptions::default();
        opts.dtype_overrides.insert("site".into(), DType::Categorical);
        let ds = parse_csv(csv.as_bytes(), &opts).unwrap();
        assert_eq!(ds.column("site").unwrap().dtype, DType::Categorical);
        opts.dtype_overrides.insert("site".into(), DType::Binary);
        assert!(parse_csv(csv.as_bytes(), &opts).is_err());
        let mut bad = LoadOptions::default();
        bad.dtype_overrides.insert("nope".into(), DType::Binary);
        assert!(parse_csv(csv.as_bytes(), &bad).is_err());
    }

    #[test]
    fn infinities_are_not_numeric() {
        let csv = "x\ninf\n1\n2\n";
        let ds = parse_csv(csv.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.column("x").unwrap().dtype, DType::Categorical);
    }
}
