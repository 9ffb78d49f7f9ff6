use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Stable row identifier: the zero-based data-row index in the source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowId(pub u32);

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[serde(alias = "input")]
    InputFeature,
    Target,
    NonInput,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::InputFeature => "input_feature",
            Role::Target => "target",
            Role::NonInput => "non_input",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    Continuous,
    Binary,
    Categorical,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::Continuous => "continuous",
            DType::Binary => "binary",
            DType::Categorical => "categorical",
        }
    }

    pub fn is_discrete(self) -> bool {
        !matches!(self, DType::Continuous)
    }
}

/// Cell storage. Missing cells hold a placeholder (`0.0` or code `0`) and are
/// identified only through the column's missing mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnValues {
    Numeric(Vec<f64>),
    Codes(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub role: Role,
    pub dtype: DType,
    pub values: ColumnValues,
    pub missing: Vec<bool>,
    /// Ordered distinct labels; empty for continuous columns.
    pub levels: Vec<String>,
}

impl Column {
    pub fn continuous(name: impl Into<String>, values: Vec<f64>, missing: Vec<bool>) -> Self {
        Column {
            name: name.into(),
            role: Role::InputFeature,
            dtype: DType::Continuous,
            values: ColumnValues::Numeric(values),
            missing,
            levels: Vec::new(),
        }
    }

    /// Build a discrete column from labels (`None` = missing). Levels are
    /// sorted lexicographically.
    pub fn discrete(name: impl Into<String>, dtype: DType, labels: &[Option<&str>]) -> Self {
        let mut levels: Vec<String> = labels.iter().flatten().map(|s| s.to_string()).collect();
        levels.sort();
        levels.dedup();
        let index: HashMap<&str, u32> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect();
        let codes = labels.iter().map(|l| l.map(|s| index[s]).unwrap_or(0)).collect();
        let missing = labels.iter().map(Option::is_none).collect();
        Column {
            name: name.into(),
            role: Role::InputFeature,
            dtype,
            values: ColumnValues::Codes(codes),
            missing,
            levels,
        }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.missing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn is_missing(&self, row: usize) -> bool {
        self.missing[row]
    }

    pub fn n_missing(&self) -> usize {
        self.missing.iter().filter(|m| **m).count()
    }

    /// Numeric view of a cell: the value for continuous columns, the level
    /// code for discrete ones, `None` when missing.
    pub fn numeric(&self, row: usize) -> Option<f64> {
        if self.missing[row] {
            return None;
        }
        Some(match &self.values {
            ColumnValues::Numeric(v) => v[row],
            ColumnValues::Codes(c) => c[row] as f64,
        })
    }

    pub fn code(&self, row: usize) -> Option<u32> {
        match &self.values {
            ColumnValues::Codes(c) if !self.missing[row] => Some(c[row]),
            _ => None,
        }
    }

    /// Text form of a cell; `None` when missing.
    pub fn label(&self, row: usize) -> Option<String> {
        if self.missing[row] {
            return None;
        }
        Some(match &self.values {
            ColumnValues::Numeric(v) => format_number(v[row]),
            ColumnValues::Codes(c) => self.levels[c[row] as usize].clone(),
        })
    }

    pub fn level_index(&self, label: &str) -> Option<u32> {
        self.levels.iter().position(|l| l == label).map(|i| i as u32)
    }

    fn take_rows(&self, positions: &[usize]) -> Column {
        let values = match &self.values {
            ColumnValues::Numeric(v) => ColumnValues::Numeric(positions.iter().map(|&p| v[p]).collect()),
            ColumnValues::Codes(c) => ColumnValues::Codes(positions.iter().map(|&p| c[p]).collect()),
        };
        Column {
            name: self.name.clone(),
            role: self.role,
            dtype: self.dtype,
            values,
            missing: positions.iter().map(|&p| self.missing[p]).collect(),
            levels: self.levels.clone(),
        }
    }
}

pub(crate) fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Immutable column-major table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    columns: Vec<Column>,
    row_ids: Vec<RowId>,
}

/// Column names, dtypes and roles, without cell content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaView {
    pub n_rows: usize,
    pub columns: Vec<SchemaColumn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaColumn {
    pub name: String,
    pub dtype: DType,
    pub role: Role,
    pub n_missing: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

impl Dataset {
    /// Validates column lengths and name uniqueness. Row ids default to
    /// `0..n_rows`.
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n = columns.first().map_or(0, Column::len);
        let row_ids = (0..n as u32).map(RowId).collect();
        Self::with_row_ids(columns, row_ids)
    }

    pub fn with_row_ids(columns: Vec<Column>, row_ids: Vec<RowId>) -> Result<Self> {
        let n = row_ids.len();
        let mut seen = std::collections::HashSet::new();
        for col in &columns {
            if !seen.insert(col.name.as_str()) {
                return Err(Error::invalid(format!("duplicate column name `{}`", col.name)));
            }
            let len = match &col.values {
                ColumnValues::Numeric(v) => v.len(),
                ColumnValues::Codes(c) => c.len(),
            };
            if len != n || col.missing.len() != n {
                return Err(Error::invalid(format!(
                    "column `{}` has {} cells, expected {}",
                    col.name, len, n
                )));
            }
            if col.dtype == DType::Binary && col.levels.len() != 2 {
                return Err(Error::Type(format!(
                    "binary column `{}` must have exactly 2 levels, found {}",
                    col.name,
                    col.levels.len()
                )));
            }
        }
        Ok(Dataset { columns, row_ids })
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn row_ids(&self) -> &[RowId] {
        &self.row_ids
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn set_role(&self, column: &str, role: Role) -> Result<Dataset> {
        let idx = self.column_index(column)?;
        let mut out = self.clone();
        out.columns[idx].role = role;
        Ok(out)
    }

    /// The single target column. More than one target is rejected.
    pub fn target(&self) -> Result<&Column> {
        let mut targets = self.columns.iter().filter(|c| c.role == Role::Target);
        let first = targets
            .next()
            .ok_or_else(|| Error::invalid("dataset has no target column"))?;
        if let Some(second) = targets.next() {
            return Err(Error::invalid(format!(
                "multiple target columns (`{}`, `{}`); exactly one is allowed per run",
                first.name, second.name
            )));
        }
        Ok(first)
    }

    pub fn input_columns(&self) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(|c| c.role == Role::InputFeature)
    }

    /// Map row ids to positions in this dataset.
    pub fn positions(&self, ids: &[RowId]) -> Result<Vec<usize>> {
        let index: HashMap<RowId, usize> = self.row_ids.iter().enumerate().map(|(i, r)| (*r, i)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("row id {id} not in dataset")))
            })
            .collect()
    }

    /// New dataset holding only the given positions, in order.
    pub fn take_rows(&self, positions: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.iter().map(|c| c.take_rows(positions)).collect(),
            row_ids: positions.iter().map(|&p| self.row_ids[p]).collect(),
        }
    }

    pub(crate) fn replace_column(&self, idx: usize, column: Column) -> Dataset {
        let mut out = self.clone();
        out.columns[idx] = column;
        out
    }

    pub fn schema(&self) -> SchemaView {
        SchemaView {
            n_rows: self.n_rows(),
            columns: self
                .columns
                .iter()
                .map(|c| SchemaColumn {
                    name: c.name.clone(),
                    dtype: c.dtype,
                    role: c.role,
                    n_missing: c.n_missing(),
                    levels: c.levels.clone(),
                })
                .collect(),
        }
    }

    /// SHA-256 over schema (names, dtypes, roles, levels) and cell content,
    /// hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"wb-dataset-v1");
        h.update((self.n_rows() as u64).to_le_bytes());
        for id in &self.row_ids {
            h.update(id.0.to_le_bytes());
        }
        for col in &self.columns {
            h.update((col.name.len() as u64).to_le_bytes());
            h.update(col.name.as_bytes());
            h.update(col.dtype.as_str().as_bytes());
            h.update(col.role.as_str().as_bytes());
            h.update((col.levels.len() as u64).to_le_bytes());
            for l in &col.levels {
                h.update((l.len() as u64).to_le_bytes());
                h.update(l.as_bytes());
            }
            for (row, &m) in col.missing.iter().enumerate() {
                h.update([m as u8]);
                if !m {
                    match &col.values {
                        ColumnValues::Numeric(v) => h.update(v[row].to_bits().to_le_bytes()),
                        ColumnValues::Codes(c) => h.update(c[row].to_le_bytes()),
                    }
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// Count of rows per level of a discrete column, over the given positions.
    pub(crate) fn level_positions(&self, column: &str, positions: &[usize]) -> Result<BTreeMap<u32, Vec<usize>>> {
        let col = self.column(column)?;
        if !col.dtype.is_discrete() {
            return Err(Error::Type(format!("column `{column}` must be binary or categorical")));
        }
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &p in positions {
            let code = col.code(p).ok_or_else(|| {
                Error::invalid(format!(
                    "column `{column}` has a missing value at row {}",
                    self.row_ids[p]
                ))
            })?;
            out.entry(code).or_default().push(p);
        }
        Ok(out)
    }
}
