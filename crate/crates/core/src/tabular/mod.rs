//! Role-tagged tabular datasets and their quality-control utilities.
//!
//! A [`Dataset`] is an immutable column-major table. Every utility here
//! returns a new value instead of mutating its input.

mod dataset;
mod load;
mod qc;
mod split;

pub use dataset::{Column, ColumnValues, DType, Dataset, Role, RowId, SchemaColumn, SchemaView};
pub use load::{default_missing_tokens, load_csv, parse_csv, LoadOptions};
pub(crate) use qc::mean_std;
pub use qc::{
    detect_outliers, drop_flagged, find_duplicate_columns, quantile_sorted, summarize, FlagDisposition, OutlierMask,
    OutlierMethod, SummaryStats,
};
pub(crate) use split::group_positions;
pub use split::{global_split, SplitIndices};
