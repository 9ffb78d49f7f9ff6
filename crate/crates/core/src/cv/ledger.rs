use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::tabular::RowId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Fit,
    Predict,
}

/// One recorded touch: which rows a phase fitted on or predicted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AccessEntry {
    pub phase: String,
    pub access: Access,
    pub rows: Vec<RowId>,
}

/// Fit-touched rows that fall outside their phase's declared training rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakViolation {
    pub phase: String,
    pub rows: Vec<RowId>,
}

/// Append-only record of every row set handed to a fit or a predict.
///
/// Phases are `/`-separated paths (`cv/fold/2`, `nested/fold/0/search/3/inner/1`).
/// A protocol declares the rows each level may train on; [`violations`]
/// checks every fit entry against the declarations of all its ancestor
/// phases, so a search fit must stay inside its inner fold, its outer fold,
/// and the global training set at once. Appends may come from many
/// threads; [`entries`] returns them in a deterministic order.
///
/// [`violations`]: AccessLedger::violations
/// [`entries`]: AccessLedger::entries
#[derive(Debug, Default)]
pub struct AccessLedger {
    entries: Mutex<Vec<AccessEntry>>,
    declared: Mutex<BTreeMap<String, BTreeSet<RowId>>>,
}

impl AccessLedger {
    pub fn new() -> Self {
        AccessLedger::default()
    }

    pub fn declare(&self, phase: &str, training: &[RowId]) {
        self.declared
            .lock()
            .unwrap()
            .insert(phase.to_string(), training.iter().copied().collect());
    }

    pub fn record(&self, phase: &str, access: Access, rows: &[RowId]) {
        let mut rows = rows.to_vec();
        rows.sort_unstable();
        self.entries.lock().unwrap().push(AccessEntry {
            phase: phase.to_string(),
            access,
            rows,
        });
    }

    pub fn entries(&self) -> Vec<AccessEntry> {
        let mut out = self.entries.lock().unwrap().clone();
        out.sort();
        out
    }

    /// Fit entries of phases starting with `prefix`.
    pub fn fit_touched(&self, prefix: &str) -> BTreeSet<RowId> {
        self.entries
            .lock()
            .unwrap()
            .iter()
            .filter(|e| e.access == Access::Fit && e.phase.starts_with(prefix))
            .flat_map(|e| e.rows.iter().copied())
            .collect()
    }

    pub fn declared(&self, phase: &str) -> Option<BTreeSet<RowId>> {
        self.declared.lock().unwrap().get(phase).cloned()
    }

    /// Fit rows outside any declared ancestor phase. A fit with no
    /// declared ancestor at all is a violation in full.
    pub fn violations(&self) -> Vec<LeakViolation> {
        let declared = self.declared.lock().unwrap();
        self.entries()
            .into_iter()
            .filter(|e| e.access == Access::Fit)
            .filter_map(|e| {
                let scopes: Vec<&BTreeSet<RowId>> = declared
                    .iter()
                    .filter(|(p, _)| is_ancestor(p, &e.phase))
                    .map(|(_, rows)| rows)
                    .collect();
                let rows: Vec<RowId> = e
                    .rows
                    .iter()
                    .copied()
                    .filter(|r| scopes.is_empty() || scopes.iter().any(|s| !s.contains(r)))
                    .collect();
                (!rows.is_empty()).then(|| LeakViolation { phase: e.phase, rows })
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn is_ancestor(scope: &str, phase: &str) -> bool {
    phase
        .strip_prefix(scope)
        .is_some_and(|rest| rest.is_empty() || rest.starts_with('/'))
}
