use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use ndarray::Array2;
use serde::Serialize;

use crate::data::DatasetTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Train,
    Validation,
    Test,
}

/// Records which sample indices each pipeline phase read.
#[derive(Debug, Default)]
pub struct AccessLog {
    seen: Mutex<BTreeMap<Phase, BTreeSet<usize>>>,
}

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, phase: Phase, indices: &[usize]) {
        let mut seen = self.seen.lock().expect("access log poisoned");
        seen.entry(phase).or_default().extend(indices.iter().copied());
    }

    pub fn indices(&self, phase: Phase) -> BTreeSet<usize> {
        let seen = self.seen.lock().expect("access log poisoned");
        seen.get(&phase).cloned().unwrap_or_default()
    }

    /// Indices read in both phases.
    pub fn overlap(&self, a: Phase, b: Phase) -> BTreeSet<usize> {
        self.indices(a)
            .intersection(&self.indices(b))
            .copied()
            .collect()
    }
}

/// Dataset handle that logs every read by phase.
#[derive(Clone, Copy)]
pub struct TrackedData<'a> {
    table: &'a DatasetTable,
    log: &'a AccessLog,
}

impl<'a> TrackedData<'a> {
    pub fn new(table: &'a DatasetTable, log: &'a AccessLog) -> Self {
        Self { table, log }
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn rows(&self, phase: Phase, indices: &[usize]) -> Array2<f64> {
        self.log.record(phase, indices);
        self.table.rows(indices)
    }

    pub fn labels(&self, phase: Phase, indices: &[usize]) -> Vec<bool> {
        self.log.record(phase, indices);
        self.table.labels_at(indices)
    }
}
