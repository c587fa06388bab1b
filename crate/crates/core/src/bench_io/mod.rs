//! Tabular benchmarks: the in-memory search space, its JSON Lines file format
//! and a seeded synthetic generator.

mod jsonl;
mod synth;

use std::collections::HashMap;

use thiserror::Error;

use crate::cell::{CellError, CellGraph, OpVocabulary};

pub use jsonl::{
    load_benchmark, parse_benchmark, save_benchmark, write_benchmark, CellRecord, HeaderRecord,
    Record, FORMAT_VERSION,
};
pub use synth::{gen_synthetic, SynthSpec, SynthTruth};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cell {id:?} is invalid: {source}")]
    Validation { id: String, source: CellError },
    #[error("duplicate cell id {0:?}")]
    DuplicateId(String),
    #[error("entry {id:?}: {reason}")]
    InvalidEntry { id: String, reason: String },
    #[error("search space is empty")]
    Empty,
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkEntry {
    pub id: String,
    pub cell: CellGraph,
    /// Mega-FLOPs.
    pub flops: f64,
    /// Ground-truth accuracy as a fraction in `[0, 1]`.
    pub accuracy: f64,
}

/// Immutable, indexed collection of benchmark entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    vocab: OpVocabulary,
    max_nodes: usize,
    dataset_name: String,
    entries: Vec<BenchmarkEntry>,
    flops_order: Vec<usize>,
    index: HashMap<String, usize>,
    max_accuracy: f64,
}

impl SearchSpace {
    pub fn new(
        vocab: OpVocabulary,
        max_nodes: usize,
        dataset_name: impl Into<String>,
        entries: Vec<BenchmarkEntry>,
    ) -> Result<Self, BenchError> {
        if entries.is_empty() {
            return Err(BenchError::Empty);
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.id.clone(), i).is_some() {
                return Err(BenchError::DuplicateId(e.id.clone()));
            }
            let invalid = |reason: String| BenchError::InvalidEntry { id: e.id.clone(), reason };
            if !(0.0..=1.0).contains(&e.accuracy) {
                return Err(invalid(format!("accuracy {} outside [0, 1]", e.accuracy)));
            }
            if !(e.flops.is_finite() && e.flops >= 0.0) {
                return Err(invalid(format!("flops {} must be finite and non-negative", e.flops)));
            }
            if e.cell.num_nodes() > max_nodes {
                return Err(invalid(format!("{} nodes exceed max_nodes {max_nodes}", e.cell.num_nodes())));
            }
            if e.cell.vocab_size() != vocab.len() {
                return Err(invalid("cell was built against a different vocabulary".into()));
            }
        }
        let flops_order = sort_by_flops(&entries);
        let max_accuracy = entries.iter().map(|e| e.accuracy).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            vocab,
            max_nodes,
            dataset_name: dataset_name.into(),
            entries,
            flops_order,
            index,
            max_accuracy,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BenchmarkEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &BenchmarkEntry {
        &self.entries[i]
    }

    pub fn vocab(&self) -> &OpVocabulary {
        &self.vocab
    }

    pub fn max_nodes(&self) -> usize {
        self.max_nodes
    }

    pub fn dataset_name(&self) -> &str {
        &self.dataset_name
    }

    /// Entry indices sorted ascending by FLOPs (stable).
    pub fn flops_order(&self) -> &[usize] {
        &self.flops_order
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn max_accuracy(&self) -> f64 {
        self.max_accuracy
    }

    pub fn is_optimum(&self, i: usize) -> bool {
        self.entries[i].accuracy == self.max_accuracy
    }

    pub fn optimum_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_optimum(i)).collect()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.accuracy).collect()
    }
}

/// Stable ascending sort of entry indices by FLOPs; ties keep input order.
pub fn sort_by_flops(entries: &[BenchmarkEntry]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| entries[a].flops.total_cmp(&entries[b].flops));
    order
}
