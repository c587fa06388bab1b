//! Cell graphs: node-labelled DAGs encoded as a binary adjacency matrix plus a
//! one-hot operation matrix.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

use crate::scalar::Scalar;

pub const INPUT_OP: &str = "input";
pub const OUTPUT_OP: &str = "output";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CellError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("adjacency entry ({row}, {col}) is {value}, expected 0 or 1")]
    NonBinary { row: usize, col: usize, value: u8 },
    #[error("row {row} of the operation matrix is not one-hot")]
    OneHot { row: usize },
    #[error("adjacency matrix contains a directed cycle")]
    Cycle,
    #[error("terminal rule violated: {0}")]
    Terminal(String),
    #[error("unknown operation {0:?}")]
    UnknownOp(String),
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
}

/// Ordered operation alphabet. Always contains `"input"` and `"output"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl OpVocabulary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, CellError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(CellError::Vocabulary(format!("empty name at position {i}")));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(CellError::Vocabulary(format!("duplicate name {name:?}")));
            }
        }
        for reserved in [INPUT_OP, OUTPUT_OP] {
            if !index.contains_key(reserved) {
                return Err(CellError::Vocabulary(format!("missing reserved {reserved:?}")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn input_index(&self) -> usize {
        self.index[INPUT_OP]
    }

    pub fn output_index(&self) -> usize {
        self.index[OUTPUT_OP]
    }
}

/// A validated cell in canonical form.
///
/// Nodes are topologically indexed, so the adjacency is strictly upper
/// triangular; node 0 is the input and node `n - 1` the output.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellGraph {
    n: usize,
    vocab_size: usize,
    adjacency: Vec<u8>,
    ops: Vec<usize>,
}

impl CellGraph {
    /// Validates raw matrices and returns the canonical cell.
    pub fn new(
        adjacency: &[Vec<u8>],
        ops: &[Vec<u8>],
        vocab: &OpVocabulary,
    ) -> Result<Self, CellError> {
        validate_cell(adjacency, ops, vocab)
    }

    /// Convenience constructor from operation names.
    pub fn from_names<S: AsRef<str>>(
        adjacency: &[Vec<u8>],
        op_names: &[S],
        vocab: &OpVocabulary,
    ) -> Result<Self, CellError> {
        let ops = encode_operations(op_names, vocab)?;
        validate_cell(adjacency, &ops, vocab)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.adjacency[src * self.n + dst] == 1
    }

    /// Operation index (into the vocabulary) of every node.
    pub fn op_indices(&self) -> &[usize] {
        &self.ops
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a == 1).count()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n * n)
            .filter(move |&k| self.adjacency[k] == 1)
            .map(move |k| (k / n, k % n))
    }

    pub fn adjacency_rows(&self) -> Vec<Vec<u8>> {
        self.adjacency.chunks(self.n).map(<[u8]>::to_vec).collect()
    }

    pub fn ops_matrix(&self) -> Vec<Vec<u8>> {
        self.ops
            .iter()
            .map(|&op| {
                let mut row = vec![0u8; self.vocab_size];
                row[op] = 1;
                row
            })
            .collect()
    }

    pub fn op_names<'v>(&self, vocab: &'v OpVocabulary) -> Vec<&'v str> {
        self.ops.iter().map(|&op| vocab.names[op].as_str()).collect()
    }

    /// Row-major `n × n` adjacency as scalars.
    pub fn adjacency_as<T: Scalar>(&self) -> Vec<T> {
        self.adjacency
            .iter()
            .map(|&a| if a == 1 { T::one() } else { T::zero() })
            .collect()
    }

    /// Length of the longest directed path from the input node, in edges.
    pub fn depth(&self) -> usize {
        let mut longest = vec![None::<usize>; self.n];
        longest[0] = Some(0);
        for src in 0..self.n {
            let Some(d) = longest[src] else { continue };
            for (dst, slot) in longest.iter_mut().enumerate().skip(src + 1) {
                if self.has_edge(src, dst) {
                    *slot = Some(slot.map_or(d + 1, |cur| cur.max(d + 1)));
                }
            }
        }
        longest[self.n - 1].unwrap_or(0)
    }
}

/// Checks every cell invariant and re-indexes the nodes topologically.
///
/// Checks run in a fixed order: shapes, binary adjacency, one-hot rows,
/// acyclicity, then the input/output terminal rules.
pub fn validate_cell(
    adjacency: &[Vec<u8>],
    ops: &[Vec<u8>],
    vocab: &OpVocabulary,
) -> Result<CellGraph, CellError> {
    let n = adjacency.len();
    if n < 2 {
        return Err(CellError::Shape(format!("cell needs at least 2 nodes, got {n}")));
    }
    if let Some((i, row)) = adjacency.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(CellError::Shape(format!(
            "adjacency row {i} has {} entries, expected {n}",
            row.len()
        )));
    }
    if ops.len() != n {
        return Err(CellError::Shape(format!(
            "operation matrix has {} rows, adjacency has {n}",
            ops.len()
        )));
    }
    let d = vocab.len();
    if let Some((i, row)) = ops.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(CellError::Shape(format!(
            "operation row {i} has {} columns, vocabulary has {d}",
            row.len()
        )));
    }
    for (row, r) in adjacency.iter().enumerate() {
        for (col, &value) in r.iter().enumerate() {
            if value > 1 {
                return Err(CellError::NonBinary { row, col, value });
            }
        }
    }
    let mut op_of = Vec::with_capacity(n);
    for (row, r) in ops.iter().enumerate() {
        let ones = r.iter().filter(|&&v| v == 1).count();
        let zeros = r.iter().filter(|&&v| v == 0).count();
        if ones != 1 || ones + zeros != d {
            return Err(CellError::OneHot { row });
        }
        op_of.push(r.iter().position(|&v| v == 1).unwrap());
    }

    let edge = |i: usize, j: usize| adjacency[i][j] == 1;
    let mut indegree: Vec<usize> = (0..n).map(|j| (0..n).filter(|&i| edge(i, j)).count()).collect();
    let outdegree: Vec<usize> = (0..n).map(|i| (0..n).filter(|&j| edge(i, j)).count()).collect();

    // Kahn's algorithm; also serves as the cycle check.
    let mut remaining = indegree.clone();
    let mut stack: Vec<usize> = (0..n).filter(|&i| remaining[i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = stack.pop() {
        seen += 1;
        for j in (0..n).filter(|&j| edge(i, j)) {
            remaining[j] -= 1;
            if remaining[j] == 0 {
                stack.push(j);
            }
        }
    }
    if seen != n {
        return Err(CellError::Cycle);
    }

    let input = vocab.input_index();
    let output = vocab.output_index();
    let find_unique = |op: usize, label: &str| -> Result<usize, CellError> {
        let nodes: Vec<usize> = (0..n).filter(|&i| op_of[i] == op).collect();
        match nodes.as_slice() {
            [node] => Ok(*node),
            _ => Err(CellError::Terminal(format!(
                "expected exactly one {label} node, found {}",
                nodes.len()
            ))),
        }
    };
    let input_node = find_unique(input, INPUT_OP)?;
    let output_node = find_unique(output, OUTPUT_OP)?;
    if indegree[input_node] != 0 {
        return Err(CellError::Terminal("input node has incoming trails".into()));
    }
    if outdegree[output_node] != 0 {
        return Err(CellError::Terminal("output node has outgoing trails".into()));
    }

    // Canonical order: input first, output last, otherwise smallest index first.
    let mut order = Vec::with_capacity(n);
    let mut heap = BinaryHeap::new();
    let visit = |i: usize, indegree: &mut Vec<usize>, heap: &mut BinaryHeap<Reverse<usize>>| {
        for j in (0..n).filter(|&j| edge(i, j)) {
            indegree[j] -= 1;
            if indegree[j] == 0 && j != output_node {
                heap.push(Reverse(j));
            }
        }
    };
    order.push(input_node);
    for i in (0..n).filter(|&i| indegree[i] == 0 && i != input_node && i != output_node) {
        heap.push(Reverse(i));
    }
    visit(input_node, &mut indegree, &mut heap);
    while let Some(Reverse(i)) = heap.pop() {
        order.push(i);
        visit(i, &mut indegree, &mut heap);
    }
    order.push(output_node);
    debug_assert_eq!(order.len(), n);

    let mut canonical = vec![0u8; n * n];
    for (new_i, &old_i) in order.iter().enumerate() {
        for (new_j, &old_j) in order.iter().enumerate() {
            canonical[new_i * n + new_j] = adjacency[old_i][old_j];
        }
    }
    Ok(CellGraph {
        n,
        vocab_size: d,
        adjacency: canonical,
        ops: order.iter().map(|&i| op_of[i]).collect(),
    })
}

/// Computes `D⁻¹(A + I)` for a row-major `n × n` non-negative matrix, where
/// `D` holds the row sums of `A + I`.
pub fn normalize_adjacency<T: Scalar>(a: &[T], n: usize) -> Vec<T> {
    assert_eq!(a.len(), n * n, "adjacency must be n × n");
    let mut out = Vec::with_capacity(n * n);
    for (i, row) in a.chunks(n).enumerate() {
        let sum = row.iter().copied().sum::<T>() + T::one();
        out.extend(row.iter().enumerate().map(|(j, &v)| {
            let v = if i == j { v + T::one() } else { v };
            v / sum
        }));
    }
    out
}

pub fn encode_operations<S: AsRef<str>>(
    op_names: &[S],
    vocab: &OpVocabulary,
) -> Result<Vec<Vec<u8>>, CellError> {
    op_names
        .iter()
        .map(|name| {
            let name = name.as_ref();
            let idx = vocab
                .index_of(name)
                .ok_or_else(|| CellError::UnknownOp(name.to_string()))?;
            let mut row = vec![0u8; vocab.len()];
            row[idx] = 1;
            Ok(row)
        })
        .collect()
}

pub fn decode_operations(
    ops: &[Vec<u8>],
    vocab: &OpVocabulary,
) -> Result<Vec<String>, CellError> {
    ops.iter()
        .enumerate()
        .map(|(row, r)| {
            if r.len() != vocab.len() || r.iter().filter(|&&v| v == 1).count() != 1 {
                return Err(CellError::OneHot { row });
            }
            let idx = r.iter().position(|&v| v == 1).unwrap();
            Ok(vocab.names[idx].clone())
        })
        .collect()
}
