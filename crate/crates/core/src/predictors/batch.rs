use crate::autodiff::Tensor;
use crate::cell::{normalize_adjacency, CellGraph};
use crate::scalar::Scalar;

use super::{PredictorConfig, PredictorError};

/// A set of cells padded to `max_nodes` and laid out as batched tensors.
#[derive(Debug, Clone)]
pub struct CellBatch<T> {
    pub size: usize,
    pub nodes: usize,
    /// `[B, n, d + 1]` one-hot operations plus pad marker.
    pub features: Tensor<T>,
    /// `[B, n, n]` original 0/1 trails.
    pub adjacency: Tensor<T>,
    /// `[B, n, n]` `D⁻¹(A + I)`.
    pub norm_adjacency: Tensor<T>,
    /// `[B, n, n]` `D⁻¹(Aᵀ + I)`.
    pub norm_reverse: Tensor<T>,
    /// `[B, n]` 1 for real nodes, 0 for padding.
    pub node_mask: Tensor<T>,
    /// `[B, n, n]` 1 where both endpoints are real nodes.
    pub pair_mask: Tensor<T>,
}

impl<T: Scalar> CellBatch<T> {
    pub fn new(config: &PredictorConfig, cells: &[&CellGraph]) -> Result<Self, PredictorError> {
        let n = config.max_nodes;
        let f = config.input_dim();
        let b = cells.len();
        let mut features = vec![T::zero(); b * n * f];
        let mut adjacency = vec![T::zero(); b * n * n];
        let mut norm_adjacency = Vec::with_capacity(b * n * n);
        let mut norm_reverse = Vec::with_capacity(b * n * n);
        let mut node_mask = vec![T::zero(); b * n];
        let mut pair_mask = vec![T::zero(); b * n * n];
        for (ci, cell) in cells.iter().enumerate() {
            let m = cell.num_nodes();
            if m > n {
                return Err(PredictorError::CellShape(format!("{m} nodes exceed max_nodes {n}")));
            }
            if cell.vocab_size() != config.vocab_size {
                return Err(PredictorError::CellShape(format!(
                    "vocabulary size {} differs from predictor's {}",
                    cell.vocab_size(),
                    config.vocab_size
                )));
            }
            let base = ci * n;
            for (i, &op) in cell.op_indices().iter().enumerate() {
                features[(base + i) * f + op] = T::one();
                node_mask[base + i] = T::one();
            }
            for i in m..n {
                features[(base + i) * f + config.pad_column()] = T::one();
            }
            let mut reverse = vec![T::zero(); n * n];
            for (src, dst) in cell.edges() {
                adjacency[ci * n * n + src * n + dst] = T::one();
                reverse[dst * n + src] = T::one();
            }
            for i in 0..m {
                for j in 0..m {
                    pair_mask[ci * n * n + i * n + j] = T::one();
                }
            }
            norm_adjacency.extend(normalize_adjacency(&adjacency[ci * n * n..(ci + 1) * n * n], n));
            norm_reverse.extend(normalize_adjacency(&reverse, n));
        }
        let t = |shape: Vec<usize>, data: Vec<T>| Tensor::new(shape, data).map_err(PredictorError::from);
        Ok(Self {
            size: b,
            nodes: n,
            features: t(vec![b, n, f], features)?,
            adjacency: t(vec![b, n, n], adjacency)?,
            norm_adjacency: t(vec![b, n, n], norm_adjacency)?,
            norm_reverse: t(vec![b, n, n], norm_reverse)?,
            node_mask: t(vec![b, n], node_mask)?,
            pair_mask: t(vec![b, n, n], pair_mask)?,
        })
    }
}
