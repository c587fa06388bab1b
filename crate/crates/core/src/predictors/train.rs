use rayon::prelude::*;

use crate::autodiff::{adam_update, backprop, AdamState, Tape, Tensor};
use crate::bench_io::SearchSpace;
use crate::cell::CellGraph;
use crate::scalar::Scalar;

use super::model::{build_forward, forward_batch, register};
use super::{CellBatch, PredictorConfig, PredictorError, PredictorParams};

/// Cells per inference batch; batches are scored in parallel.
const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 300, lr: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Pool MSE before each update.
    pub losses: Vec<f64>,
    /// Pool MSE after the last update.
    pub final_loss: f64,
}

/// Full-batch Adam on the pool's mean squared error.
///
/// Weights are initialized from `train.seed`; the readout bias starts at the
/// pool's mean accuracy.
pub fn train_predictor<T: Scalar>(
    config: &PredictorConfig,
    pool: &[(&CellGraph, f64)],
    train: &TrainConfig,
) -> Result<(PredictorParams<T>, TrainLog), PredictorError> {
    if pool.is_empty() {
        return Err(PredictorError::EmptyPool);
    }
    if let Some(&(_, bad)) = pool.iter().find(|(_, a)| !(0.0..=1.0).contains(a)) {
        return Err(PredictorError::BadTarget(bad));
    }
    let mut params = PredictorParams::<T>::init(config, train.seed)?;
    let mean = pool.iter().map(|(_, a)| a).sum::<f64>() / pool.len() as f64;
    params.readout_b = Tensor::from_f64(vec![1], &[mean])?;

    let cells: Vec<&CellGraph> = pool.iter().map(|(c, _)| *c).collect();
    let batch = CellBatch::new(config, &cells)?;
    let targets: Vec<f64> = pool.iter().map(|(_, a)| *a).collect();
    let targets = Tensor::<T>::from_f64(vec![pool.len(), 1], &targets)?;

    let init: Vec<Tensor<T>> = params.tensors().into_iter().cloned().collect();
    let mut state = AdamState::with_lr(&init, T::of(train.lr));
    let mut losses = Vec::with_capacity(train.epochs);
    for _ in 0..train.epochs {
        let (loss, grads) = pool_loss(&params, &batch, &targets, true)?;
        losses.push(loss);
        adam_update(&mut params.tensors_mut(), &grads.unwrap(), &mut state)?;
    }
    let (final_loss, _) = pool_loss(&params, &batch, &targets, false)?;
    Ok((params, TrainLog { losses, final_loss }))
}

pub type LossAndGrads<T> = (f64, Option<Vec<Tensor<T>>>);

/// Mean squared error of the predictions for `batch` against `targets`
/// (`[B, 1]`), optionally with gradients in [`PredictorParams::tensors`] order.
pub fn pool_loss<T: Scalar>(
    params: &PredictorParams<T>,
    batch: &CellBatch<T>,
    targets: &Tensor<T>,
    with_grads: bool,
) -> Result<LossAndGrads<T>, PredictorError> {
    let mut tape = Tape::new();
    let vars = register(&mut tape, params);
    let (out, _) = build_forward(&mut tape, params, &vars, batch)?;
    let target = tape.constant(targets.clone());
    let loss = tape.mse(out, target)?;
    let value = tape.value(loss).data()[0].as_f64();
    let grads = if with_grads { Some(backprop(&tape, loss)?.params()) } else { None };
    Ok((value, grads))
}

/// Scores for `cells`, in order. Chunks are evaluated in parallel; each
/// cell's score does not depend on the chunk it lands in.
pub fn predict_cells<T: Scalar>(
    params: &PredictorParams<T>,
    cells: &[&CellGraph],
) -> Result<Vec<T>, PredictorError> {
    let chunks: Vec<Vec<T>> = cells
        .par_chunks(INFERENCE_CHUNK)
        .map(|chunk| forward_batch(params, chunk))
        .collect::<Result<_, _>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// One score per entry of the space, in entry order.
pub fn predict_all<T: Scalar>(
    params: &PredictorParams<T>,
    space: &SearchSpace,
) -> Result<Vec<T>, PredictorError> {
    let cells: Vec<&CellGraph> = space.entries().iter().map(|e| &e.cell).collect();
    predict_cells(params, &cells)
}
