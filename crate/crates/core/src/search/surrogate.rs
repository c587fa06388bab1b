use crate::bench_io::SearchSpace;
use crate::cell::CellGraph;
use crate::predictors::{predict_cells, train_predictor, PredictorConfig, PredictorParams, TrainConfig, TrainLog};
use crate::scalar::Scalar;

use super::SearchError;

/// Something that can be fitted to sampled accuracies and then rank entries.
pub trait Surrogate {
    /// Refits from scratch on `pool`, a list of `(entry index, accuracy)`.
    fn fit(&mut self, space: &SearchSpace, pool: &[(usize, f64)], seed: u64) -> Result<(), SearchError>;

    /// One score per requested entry index, higher meaning better.
    fn score(&self, space: &SearchSpace, indices: &[usize]) -> Result<Vec<f64>, SearchError>;
}

/// Trained accuracy predictor.
#[derive(Debug, Clone)]
pub struct NeuralSurrogate<T> {
    pub config: PredictorConfig,
    pub train: TrainConfig,
    params: Option<PredictorParams<T>>,
    last_log: Option<TrainLog>,
}

impl<T: Scalar> NeuralSurrogate<T> {
    pub fn new(config: PredictorConfig, train: TrainConfig) -> Self {
        Self { config, train, params: None, last_log: None }
    }

    pub fn params(&self) -> Option<&PredictorParams<T>> {
        self.params.as_ref()
    }

    pub fn last_log(&self) -> Option<&TrainLog> {
        self.last_log.as_ref()
    }
}

impl<T: Scalar> Surrogate for NeuralSurrogate<T> {
    fn fit(&mut self, space: &SearchSpace, pool: &[(usize, f64)], seed: u64) -> Result<(), SearchError> {
        let pairs: Vec<(&CellGraph, f64)> = pool.iter().map(|&(i, a)| (&space.entry(i).cell, a)).collect();
        let train = TrainConfig { seed, ..self.train };
        let (params, log) = train_predictor(&self.config, &pairs, &train)?;
        self.params = Some(params);
        self.last_log = Some(log);
        Ok(())
    }

    fn score(&self, space: &SearchSpace, indices: &[usize]) -> Result<Vec<f64>, SearchError> {
        let params = self.params.as_ref().ok_or(SearchError::Unfitted)?;
        let cells: Vec<&CellGraph> = indices.iter().map(|&i| &space.entry(i).cell).collect();
        Ok(predict_cells(params, &cells)?.into_iter().map(|v| v.as_f64()).collect())
    }
}

/// Scores every entry by its true accuracy: a perfect predictor.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSurrogate;

impl Surrogate for OracleSurrogate {
    fn fit(&mut self, _: &SearchSpace, _: &[(usize, f64)], _: u64) -> Result<(), SearchError> {
        Ok(())
    }

    fn score(&self, space: &SearchSpace, indices: &[usize]) -> Result<Vec<f64>, SearchError> {
        Ok(indices.iter().map(|&i| space.entry(i).accuracy).collect())
    }
}
