//! Predictor-guided search over a tabular space, and a random baseline.
//!
//! P3S keeps a focus interval over the space sorted by FLOPs. Each iteration
//! it looks at the surrogate's top 1% inside the interval; if at least 75% of
//! them sit in one half, the interval shrinks to that half. It then samples
//! the surrogate's top-k unsampled entries of the interval, adds them to the
//! pool and retrains the surrogate on the pool.

mod p3s;
mod surrogate;

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench_io::SearchSpace;
use crate::metrics::{EvalReport, MetricsError};
use crate::predictors::PredictorError;

pub use p3s::{p3s_init, p3s_refocus, p3s_step, run_p3s, P3SConfig, P3SState, RefocusFallback};
pub use surrogate::{NeuralSurrogate, OracleSurrogate, Surrogate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("k = {k} must be between 1 and the space size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("budget {budget} is smaller than k = {k}")]
    Budget { budget: usize, k: usize },
    #[error("every entry of the space has been sampled")]
    Exhausted,
    #[error("surrogate used before it was fitted")]
    Unfitted,
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One line of a run's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub t: usize,
    pub lo: usize,
    pub hi: usize,
    pub sampled_ids: Vec<String>,
    pub best_so_far: f64,
    /// The interval ran out of unsampled entries and the step drew from the
    /// whole space.
    pub escape: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Evaluated ids in order.
    pub history: Vec<String>,
    pub history_indices: Vec<usize>,
    pub best_accuracy: f64,
    pub samples_used: usize,
    /// 1-based position of the first optimal entry in the history.
    pub samples_to_optimum: Option<usize>,
    pub events: Vec<StepEvent>,
}

impl SearchResult {
    pub fn from_history(space: &SearchSpace, history_indices: Vec<usize>, events: Vec<StepEvent>) -> Self {
        let best_accuracy =
            history_indices.iter().map(|&i| space.entry(i).accuracy).fold(f64::NEG_INFINITY, f64::max);
        let samples_to_optimum = history_indices.iter().position(|&i| space.is_optimum(i)).map(|p| p + 1);
        Self {
            history: history_indices.iter().map(|&i| space.entry(i).id.clone()).collect(),
            samples_used: history_indices.len(),
            history_indices,
            best_accuracy,
            samples_to_optimum,
            events,
        }
    }

    pub fn escapes(&self) -> usize {
        self.events.iter().filter(|e| e.escape).count()
    }
}

/// Uniform sampling without replacement.
pub fn run_random_search(
    space: &SearchSpace,
    seed: u64,
    budget: usize,
    stop_at_optimum: bool,
) -> Result<SearchResult, SearchError> {
    if budget == 0 {
        return Err(SearchError::Budget { budget, k: 1 });
    }
    let mut order: Vec<usize> = (0..space.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(budget);
    if stop_at_optimum {
        if let Some(p) = order.iter().position(|&i| space.is_optimum(i)) {
            order.truncate(p + 1);
        }
    }
    Ok(SearchResult::from_history(space, order, Vec::new()))
}

/// `budget` distinct entry indices drawn uniformly.
pub fn sample_pool(space: &SearchSpace, budget: usize, seed: u64) -> Result<Vec<usize>, SearchError> {
    if budget == 0 || budget > space.len() {
        return Err(SearchError::KTooLarge { k: budget, n: space.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, space.len(), budget).into_vec())
}

/// Fits `surrogate` on a random pool of `budget` entries and scores it over
/// the whole space: mean true accuracy of its top `k` and rank correlation.
pub fn evaluate_surrogate<S: Surrogate>(
    space: &SearchSpace,
    surrogate: &mut S,
    budget: usize,
    seed: u64,
    k: usize,
) -> Result<EvalReport, SearchError> {
    if k == 0 || k > space.len() {
        return Err(SearchError::KTooLarge { k, n: space.len() });
    }
    let pool: Vec<(usize, f64)> =
        sample_pool(space, budget, seed)?.into_iter().map(|i| (i, space.entry(i).accuracy)).collect();
    surrogate.fit(space, &pool, seed)?;
    let all: Vec<usize> = (0..space.len()).collect();
    let scores = surrogate.score(space, &all)?;
    Ok(EvalReport::evaluate(&scores, space, k)?)
}

/// Writes one JSON object per event, LF-terminated.
pub fn write_events<W: Write>(events: &[StepEvent], mut out: W) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
