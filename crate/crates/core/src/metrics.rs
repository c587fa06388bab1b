//! Predictor and search metrics.

use std::collections::HashSet;

use thiserror::Error;

use crate::bench_io::SearchSpace;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 values, got {0}")]
    TooShort(usize),
    #[error("k = {k} exceeds the {n} available entries")]
    KTooLarge { k: usize, n: usize },
    #[error("id {0:?} appears twice in the history")]
    DuplicateId(String),
    #[error("id {0:?} is not in the search space")]
    UnknownId(String),
}

/// 1-based ranks; tied values share the mean of their rank block.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation: Pearson correlation of average ranks.
///
/// A constant input has no ranking, and the correlation is reported as 0.
pub fn spearman(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { left: pred.len(), right: truth.len() });
    }
    if pred.len() < 2 {
        return Err(MetricsError::TooShort(pred.len()));
    }
    Ok(pearson(&average_ranks(pred), &average_ranks(truth)))
}

/// Indices of the `k` highest scores, best first; ties go to the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Result<Vec<usize>, MetricsError> {
    if k > scores.len() {
        return Err(MetricsError::KTooLarge { k, n: scores.len() });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < order.len() && k > 0 {
        order.select_nth_unstable_by(k - 1, cmp);
    }
    order.truncate(k);
    order.sort_by(cmp);
    Ok(order)
}

/// Mean true accuracy (in percent) of the `k` entries ranked highest by `scores`.
pub fn mean_topk(scores: &[f64], space: &SearchSpace, k: usize) -> Result<f64, MetricsError> {
    if scores.len() != space.len() {
        return Err(MetricsError::LengthMismatch { left: scores.len(), right: space.len() });
    }
    if k == 0 {
        return Err(MetricsError::TooShort(0));
    }
    let top = top_k_indices(scores, k)?;
    Ok(100.0 * top.iter().map(|&i| space.entry(i).accuracy).sum::<f64>() / k as f64)
}

/// 1-based position of the first optimal entry in `history`, or `None` if the
/// optimum was never evaluated. Any entry sharing the maximum accuracy counts.
pub fn samples_to_optimum_indices(history: &[usize], space: &SearchSpace) -> Result<Option<usize>, MetricsError> {
    let mut seen = vec![false; space.len()];
    let mut found = None;
    for (pos, &i) in history.iter().enumerate() {
        if i >= space.len() {
            return Err(MetricsError::UnknownId(format!("#{i}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(MetricsError::DuplicateId(space.entry(i).id.clone()));
        }
        if found.is_none() && space.is_optimum(i) {
            found = Some(pos + 1);
        }
    }
    Ok(found)
}

/// [`samples_to_optimum_indices`] over entry ids.
pub fn samples_to_optimum<S: AsRef<str>>(history: &[S], space: &SearchSpace) -> Result<Option<usize>, MetricsError> {
    let indices = history_indices(history, space)?;
    samples_to_optimum_indices(&indices, space)
}

fn history_indices<S: AsRef<str>>(history: &[S], space: &SearchSpace) -> Result<Vec<usize>, MetricsError> {
    let mut seen = HashSet::with_capacity(history.len());
    history
        .iter()
        .map(|id| {
            let id = id.as_ref();
            if !seen.insert(id) {
                return Err(MetricsError::DuplicateId(id.to_string()));
            }
            space.index_of(id).ok_or_else(|| MetricsError::UnknownId(id.to_string()))
        })
        .collect()
}

/// Best true accuracy among the first `budget` evaluated ids.
pub fn best_at_budget<S: AsRef<str>>(history: &[S], space: &SearchSpace, budget: usize) -> Result<Option<f64>, MetricsError> {
    let indices = history_indices(history, space)?;
    Ok(indices.iter().take(budget).map(|&i| space.entry(i).accuracy).reduce(f64::max))
}

/// Predictor quality over a whole space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Mean top-k accuracy, percent.
    pub m_acc: f64,
    pub psp: f64,
    pub n_space: usize,
    pub k: usize,
}

impl EvalReport {
    pub fn evaluate(scores: &[f64], space: &SearchSpace, k: usize) -> Result<Self, MetricsError> {
        let m_acc = mean_topk(scores, space, k)?;
        let psp = spearman(scores, &space.accuracies())?;
        Ok(Self { m_acc, psp, n_space: space.len(), k })
    }
}
