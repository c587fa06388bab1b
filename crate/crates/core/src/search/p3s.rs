use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench_io::SearchSpace;

use super::{SearchError, SearchResult, StepEvent, Surrogate};

/// What to do when the predictor's top picks are spread over both halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefocusFallback {
    /// Keep the current interval.
    #[default]
    StayPut,
    /// Move to the higher-FLOPs half.
    LatterHalf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct P3SConfig {
    /// Samples per iteration, also the size of the initial random pool.
    pub k: usize,
    /// Share of the interval that forms the predictor's top set.
    pub top_fraction: f64,
    /// Share of the top set that must fall in one half to move there.
    pub threshold: f64,
    pub fallback: RefocusFallback,
}

impl Default for P3SConfig {
    fn default() -> Self {
        Self { k: 10, top_fraction: 0.01, threshold: 0.75, fallback: RefocusFallback::StayPut }
    }
}

impl P3SConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    /// Intervals at or below this width are not halved any further.
    pub fn min_width(&self) -> usize {
        2 * self.k
    }
}

/// Search state. `lo..=hi` are positions in the space's FLOPs order.
#[derive(Debug, Clone)]
pub struct P3SState<S> {
    pub lo: usize,
    pub hi: usize,
    pub t: usize,
    /// Sampled `(entry index, accuracy)` in evaluation order.
    pub pool: Vec<(usize, f64)>,
    pub surrogate: S,
    pub seed: u64,
    pub config: P3SConfig,
    pub events: Vec<StepEvent>,
    sampled: Vec<bool>,
}

impl<S> P3SState<S> {
    pub fn interval(&self) -> (usize, usize) {
        (self.lo, self.hi)
    }

    pub fn is_sampled(&self, i: usize) -> bool {
        self.sampled[i]
    }

    pub fn best_accuracy(&self) -> f64 {
        self.pool.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn escapes(&self) -> usize {
        self.events.iter().filter(|e| e.escape).count()
    }
}

fn fit_seed(seed: u64, t: usize) -> u64 {
    seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn init_state<S: Surrogate>(
    space: &SearchSpace,
    config: P3SConfig,
    seed: u64,
    surrogate: S,
) -> Result<P3SState<S>, SearchError> {
    if config.k == 0 || config.k > space.len() {
        return Err(SearchError::KTooLarge { k: config.k, n: space.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, space.len(), config.k).into_vec();
    let mut state = P3SState {
        lo: 0,
        hi: space.len() - 1,
        t: 0,
        pool: Vec::with_capacity(config.k),
        surrogate,
        seed,
        config,
        events: Vec::new(),
        sampled: vec![false; space.len()],
    };
    record(&mut state, space, &picks, false);
    Ok(state)
}

fn record<S>(state: &mut P3SState<S>, space: &SearchSpace, picks: &[usize], escape: bool) {
    for &i in picks {
        debug_assert!(!state.sampled[i]);
        state.sampled[i] = true;
        state.pool.push((i, space.entry(i).accuracy));
    }
    state.events.push(StepEvent {
        t: state.t,
        lo: state.lo,
        hi: state.hi,
        sampled_ids: picks.iter().map(|&i| space.entry(i).id.clone()).collect(),
        best_so_far: state.best_accuracy(),
        escape,
    });
}

fn refit<S: Surrogate>(state: &mut P3SState<S>, space: &SearchSpace) -> Result<(), SearchError> {
    let seed = fit_seed(state.seed, state.t);
    state.surrogate.fit(space, &state.pool, seed)
}

/// Draws `k` entries uniformly without replacement and fits the surrogate on
/// them. The interval starts as the whole space.
pub fn p3s_init<S: Surrogate>(
    space: &SearchSpace,
    config: P3SConfig,
    seed: u64,
    surrogate: S,
) -> Result<P3SState<S>, SearchError> {
    let mut state = init_state(space, config, seed, surrogate)?;
    refit(&mut state, space)?;
    Ok(state)
}

/// Positions of `candidates` (entry indices) holding the `count` best scores,
/// best first; ties go to the lower entry index.
fn top_by_score(scores: &[f64], candidates: &[usize], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(candidates[a].cmp(&candidates[b])));
    order.truncate(count);
    order
}

/// Narrows the interval to one FLOPs half when the surrogate's top entries
/// concentrate there. Returns the new bounds.
pub fn p3s_refocus<S: Surrogate>(state: &mut P3SState<S>, space: &SearchSpace) -> Result<(usize, usize), SearchError> {
    let (lo, hi) = (state.lo, state.hi);
    let width = hi - lo + 1;
    if width <= state.config.min_width() {
        return Ok((lo, hi));
    }
    let members = &space.flops_order()[lo..=hi];
    let scores = state.surrogate.score(space, members)?;
    let top_count = ((state.config.top_fraction * width as f64).ceil() as usize).clamp(1, width);
    let mid = lo + (width - 1) / 2;
    let first = top_by_score(&scores, members, top_count).iter().filter(|&&pos| lo + pos <= mid).count();
    let second = top_count - first;
    let enough = |n: usize| n as f64 >= state.config.threshold * top_count as f64;
    let (new_lo, new_hi) = if enough(first) {
        (lo, mid)
    } else if enough(second) {
        (mid + 1, hi)
    } else {
        match state.config.fallback {
            RefocusFallback::StayPut => (lo, hi),
            RefocusFallback::LatterHalf => (mid + 1, hi),
        }
    };
    state.lo = new_lo;
    state.hi = new_hi;
    Ok((new_lo, new_hi))
}

/// Refocuses, then samples the `batch` best-scored unsampled entries of the
/// interval. If the interval has fewer than `batch` unsampled entries the
/// whole space is used for this step and the event is flagged as an escape.
fn select<S: Surrogate>(state: &mut P3SState<S>, space: &SearchSpace, batch: usize) -> Result<usize, SearchError> {
    p3s_refocus(state, space)?;
    let mut candidates: Vec<usize> =
        space.flops_order()[state.lo..=state.hi].iter().copied().filter(|&i| !state.sampled[i]).collect();
    let escape = candidates.len() < batch;
    if escape {
        candidates = (0..space.len()).filter(|&i| !state.sampled[i]).collect();
    }
    if candidates.is_empty() {
        return Err(SearchError::Exhausted);
    }
    let scores = state.surrogate.score(space, &candidates)?;
    let picks: Vec<usize> = top_by_score(&scores, &candidates, batch).into_iter().map(|p| candidates[p]).collect();
    state.t += 1;
    record(state, space, &picks, escape);
    Ok(picks.len())
}

/// One iteration: refocus, sample `k` entries, retrain the surrogate from
/// scratch on the whole pool.
pub fn p3s_step<S: Surrogate>(state: &mut P3SState<S>, space: &SearchSpace, k: usize) -> Result<StepEvent, SearchError> {
    select(state, space, k)?;
    refit(state, space)?;
    Ok(state.events.last().cloned().expect("select records an event"))
}

/// Full search. The last batch is cut to the remaining budget; with
/// `stop_at_optimum` the run ends after the batch that first contains the
/// optimum.
pub fn run_p3s<S: Surrogate>(
    space: &SearchSpace,
    config: P3SConfig,
    seed: u64,
    budget: usize,
    stop_at_optimum: bool,
    surrogate: S,
) -> Result<(SearchResult, S), SearchError> {
    if budget < config.k {
        return Err(SearchError::Budget { budget, k: config.k });
    }
    let budget = budget.min(space.len());
    let mut state = init_state(space, config, seed, surrogate)?;
    let found = |s: &P3SState<S>| stop_at_optimum && s.pool.iter().any(|&(i, _)| space.is_optimum(i));
    while state.pool.len() < budget && !found(&state) {
        refit(&mut state, space)?;
        let batch = config.k.min(budget - state.pool.len());
        select(&mut state, space, batch)?;
    }
    let history = state.pool.iter().map(|&(i, _)| i).collect();
    let result = SearchResult::from_history(space, history, std::mem::take(&mut state.events));
    Ok((result, state.surrogate))
}
