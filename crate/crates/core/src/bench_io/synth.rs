//! Seeded synthetic benchmarks.
//!
//! Cells are random node-labelled DAGs. Their FLOPs are a deterministic
//! function of the operation counts and the number of trails, and accuracy
//! follows
//!
//! ```text
//! acc = clamp(base + flops_weight · g(u) + composition_weight · h(cell) + N(0, σ²), 0, 1)
//! g(u) = exp(-((u - band_center) / band_width)²)
//! ```
//!
//! where `u` is the cell's FLOPs rescaled to `[0, 1]` over the space and
//! `h` averages the cell's relative depth and the share of intermediate
//! nodes lying on an input-to-output path. Accuracy is therefore unimodal in
//! FLOPs, peaking in a band, so nearby FLOPs imply similar accuracy.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cell::{CellGraph, OpVocabulary, INPUT_OP, OUTPUT_OP};

use super::{BenchError, BenchmarkEntry, SearchSpace};

/// Named operations and their per-node cost in mega-FLOPs.
const OP_TABLE: [(&str, f64); 6] = [
    ("conv3x3", 9.0),
    ("conv1x1", 1.0),
    ("maxpool3x3", 0.3),
    ("avgpool3x3", 0.5),
    ("skip", 0.05),
    ("conv5x5", 25.0),
];

const STEM_FLOPS: f64 = 5.0;
const TRAIL_FLOPS: f64 = 0.5;
const EDGE_PROBABILITY: f64 = 0.4;
/// Gap enforced between the optimum and the runner-up.
const OPTIMUM_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_cells: usize,
    pub n_nodes: usize,
    /// Number of non-terminal operations.
    pub vocab_size: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub base_accuracy: f64,
    pub flops_weight: f64,
    pub composition_weight: f64,
    /// Peak of the FLOPs band, as a fraction of the space's FLOPs range.
    pub band_center: f64,
    pub band_width: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_cells: 4096,
            n_nodes: 7,
            vocab_size: 3,
            seed: 0,
            noise_sigma: 0.002,
            base_accuracy: 0.70,
            flops_weight: 0.20,
            composition_weight: 0.05,
            band_center: 0.7,
            band_width: 0.25,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |m: &str| Err(BenchError::Spec(m.to_string()));
        if self.n_cells < 2 {
            return fail("n_cells must be at least 2");
        }
        if self.n_nodes < 3 {
            return fail("n_nodes must be at least 3");
        }
        if self.vocab_size == 0 {
            return fail("vocab_size must be at least 1");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return fail("noise_sigma must be finite and non-negative");
        }
        if !(self.band_width.is_finite() && self.band_width > 0.0) {
            return fail("band_width must be positive");
        }
        let coeffs = [self.base_accuracy, self.flops_weight, self.composition_weight, self.band_center];
        if coeffs.iter().any(|c| !c.is_finite()) {
            return fail("coefficients must be finite");
        }
        Ok(())
    }

    fn op_names(&self) -> Vec<(String, f64)> {
        (0..self.vocab_size)
            .map(|i| match OP_TABLE.get(i) {
                Some(&(name, cost)) => (name.to_string(), cost),
                None => (format!("op{i}"), 2.0 + i as f64),
            })
            .collect()
    }
}

/// Description of the accuracy function behind a generated space.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub flops_min: f64,
    pub flops_max: f64,
    pub band_center: f64,
    pub band_width: f64,
    pub base_accuracy: f64,
    pub flops_weight: f64,
    pub composition_weight: f64,
    pub noise_sigma: f64,
    pub optimum_id: String,
    pub optimum_accuracy: f64,
}

fn random_cell(rng: &mut ChaCha8Rng, spec: &SynthSpec, vocab: &OpVocabulary) -> CellGraph {
    let n = spec.n_nodes;
    let mut adj = vec![vec![0u8; n]; n];
    for (i, row) in adj.iter_mut().enumerate() {
        for cell in row.iter_mut().skip(i + 1) {
            *cell = rng.random_bool(EDGE_PROBABILITY) as u8;
        }
    }
    for j in 1..n - 1 {
        if (0..j).all(|i| adj[i][j] == 0) {
            adj[rng.random_range(0..j)][j] = 1;
        }
        if (j + 1..n).all(|k| adj[j][k] == 0) {
            adj[j][rng.random_range(j + 1..n)] = 1;
        }
    }
    let mut names = vec![INPUT_OP.to_string()];
    for _ in 1..n - 1 {
        names.push(vocab.names()[2 + rng.random_range(0..spec.vocab_size)].clone());
    }
    names.push(OUTPUT_OP.to_string());
    CellGraph::from_names(&adj, &names, vocab).expect("generated cells are valid by construction")
}

/// Share of intermediate nodes that lie on some input-to-output path.
fn active_fraction(cell: &CellGraph) -> f64 {
    let n = cell.num_nodes();
    let mut from_input = vec![false; n];
    from_input[0] = true;
    for j in 1..n {
        from_input[j] = (0..j).any(|i| from_input[i] && cell.has_edge(i, j));
    }
    let mut to_output = vec![false; n];
    to_output[n - 1] = true;
    for i in (0..n - 1).rev() {
        to_output[i] = (i + 1..n).any(|j| to_output[j] && cell.has_edge(i, j));
    }
    let active = (1..n - 1).filter(|&i| from_input[i] && to_output[i]).count();
    active as f64 / (n - 2) as f64
}

fn composition_score(cell: &CellGraph) -> f64 {
    let depth = cell.depth() as f64 / (cell.num_nodes() - 1) as f64;
    0.5 * depth + 0.5 * active_fraction(cell)
}

/// Generates a space fully determined by `spec`, with a unique optimum.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<(SearchSpace, SynthTruth), BenchError> {
    spec.validate()?;
    let ops = spec.op_names();
    let mut names = vec![INPUT_OP.to_string(), OUTPUT_OP.to_string()];
    names.extend(ops.iter().map(|(n, _)| n.clone()));
    let vocab = OpVocabulary::new(names).map_err(|e| BenchError::Spec(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = HashSet::with_capacity(spec.n_cells);
    let mut cells = Vec::with_capacity(spec.n_cells);
    let max_attempts = 100 * spec.n_cells;
    let mut attempts = 0;
    while cells.len() < spec.n_cells {
        attempts += 1;
        if attempts > max_attempts {
            return Err(BenchError::Spec(format!(
                "could not draw {} distinct cells with {} nodes",
                spec.n_cells, spec.n_nodes
            )));
        }
        let cell = random_cell(&mut rng, spec, &vocab);
        if seen.insert(cell.clone()) {
            cells.push(cell);
        }
    }

    let flops: Vec<f64> = cells
        .iter()
        .map(|c| {
            let op_cost: f64 = c.op_indices()[1..c.num_nodes() - 1].iter().map(|&op| ops[op - 2].1).sum();
            STEM_FLOPS + op_cost + TRAIL_FLOPS * c.num_edges() as f64
        })
        .collect();
    let flops_min = flops.iter().copied().fold(f64::INFINITY, f64::min);
    let flops_max = flops.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = (flops_max - flops_min).max(f64::MIN_POSITIVE);

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| BenchError::Spec(e.to_string()))?;
    let mut accuracy: Vec<f64> = cells
        .iter()
        .zip(&flops)
        .map(|(c, &f)| {
            let u = (f - flops_min) / range;
            let band = (-((u - spec.band_center) / spec.band_width).powi(2)).exp();
            let eps = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let acc = spec.base_accuracy + spec.flops_weight * band + spec.composition_weight * composition_score(c) + eps;
            acc.clamp(0.0, 1.0)
        })
        .collect();

    let best = accuracy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..accuracy.len()).filter(|&i| accuracy[i] >= best - OPTIMUM_EPSILON).collect();
    let winner = tied[0];
    if tied.len() > 1 || accuracy.iter().filter(|&&a| a == best).count() > 1 {
        if best + OPTIMUM_EPSILON <= 1.0 {
            accuracy[winner] = best + OPTIMUM_EPSILON;
        } else {
            for &i in &tied[1..] {
                accuracy[i] = (best - OPTIMUM_EPSILON).max(0.0);
            }
            accuracy[winner] = best;
        }
    }

    let entries: Vec<BenchmarkEntry> = cells
        .into_iter()
        .zip(flops)
        .zip(&accuracy)
        .enumerate()
        .map(|(i, ((cell, flops), &accuracy))| BenchmarkEntry { id: format!("c{i:05}"), cell, flops, accuracy })
        .collect();
    let truth = SynthTruth {
        flops_min,
        flops_max,
        band_center: spec.band_center,
        band_width: spec.band_width,
        base_accuracy: spec.base_accuracy,
        flops_weight: spec.flops_weight,
        composition_weight: spec.composition_weight,
        noise_sigma: spec.noise_sigma,
        optimum_id: entries[winner].id.clone(),
        optimum_accuracy: accuracy[winner],
    };
    let space = SearchSpace::new(vocab, spec.n_nodes, format!("synthetic-seed{}", spec.seed), entries)?;
    Ok((space, truth))
}
