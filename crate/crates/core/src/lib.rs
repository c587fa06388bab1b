//! Predictor-based neural architecture search over tabular cell benchmarks.
//!
//! The crate bundles the pieces needed to run predictor-guided search end to
//! end without touching a GPU:
//!
//! - [`cell`]: node-labelled cell DAGs, operation vocabularies and adjacency
//!   normalization.
//! - [`autodiff`]: a small dense tensor engine with a reverse-mode tape and Adam.
//! - [`predictors`]: MLP, GCN, bidirectional GCN and the trail-redirecting
//!   GCN whose per-layer module rewrites the adjacency matrix.
//! - [`metrics`]: Spearman correlation, mean top-k accuracy, samples-to-optimum.
//! - [`search`]: FLOPs-interval focused sampling (P3S) and a random baseline.
//! - [`bench_io`]: the JSON Lines benchmark format and a synthetic benchmark
//!   generator.
//!
//! The numeric core is generic over [`Scalar`]; the aliases below pin it to
//! `f64`, which is what the experiments and the CLI use.

pub mod autodiff;
pub mod bench_io;
pub mod cell;
pub mod metrics;
pub mod predictors;
pub mod scalar;
pub mod search;

pub use bench_io::{BenchmarkEntry, SearchSpace};
pub use cell::{CellGraph, OpVocabulary};
pub use predictors::{PredictorConfig, PredictorKind, TrainConfig};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type AdamState = autodiff::AdamState<f64>;
pub type PredictorParams = predictors::PredictorParams<f64>;
pub type RatsParams = predictors::RatsParams<f64>;
pub type NeuralSurrogate = search::NeuralSurrogate<f64>;
pub type P3SState = search::P3SState<search::NeuralSurrogate<f64>>;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type PredictorParams32 = predictors::PredictorParams<f32>;
