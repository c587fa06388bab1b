//! Accuracy predictors over cell graphs: MLP, GCN, bidirectional GCN and the
//! trail-redirecting GCN.
//!
//! All four share the same skeleton: `layers` propagation steps of width
//! `hidden`, a masked mean-pool over real nodes and a single linear readout.
//! They differ only in which trail matrix mixes node features at each layer:
//!
//! | kind       | mixing matrix                                            |
//! |------------|----------------------------------------------------------|
//! | `Mlp`      | identity (nodes never exchange features)                 |
//! | `Gcn`      | `D⁻¹(A + I)`                                             |
//! | `BiGcn`    | average of forward and reverse normalized propagation    |
//! | `RatsGcn`  | `D⁻¹(A' + I)` with `A'` rewritten per layer, see below   |
//!
//! The redirecting module computes, from the layer input `X` and the original
//! adjacency `A`, an embedding `E = [XW_q | XW_k | XW_v | A]`, per-trail
//! offsets `σ(E W_off + b_off)` and strengths `σ(E W_str + b_str)`, and
//! returns `A' = clamp((A + offset) ⊙ strength, 0, 1)`.

mod batch;
mod model;
mod params;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;

pub use batch::CellBatch;
pub use model::{forward, forward_batch, rats_module, trail_weights};
pub use params::{LayerParams, ParamsRecord, PredictorParams, RatsParams, TensorRecord, PARAMS_FORMAT_VERSION};
pub use train::{pool_loss, predict_all, predict_cells, train_predictor, TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictorError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid predictor config: {0}")]
    Config(String),
    #[error("cell does not fit the predictor: {0}")]
    CellShape(String),
    #[error("training pool is empty")]
    EmptyPool,
    #[error("target accuracy {0} outside [0, 1]")]
    BadTarget(f64),
    #[error("params record: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictorKind {
    #[serde(rename = "MLP")]
    Mlp,
    #[serde(rename = "GCN")]
    Gcn,
    #[serde(rename = "BIGCN")]
    BiGcn,
    #[serde(rename = "RATSGCN")]
    RatsGcn,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 4] = [Self::Mlp, Self::Gcn, Self::BiGcn, Self::RatsGcn];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mlp => "MLP",
            Self::Gcn => "GCN",
            Self::BiGcn => "BIGCN",
            Self::RatsGcn => "RATSGCN",
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = PredictorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match norm.as_str() {
            "mlp" => Ok(Self::Mlp),
            "gcn" => Ok(Self::Gcn),
            "bigcn" => Ok(Self::BiGcn),
            "rats" | "ratsgcn" => Ok(Self::RatsGcn),
            _ => Err(PredictorError::Config(format!("unknown predictor kind {s:?}"))),
        }
    }
}

/// Architecture of a predictor. Node features are the one-hot operation
/// matrix plus one extra column marking padding nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub layers: usize,
    pub hidden: usize,
    pub vocab_size: usize,
    pub max_nodes: usize,
}

impl PredictorConfig {
    /// Three layers of width 32.
    pub fn new(kind: PredictorKind, vocab_size: usize, max_nodes: usize) -> Self {
        Self { kind, layers: 3, hidden: 32, vocab_size, max_nodes }
    }

    pub fn with_size(mut self, layers: usize, hidden: usize) -> Self {
        self.layers = layers;
        self.hidden = hidden;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.vocab_size + 1
    }

    /// Column of the padding marker in the node features.
    pub fn pad_column(&self) -> usize {
        self.vocab_size
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(PredictorError::Config("layers and hidden must be at least 1".into()));
        }
        if self.max_nodes < 2 || self.vocab_size < 2 {
            return Err(PredictorError::Config(format!(
                "max_nodes {} / vocab_size {} too small",
                self.max_nodes, self.vocab_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
