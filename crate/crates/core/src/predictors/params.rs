use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

use super::{PredictorConfig, PredictorError, PredictorKind};

pub const PARAMS_FORMAT_VERSION: u32 = 1;

/// Weights of one trail-redirecting module.
///
/// `w_off`/`w_str` map the `3·hidden + n` wide embedding of each node to one
/// row of per-trail offsets/strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct RatsParams<T> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_off: Tensor<T>,
    pub b_off: Tensor<T>,
    pub w_str: Tensor<T>,
    pub b_str: Tensor<T>,
}

impl<T: Scalar> RatsParams<T> {
    pub fn init(rng: &mut impl Rng, in_dim: usize, hidden: usize, nodes: usize) -> Self {
        let embed = 3 * hidden + nodes;
        Self {
            w_q: glorot(rng, in_dim, hidden),
            w_k: glorot(rng, in_dim, hidden),
            w_v: glorot(rng, in_dim, hidden),
            w_off: glorot(rng, embed, nodes),
            b_off: Tensor::zeros(&[nodes]),
            w_str: glorot(rng, embed, nodes),
            b_str: Tensor::zeros(&[nodes]),
        }
    }

    /// Saturates both gates: offsets ≈ 0 and strengths ≈ 1, so the module
    /// returns the original adjacency.
    pub fn set_gcn_extreme(&mut self) {
        self.w_off.fill(T::zero());
        self.b_off.fill(T::of(-40.0));
        self.w_str.fill(T::zero());
        self.b_str.fill(T::of(40.0));
    }

    /// Saturates the strength gate at ≈ 0, so every trail is removed.
    pub fn set_mlp_extreme(&mut self) {
        self.w_str.fill(T::zero());
        self.b_str.fill(T::of(-40.0));
    }

    fn tensors(&self) -> [&Tensor<T>; 7] {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_off, &self.b_off, &self.w_str, &self.b_str]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 7] {
        [
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_off,
            &mut self.b_off,
            &mut self.w_str,
            &mut self.b_str,
        ]
    }
}

const RATS_NAMES: [&str; 7] = ["w_q", "w_k", "w_v", "w_off", "b_off", "w_str", "b_str"];

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub w: Tensor<T>,
    /// Reverse-direction weights (bidirectional GCN only).
    pub w_rev: Option<Tensor<T>>,
    /// Trail-redirecting module (RATs-GCN only).
    pub rats: Option<RatsParams<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams<T> {
    pub config: PredictorConfig,
    pub layers: Vec<LayerParams<T>>,
    pub readout_w: Tensor<T>,
    pub readout_b: Tensor<T>,
}

/// Uniform in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
fn glorot<T: Scalar>(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| T::of(rng.random_range(-a..=a))).collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}

impl<T: Scalar> PredictorParams<T> {
    /// Seeded Glorot-uniform weights, zero biases.
    pub fn init(config: &PredictorConfig, seed: u64) -> Result<Self, PredictorError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let layers = (0..config.layers)
            .map(|l| {
                let in_dim = if l == 0 { config.input_dim() } else { h };
                let w = glorot(&mut rng, in_dim, h);
                let w_rev = (config.kind == PredictorKind::BiGcn).then(|| glorot(&mut rng, in_dim, h));
                let rats = (config.kind == PredictorKind::RatsGcn)
                    .then(|| RatsParams::init(&mut rng, in_dim, h, config.max_nodes));
                LayerParams { w, w_rev, rats }
            })
            .collect();
        Ok(Self {
            config: *config,
            layers,
            readout_w: glorot(&mut rng, h, 1),
            readout_b: Tensor::zeros(&[1]),
        })
    }

    /// All tensors in a fixed order: per layer `w`, `w_rev`, RATs weights;
    /// then the readout weight and bias.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(&layer.w);
            out.extend(layer.w_rev.as_ref());
            if let Some(r) = &layer.rats {
                out.extend(r.tensors());
            }
        }
        out.push(&self.readout_w);
        out.push(&self.readout_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.w);
            out.extend(layer.w_rev.as_mut());
            if let Some(r) = &mut layer.rats {
                out.extend(r.tensors_mut());
            }
        }
        out.push(&mut self.readout_w);
        out.push(&mut self.readout_b);
        out
    }

    /// Names matching [`PredictorParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(format!("layers.{l}.w"));
            if layer.w_rev.is_some() {
                out.push(format!("layers.{l}.w_rev"));
            }
            if layer.rats.is_some() {
                out.extend(RATS_NAMES.iter().map(|n| format!("layers.{l}.rats.{n}")));
            }
        }
        out.push("readout.w".into());
        out.push("readout.b".into());
        out
    }

    /// Copy of `self` with every tensor replaced, in [`PredictorParams::tensors`] order.
    pub fn with_tensors(&self, tensors: &[Tensor<T>]) -> Result<Self, PredictorError> {
        let mut out = self.clone();
        let slots = out.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(PredictorError::Format(format!("expected {} tensors, got {}", slots.len(), tensors.len())));
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(PredictorError::Format(format!("expected shape {:?}, got {:?}", slot.shape(), t.shape())));
            }
            *slot = t.clone();
        }
        Ok(out)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_record(&self) -> ParamsRecord {
        ParamsRecord {
            format_version: PARAMS_FORMAT_VERSION,
            config: self.config,
            tensors: self
                .tensor_names()
                .into_iter()
                .zip(self.tensors())
                .map(|(name, t)| TensorRecord {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.data().iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds params from a record; names, order and shapes must match what
    /// [`PredictorParams::init`] produces for the record's config.
    pub fn from_record(record: &ParamsRecord) -> Result<Self, PredictorError> {
        if record.format_version != PARAMS_FORMAT_VERSION {
            return Err(PredictorError::Format(format!(
                "unsupported format_version {}",
                record.format_version
            )));
        }
        let mut params = Self::init(&record.config, 0)?;
        let names = params.tensor_names();
        if names.len() != record.tensors.len() {
            return Err(PredictorError::Format(format!(
                "expected {} tensors, found {}",
                names.len(),
                record.tensors.len()
            )));
        }
        for ((name, slot), rec) in names.iter().zip(params.tensors_mut()).zip(&record.tensors) {
            if *name != rec.name || slot.shape() != rec.shape.as_slice() {
                return Err(PredictorError::Format(format!(
                    "expected {name} {:?}, found {} {:?}",
                    slot.shape(),
                    rec.name,
                    rec.shape
                )));
            }
            *slot = Tensor::from_f64(rec.shape.clone(), &rec.data)?;
        }
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("params record serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PredictorError> {
        let record: ParamsRecord =
            serde_json::from_str(s).map_err(|e| PredictorError::Format(e.to_string()))?;
        Self::from_record(&record)
    }
}

/// On-disk layout of predictor weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub format_version: u32,
    pub config: PredictorConfig,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}
