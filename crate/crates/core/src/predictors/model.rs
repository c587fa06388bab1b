use crate::autodiff::{Tape, Tensor, Var};
use crate::cell::CellGraph;
use crate::scalar::Scalar;

use super::{CellBatch, PredictorError, PredictorKind, PredictorParams, RatsParams};

pub(crate) struct RatsVars {
    w_q: Var,
    w_k: Var,
    w_v: Var,
    w_off: Var,
    b_off: Var,
    w_str: Var,
    b_str: Var,
}

pub(crate) struct LayerVars {
    w: Var,
    w_rev: Option<Var>,
    rats: Option<RatsVars>,
}

pub(crate) struct ParamVars {
    layers: Vec<LayerVars>,
    readout_w: Var,
    readout_b: Var,
}

fn register_rats<T: Scalar>(tape: &mut Tape<T>, p: &RatsParams<T>) -> RatsVars {
    RatsVars {
        w_q: tape.param(p.w_q.clone()),
        w_k: tape.param(p.w_k.clone()),
        w_v: tape.param(p.w_v.clone()),
        w_off: tape.param(p.w_off.clone()),
        b_off: tape.param(p.b_off.clone()),
        w_str: tape.param(p.w_str.clone()),
        b_str: tape.param(p.b_str.clone()),
    }
}

/// Registers every tensor as a tape parameter, in [`PredictorParams::tensors`] order.
pub(crate) fn register<T: Scalar>(tape: &mut Tape<T>, params: &PredictorParams<T>) -> ParamVars {
    let layers = params
        .layers
        .iter()
        .map(|layer| LayerVars {
            w: tape.param(layer.w.clone()),
            w_rev: layer.w_rev.as_ref().map(|w| tape.param(w.clone())),
            rats: layer.rats.as_ref().map(|r| register_rats(tape, r)),
        })
        .collect();
    ParamVars {
        layers,
        readout_w: tape.param(params.readout_w.clone()),
        readout_b: tape.param(params.readout_b.clone()),
    }
}

/// `E·W` for `E = [XW_q | XW_k | XW_v | A]` and `W = [W_top; W_bot]`,
/// evaluated as `X·([W_q | W_k | W_v]·W_top) + A·W_bot`.
fn embed_project<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    adjacency: Var,
    qkv: Var,
    w: Var,
) -> Result<Var, PredictorError> {
    let split = tape.value(qkv).shape()[1];
    let rows = tape.value(w).shape()[0];
    let top = tape.slice_rows(w, 0, split)?;
    let bottom = tape.slice_rows(w, split, rows)?;
    let folded = tape.matmul(qkv, top)?;
    let from_x = tape.matmul(x, folded)?;
    let from_a = tape.matmul(adjacency, bottom)?;
    Ok(tape.add(from_x, from_a)?)
}

fn rats_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    adjacency: Var,
    pair_mask: Option<Var>,
    p: &RatsVars,
) -> Result<Var, PredictorError> {
    let qkv = tape.concat(&[p.w_q, p.w_k, p.w_v])?;
    let offset = embed_project(tape, x, adjacency, qkv, p.w_off)?;
    let offset = tape.add(offset, p.b_off)?;
    let offset = tape.sigmoid(offset)?;
    let strength = embed_project(tape, x, adjacency, qkv, p.w_str)?;
    let strength = tape.add(strength, p.b_str)?;
    let strength = tape.sigmoid(strength)?;
    let shifted = tape.add(adjacency, offset)?;
    let gated = tape.mul(shifted, strength)?;
    let out = tape.clamp01(gated)?;
    Ok(match pair_mask {
        Some(mask) => tape.mul(out, mask)?,
        None => out,
    })
}

/// Forward graph for a batch. Returns the `[B, 1]` predictions and, per
/// layer, the trail matrix used to mix node features (`None` for MLP).
pub(crate) fn build_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &PredictorParams<T>,
    vars: &ParamVars,
    batch: &CellBatch<T>,
) -> Result<(Var, Vec<Option<Var>>), PredictorError> {
    let kind = params.config.kind;
    let mut h = tape.constant(batch.features.clone());
    let (norm, norm_rev, adjacency, pair_mask) = match kind {
        PredictorKind::Mlp => (None, None, None, None),
        PredictorKind::Gcn => (Some(tape.constant(batch.norm_adjacency.clone())), None, None, None),
        PredictorKind::BiGcn => (
            Some(tape.constant(batch.norm_adjacency.clone())),
            Some(tape.constant(batch.norm_reverse.clone())),
            None,
            None,
        ),
        PredictorKind::RatsGcn => (
            None,
            None,
            Some(tape.constant(batch.adjacency.clone())),
            Some(tape.constant(batch.pair_mask.clone())),
        ),
    };
    let mut trails = Vec::with_capacity(vars.layers.len());
    for layer in &vars.layers {
        let hw = tape.matmul(h, layer.w)?;
        let (mixed, trail) = match kind {
            PredictorKind::Mlp => (hw, None),
            PredictorKind::Gcn => {
                let a = norm.unwrap();
                (tape.matmul(a, hw)?, Some(a))
            }
            PredictorKind::BiGcn => {
                let a = norm.unwrap();
                let fwd = tape.matmul(a, hw)?;
                let hw_rev = tape.matmul(h, layer.w_rev.expect("bigcn layer has reverse weights"))?;
                let bwd = tape.matmul(norm_rev.unwrap(), hw_rev)?;
                let sum = tape.add(fwd, bwd)?;
                (tape.scale(sum, T::of(0.5))?, Some(a))
            }
            PredictorKind::RatsGcn => {
                let rats = layer.rats.as_ref().expect("rats layer has module weights");
                let redirected = rats_on_tape(tape, h, adjacency.unwrap(), pair_mask, rats)?;
                let a = tape.row_normalize(redirected)?;
                (tape.matmul(a, hw)?, Some(redirected))
            }
        };
        h = tape.relu(mixed)?;
        trails.push(trail);
    }
    let pooled = tape.mean_nodes(h, Some(&batch.node_mask))?;
    let out = tape.matmul(pooled, vars.readout_w)?;
    let out = tape.add(out, vars.readout_b)?;
    Ok((out, trails))
}

/// Rewrites an adjacency matrix with one redirecting module.
///
/// `x` is `[n, f]` (or `[B, n, f]`), `adjacency` is `[n, n]` (or `[B, n, n]`);
/// the result has the adjacency's shape with every entry in `[0, 1]`.
pub fn rats_module<T: Scalar>(
    x: &Tensor<T>,
    adjacency: &Tensor<T>,
    params: &RatsParams<T>,
) -> Result<Tensor<T>, PredictorError> {
    let mut tape = Tape::new();
    let vars = register_rats(&mut tape, params);
    let xv = tape.constant(x.clone());
    let av = tape.constant(adjacency.clone());
    let out = rats_on_tape(&mut tape, xv, av, None, &vars)?;
    Ok(tape.value(out).clone())
}

/// Predicted score for each cell, in order.
pub fn forward_batch<T: Scalar>(
    params: &PredictorParams<T>,
    cells: &[&CellGraph],
) -> Result<Vec<T>, PredictorError> {
    if cells.is_empty() {
        return Ok(Vec::new());
    }
    let batch = CellBatch::new(&params.config, cells)?;
    let mut tape = Tape::new();
    let vars = register(&mut tape, params);
    let (out, _) = build_forward(&mut tape, params, &vars, &batch)?;
    Ok(tape.value(out).data().to_vec())
}

pub fn forward<T: Scalar>(params: &PredictorParams<T>, cell: &CellGraph) -> Result<T, PredictorError> {
    Ok(forward_batch(params, &[cell])?[0])
}

/// Per-layer trail weights for one cell, cropped to its real nodes.
///
/// MLP reports full trails (every ordered pair of distinct nodes at weight 1),
/// GCN and BI-GCN the static 0/1 adjacency, RATs-GCN the redirected matrix of
/// each layer's module.
pub fn trail_weights<T: Scalar>(
    params: &PredictorParams<T>,
    cell: &CellGraph,
) -> Result<Vec<Tensor<T>>, PredictorError> {
    let m = cell.num_nodes();
    let layers = params.layers.len();
    match params.config.kind {
        PredictorKind::Mlp => {
            let data = (0..m * m).map(|k| if k / m == k % m { T::zero() } else { T::one() }).collect();
            let full = Tensor::new(vec![m, m], data)?;
            Ok(vec![full; layers])
        }
        PredictorKind::Gcn | PredictorKind::BiGcn => {
            let adj = Tensor::new(vec![m, m], cell.adjacency_as())?;
            Ok(vec![adj; layers])
        }
        PredictorKind::RatsGcn => {
            let batch = CellBatch::new(&params.config, &[cell])?;
            let mut tape = Tape::new();
            let vars = register(&mut tape, params);
            let (_, trails) = build_forward(&mut tape, params, &vars, &batch)?;
            let n = params.config.max_nodes;
            trails
                .into_iter()
                .map(|t| {
                    let full = tape.value(t.expect("rats layers expose trails")).data();
                    let data = (0..m).flat_map(|i| full[i * n..i * n + m].iter().copied()).collect();
                    Ok(Tensor::new(vec![m, m], data)?)
                })
                .collect()
        }
    }
}
