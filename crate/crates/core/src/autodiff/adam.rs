use std::borrow::BorrowMut;

use crate::scalar::Scalar;

use super::{AutodiffError, Tensor};

/// Adam moments and hyperparameters for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state with lr = 1e-3, β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self::with_lr(params, T::of(1e-3))
    }

    pub fn with_lr(params: &[Tensor<T>], lr: T) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
        }
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_update<T: Scalar, P: BorrowMut<Tensor<T>>>(
    params: &mut [P],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<(), AutodiffError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "adam",
            detail: format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let p: &Tensor<T> = (*p).borrow_mut();
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam",
                detail: format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .borrow_mut()
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (T::one() - b1) * gv;
            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
