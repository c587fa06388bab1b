//! Reverse-mode tape.
//!
//! Every primitive is recorded once, in execution order, together with its
//! output value. Parents always precede children, so backprop is a single
//! reverse sweep.

use crate::cell::normalize_adjacency;
use crate::scalar::Scalar;

use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param,
    MatMul,
    Add,
    Mul,
    Scale(T),
    Concat,
    Relu,
    Sigmoid,
    Clamp01,
    /// Weighted mean over the node axis; weights are laid out like the input
    /// without its last axis.
    MeanNodes(Vec<T>),
    Mse,
    Transpose,
    RowNormalize,
    /// Rows from the given start of a rank-2 input; the end follows from the
    /// output shape.
    SliceRows(usize),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Concat => "concat",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Clamp01 => "clamp01",
            Op::MeanNodes(_) => "mean_nodes",
            Op::Mse => "mse",
            Op::Transpose => "transpose",
            Op::RowNormalize => "row_normalize",
            Op::SliceRows(_) => "slice_rows",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    parents: Vec<usize>,
    value: Tensor<T>,
    /// Whether any parameter flows into this node.
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<usize>,
}

fn mismatch(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

/// Leading (batch) count and matrix dims of a rank-2 or rank-3 shape.
fn split_matrix(shape: &[usize]) -> Option<(Option<usize>, usize, usize)> {
    match *shape {
        [r, c] => Some((None, r, c)),
        [b, r, c] => Some((Some(b), r, c)),
        _ => None,
    }
}

// out[n×p] += a[n×m] · b[m×p]
fn gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, m: usize, p: usize) {
    for i in 0..n {
        let out_row = &mut out[i * p..(i + 1) * p];
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == T::zero() {
                continue;
            }
            let b_row = &b[k * p..(k + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

// out[n×m] += g[n×p] · b[m×p]ᵀ
fn gemm_nt<T: Scalar>(g: &[T], b: &[T], out: &mut [T], n: usize, m: usize, p: usize) {
    for i in 0..n {
        let g_row = &g[i * p..(i + 1) * p];
        for k in 0..m {
            let b_row = &b[k * p..(k + 1) * p];
            let mut acc = T::zero();
            for (&gv, &bv) in g_row.iter().zip(b_row) {
                acc += gv * bv;
            }
            out[i * m + k] += acc;
        }
    }
}

// out[m×p] += a[n×m]ᵀ · g[n×p]
fn gemm_tn<T: Scalar>(a: &[T], g: &[T], out: &mut [T], n: usize, m: usize, p: usize) {
    for i in 0..n {
        let g_row = &g[i * p..(i + 1) * p];
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == T::zero() {
                continue;
            }
            let out_row = &mut out[k * p..(k + 1) * p];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aik * gv;
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Tracked parameters, in registration order.
    pub fn params(&self) -> Vec<Var> {
        self.params.iter().map(|&i| Var(i)).collect()
    }

    /// Names of the recorded primitives, in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    /// Parent indices of a recorded node.
    pub fn parents(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].parents
    }

    fn push(&mut self, op: Op<T>, parents: Vec<usize>, value: Tensor<T>) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        debug_assert!(parents.iter().all(|&p| p < self.nodes.len()));
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node { op, parents, value, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op: Op::Constant, parents: Vec::new(), value, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op: Op::Param, parents: Vec::new(), value, needs_grad: true });
        let id = self.nodes.len() - 1;
        self.params.push(id);
        Var(id)
    }

    /// Matrix product over the last two axes. Rank-3 operands are batches;
    /// a rank-2 operand is shared across the batch of the other.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (Some((ab, n, m)), Some((bb, m2, p))) = (split_matrix(av.shape()), split_matrix(bv.shape())) else {
            return Err(mismatch("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        };
        if m != m2 {
            return Err(mismatch("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let batch = match (ab, bb) {
            (Some(x), Some(y)) if x != y => {
                return Err(mismatch("matmul", format!("batch {x} vs {y}")));
            }
            (Some(x), _) | (None, Some(x)) => Some(x),
            (None, None) => None,
        };
        let count = batch.unwrap_or(1);
        let mut out = vec![T::zero(); count * n * p];
        for bi in 0..count {
            let a_off = if ab.is_some() { bi * n * m } else { 0 };
            let b_off = if bb.is_some() { bi * m * p } else { 0 };
            gemm(
                &av.data()[a_off..a_off + n * m],
                &bv.data()[b_off..b_off + m * p],
                &mut out[bi * n * p..(bi + 1) * n * p],
                n,
                m,
                p,
            );
        }
        let shape = match batch {
            Some(bsz) => vec![bsz, n, p],
            None => vec![n, p],
        };
        self.push(Op::MatMul, vec![a.0, b.0], Tensor::from_parts(shape, out))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch(op, format!("{sa:?} with {sb:?}")));
        }
        Ok(())
    }

    /// Element-wise sum. `b` may have a trailing sub-shape of `a` (bias-style
    /// broadcast).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.broadcast_check("add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let bl = bv.len();
        let data = av.data().chunks(bl).flat_map(|c| c.iter().zip(bv.data()).map(|(&x, &y)| x + y)).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(Op::Add, vec![a.0, b.0], out)
    }

    /// Hadamard product, with the same broadcast rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.broadcast_check("mul", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let bl = bv.len();
        let data = av.data().chunks(bl).flat_map(|c| c.iter().zip(bv.data()).map(|(&x, &y)| x * y)).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(Op::Mul, vec![a.0, b.0], out)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| x * c);
        self.push(Op::Scale(c), vec![a.0], out)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(first) = parts.first() else {
            return Err(mismatch("concat", "no inputs".into()));
        };
        let lead = {
            let s = self.value(*first).shape();
            if s.is_empty() {
                return Err(mismatch("concat", "scalar input".into()));
            }
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(mismatch("concat", format!("{s:?} vs leading {lead:?}")));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let parents = parts.iter().map(|v| v.0).collect();
        self.push(Op::Concat, parents, Tensor::from_parts(shape, out))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(Op::Relu, vec![a.0], out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid, vec![a.0], out)
    }

    pub fn clamp01(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| x.max(T::zero()).min(T::one()));
        self.push(Op::Clamp01, vec![a.0], out)
    }

    /// Mean over the node axis (second to last). With a mask, only nodes with
    /// non-zero mask weight contribute; the mask has the input's shape minus
    /// its last axis.
    pub fn mean_nodes(&mut self, x: Var, mask: Option<&Tensor<T>>) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() < 2 {
            return Err(mismatch("mean_nodes", format!("{s:?}")));
        }
        let (n, h) = (s[s.len() - 2], s[s.len() - 1]);
        let groups: usize = s[..s.len() - 2].iter().product();
        let mut weights = match mask {
            Some(m) => {
                if m.shape() != &s[..s.len() - 1] {
                    return Err(mismatch("mean_nodes", format!("mask {:?} for {s:?}", m.shape())));
                }
                m.data().to_vec()
            }
            None => vec![T::one(); groups * n],
        };
        for g in weights.chunks_mut(n) {
            let total: T = g.iter().copied().sum();
            if total <= T::zero() {
                return Err(mismatch("mean_nodes", "mask selects no nodes".into()));
            }
            g.iter_mut().for_each(|w| *w /= total);
        }
        let mut out = vec![T::zero(); groups * h];
        for g in 0..groups {
            for i in 0..n {
                let w = weights[g * n + i];
                let row = &xv.data()[(g * n + i) * h..(g * n + i + 1) * h];
                for (o, &v) in out[g * h..(g + 1) * h].iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
        let mut shape = s[..s.len() - 2].to_vec();
        shape.push(h);
        self.push(Op::MeanNodes(weights), vec![x.0], Tensor::from_parts(shape, out))
    }

    /// Mean squared error; returns a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, AutodiffError> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if pv.shape() != tv.shape() || pv.is_empty() {
            return Err(mismatch("mse", format!("{:?} vs {:?}", pv.shape(), tv.shape())));
        }
        let sum: T = pv.data().iter().zip(tv.data()).map(|(&p, &t)| (p - t) * (p - t)).sum();
        let out = Tensor::scalar(sum / T::of(pv.len() as f64));
        self.push(Op::Mse, vec![pred.0, target.0], out)
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let Some((batch, r, c)) = split_matrix(av.shape()) else {
            return Err(mismatch("transpose", format!("{:?}", av.shape())));
        };
        let count = batch.unwrap_or(1);
        let mut out = vec![T::zero(); av.len()];
        for b in 0..count {
            let src = &av.data()[b * r * c..(b + 1) * r * c];
            let dst = &mut out[b * r * c..(b + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let shape = match batch {
            Some(b) => vec![b, c, r],
            None => vec![c, r],
        };
        self.push(Op::Transpose, vec![a.0], Tensor::from_parts(shape, out))
    }

    /// `D⁻¹(A + I)` over the last two (square) axes; entries must be ≥ 0.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let Some((batch, r, c)) = split_matrix(av.shape()) else {
            return Err(mismatch("row_normalize", format!("{:?}", av.shape())));
        };
        if r != c {
            return Err(mismatch("row_normalize", format!("non-square {:?}", av.shape())));
        }
        let mut out = Vec::with_capacity(av.len());
        for b in 0..batch.unwrap_or(1) {
            out.extend(normalize_adjacency(&av.data()[b * r * r..(b + 1) * r * r], r));
        }
        let out = Tensor::from_parts(av.shape().to_vec(), out);
        self.push(Op::RowNormalize, vec![a.0], out)
    }

    /// Rows `start..end` of a rank-2 value.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let [rows, cols] = *av.shape() else {
            return Err(mismatch("slice_rows", format!("{:?} is not rank 2", av.shape())));
        };
        if start >= end || end > rows {
            return Err(mismatch("slice_rows", format!("rows {start}..{end} of {rows}")));
        }
        let out = Tensor::from_parts(vec![end - start, cols], av.data()[start * cols..end * cols].to_vec());
        self.push(Op::SliceRows(start), vec![a.0], out)
    }

    /// Adjoint contributions of node `id` to its parents. Parents that do not
    /// need gradients may receive an empty vector.
    fn adjoint(&self, id: usize, g: &[T]) -> Vec<Vec<T>> {
        let node = &self.nodes[id];
        let out = node.value.data();
        let pval = |k: usize| &self.nodes[node.parents[k]].value;
        match &node.op {
            Op::Constant | Op::Param => Vec::new(),
            Op::MatMul => {
                let (a, b) = (pval(0), pval(1));
                let (ab, n, m) = split_matrix(a.shape()).unwrap();
                let (bb, _, p) = split_matrix(b.shape()).unwrap();
                let count = ab.or(bb).unwrap_or(1);
                let want = |k: usize| self.nodes[node.parents[k]].needs_grad;
                let (want_a, want_b) = (want(0), want(1));
                let mut ga = if want_a { vec![T::zero(); a.len()] } else { Vec::new() };
                let mut gb = if want_b { vec![T::zero(); b.len()] } else { Vec::new() };
                for bi in 0..count {
                    let a_off = if ab.is_some() { bi * n * m } else { 0 };
                    let b_off = if bb.is_some() { bi * m * p } else { 0 };
                    let gs = &g[bi * n * p..(bi + 1) * n * p];
                    if want_a {
                        gemm_nt(gs, &b.data()[b_off..b_off + m * p], &mut ga[a_off..a_off + n * m], n, m, p);
                    }
                    if want_b {
                        gemm_tn(&a.data()[a_off..a_off + n * m], gs, &mut gb[b_off..b_off + m * p], n, m, p);
                    }
                }
                vec![ga, gb]
            }
            Op::Add => {
                let bl = pval(1).len();
                let mut gb = vec![T::zero(); bl];
                for chunk in g.chunks(bl) {
                    gb.iter_mut().zip(chunk).for_each(|(acc, &gv)| *acc += gv);
                }
                vec![g.to_vec(), gb]
            }
            Op::Mul => {
                let (a, b) = (pval(0), pval(1));
                let bl = b.len();
                let ga = g.chunks(bl).flat_map(|c| c.iter().zip(b.data()).map(|(&gv, &bv)| gv * bv)).collect();
                let mut gb = vec![T::zero(); bl];
                for (gc, ac) in g.chunks(bl).zip(a.data().chunks(bl)) {
                    for ((acc, &gv), &av) in gb.iter_mut().zip(gc).zip(ac) {
                        *acc += gv * av;
                    }
                }
                vec![ga, gb]
            }
            Op::Scale(c) => vec![g.iter().map(|&gv| gv * *c).collect()],
            Op::Concat => {
                let widths: Vec<usize> = (0..node.parents.len())
                    .map(|k| *pval(k).shape().last().unwrap())
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut grads: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(rows * w)).collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for (k, &w) in widths.iter().enumerate() {
                        grads[k].extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                grads
            }
            Op::Relu => {
                let x = pval(0).data();
                vec![g.iter().zip(x).map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() }).collect()]
            }
            Op::Sigmoid => vec![g.iter().zip(out).map(|(&gv, &s)| gv * s * (T::one() - s)).collect()],
            Op::Clamp01 => {
                let x = pval(0).data();
                vec![g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > T::zero() && xv < T::one() { gv } else { T::zero() })
                    .collect()]
            }
            Op::MeanNodes(weights) => {
                let x = pval(0);
                let h = *x.shape().last().unwrap();
                let mut gx = vec![T::zero(); x.len()];
                let n = x.shape()[x.rank() - 2];
                for (row, &w) in weights.iter().enumerate() {
                    let grp = row / n;
                    for j in 0..h {
                        gx[row * h + j] = w * g[grp * h + j];
                    }
                }
                vec![gx]
            }
            Op::Mse => {
                let (p, t) = (pval(0), pval(1));
                let scale = T::of(2.0) * g[0] / T::of(p.len() as f64);
                let gp: Vec<T> = p.data().iter().zip(t.data()).map(|(&pv, &tv)| scale * (pv - tv)).collect();
                let gt = gp.iter().map(|&v| -v).collect();
                vec![gp, gt]
            }
            Op::Transpose => {
                // transpose of the gradient, using the output's layout
                let (batch, r, c) = split_matrix(node.value.shape()).unwrap();
                let mut ga = vec![T::zero(); g.len()];
                for b in 0..batch.unwrap_or(1) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[b * r * c + j * r + i] = g[b * r * c + i * c + j];
                        }
                    }
                }
                vec![ga]
            }
            Op::RowNormalize => {
                let a = pval(0);
                let (batch, n, _) = split_matrix(a.shape()).unwrap();
                let mut ga = vec![T::zero(); a.len()];
                for row in 0..batch.unwrap_or(1) * n {
                    let base = row * n;
                    let sum: T = a.data()[base..base + n].iter().copied().sum::<T>() + T::one();
                    let dot: T = (0..n).map(|j| g[base + j] * out[base + j]).sum();
                    for j in 0..n {
                        ga[base + j] = (g[base + j] - dot) / sum;
                    }
                }
                vec![ga]
            }
            Op::SliceRows(start) => {
                let a = pval(0);
                let cols = a.shape()[1];
                let mut ga = vec![T::zero(); a.len()];
                ga[start * cols..start * cols + g.len()].copy_from_slice(g);
                vec![ga]
            }
        }
    }
}

/// Gradients of one scalar output with respect to every recorded node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; zeros when `v` does not influence the output or no
    /// parameter flows into it.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(self.shapes[v.0].clone(), g.clone()),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Gradients of all tracked parameters, in registration order.
    pub fn params(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|&i| self.wrt(Var(i))).collect()
    }
}

/// Reverse sweep from a scalar output.
pub fn backprop<T: Scalar>(tape: &Tape<T>, output: Var) -> Result<Gradients<T>, AutodiffError> {
    let out = tape.value(output);
    if out.len() != 1 {
        return Err(AutodiffError::NotScalar { shape: out.shape().to_vec() });
    }
    let mut grads: Vec<Option<Vec<T>>> = vec![None; tape.nodes.len()];
    grads[output.0] = Some(vec![T::one()]);
    for id in (0..=output.0).rev() {
        let Some(g) = grads[id].take() else { continue };
        if !tape.nodes[id].needs_grad {
            grads[id] = Some(g);
            continue;
        }
        for (parent, pg) in tape.nodes[id].parents.iter().zip(tape.adjoint(id, &g)) {
            if !tape.nodes[*parent].needs_grad {
                continue;
            }
            match &mut grads[*parent] {
                Some(acc) => acc.iter_mut().zip(pg).for_each(|(a, v)| *a += v),
                slot @ None => *slot = Some(pg),
            }
        }
        grads[id] = Some(g);
    }
    if grads.iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(AutodiffError::NonFinite { op: "backprop" });
    }
    Ok(Gradients {
        grads,
        shapes: tape.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        params: tape.params.clone(),
    })
}
