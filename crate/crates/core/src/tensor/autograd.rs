//! Reverse-mode differentiation over the recorded op graph.

use std::collections::{HashMap, HashSet};

use super::ops::{matmul_dims, mm_nt, mm_tn};
use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// ε used by layer normalization (forward and backward must agree).
pub(crate) const LN_EPS: f64 = 1e-5;

/// Provenance of a tensor produced by an operation. Parents are kept alive
/// by the enum, so the graph is exactly the set of reachable tensors.
pub(crate) enum Op<T: Scalar> {
    Add(Tensor<T>, Tensor<T>),
    Scale(Tensor<T>, T),
    Matmul(Tensor<T>, Tensor<T>),
    Transpose(Tensor<T>),
    Reshape(Tensor<T>),
    Relu(Tensor<T>),
    AddBias(Tensor<T>, Tensor<T>),
    ConcatLast(Vec<Tensor<T>>),
    MeanAxis(Tensor<T>, usize),
    SumAll(Tensor<T>),
    SoftmaxRows(Tensor<T>),
    LayerNorm {
        x: Tensor<T>,
        gain: Tensor<T>,
        bias: Tensor<T>,
    },
    CrossEntropy {
        logits: Tensor<T>,
        targets: Vec<usize>,
    },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn parents(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Add(a, b) | Op::Matmul(a, b) | Op::AddBias(a, b) => vec![a, b],
            Op::Scale(x, _)
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Relu(x)
            | Op::MeanAxis(x, _)
            | Op::SumAll(x)
            | Op::SoftmaxRows(x) => vec![x],
            Op::ConcatLast(parts) => parts.iter().collect(),
            Op::LayerNorm { x, gain, bias } => vec![x, gain, bias],
            Op::CrossEntropy { logits, .. } => vec![logits],
        }
    }
}

/// Gradients produced by [`Tensor::backward`], keyed by tensor identity.
pub struct GradStore<T: Scalar> {
    grads: HashMap<u64, Vec<T>>,
}

impl<T: Scalar> GradStore<T> {
    fn new() -> Self {
        GradStore {
            grads: HashMap::new(),
        }
    }

    fn entry(&mut self, t: &Tensor<T>) -> &mut Vec<T> {
        self.grads
            .entry(t.id())
            .or_insert_with(|| vec![T::zero(); t.len()])
    }

    fn take(&mut self, t: &Tensor<T>) -> Option<Vec<T>> {
        self.grads.remove(&t.id())
    }

    /// Gradient of the loss with respect to `t`, if `t` participated.
    pub fn grad(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.grads.get(&t.id()).map(|v| v.as_slice())
    }

    /// Gradient of the loss with respect to `t`; untouched tensors get zeros.
    pub fn grad_or_zero(&self, t: &Tensor<T>) -> Vec<T> {
        match self.grad(t) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); t.len()],
        }
    }
}

/// Post-order over the tracked interior nodes: inputs before consumers.
fn topo_order<T: Scalar>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !node.is_tracked() || node.op().is_none() || !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        for p in node.op().expect("checked above").parents() {
            if p.is_tracked() && p.op().is_some() && !visited.contains(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

impl<T: Scalar> Tensor<T> {
    /// Reverse-mode gradients of a scalar loss for every tracked leaf
    /// reachable from it. Each graph node is visited exactly once.
    pub fn backward(&self) -> Result<GradStore<T>> {
        if self.len() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        if !self.is_tracked() {
            return Err(TensorError::UntrackedLoss);
        }
        let mut store = GradStore::new();
        store.entry(self)[0] = T::one();
        let order = topo_order(self);
        for node in order.iter().rev() {
            let g = match store.take(node) {
                Some(g) => g,
                None => continue,
            };
            apply_rules(node, &g, &mut store);
        }
        Ok(store)
    }
}

fn apply_rules<T: Scalar>(node: &Tensor<T>, g: &[T], store: &mut GradStore<T>) {
    let op = node.op().expect("interior node");
    match op {
        Op::Add(a, b) => {
            for p in [a, b] {
                if p.is_tracked() {
                    accumulate(store.entry(p), g.iter().copied());
                }
            }
        }
        Op::Scale(x, c) => {
            if x.is_tracked() {
                accumulate(store.entry(x), g.iter().map(|&v| v * *c));
            }
        }
        Op::Matmul(a, b) => {
            let dims = matmul_dims(a.shape(), b.shape()).expect("validated in forward");
            let (m, k, n) = (dims.m, dims.k, dims.n);
            if a.is_tracked() {
                // dA = dC · Bᵀ, summed over broadcast batches
                let ga = store.entry(a);
                for bt in 0..dims.batch {
                    let g_off = bt * m * n;
                    let b_off = if dims.rhs_batched { bt * k * n } else { 0 };
                    let ga_off = if dims.lhs_batched { bt * m * k } else { 0 };
                    mm_nt(
                        &g[g_off..g_off + m * n],
                        &b.data()[b_off..b_off + k * n],
                        m,
                        n,
                        k,
                        &mut ga[ga_off..ga_off + m * k],
                    );
                }
            }
            if b.is_tracked() {
                // dB = Aᵀ · dC, summed over broadcast batches
                let gb = store.entry(b);
                for bt in 0..dims.batch {
                    let g_off = bt * m * n;
                    let a_off = if dims.lhs_batched { bt * m * k } else { 0 };
                    let gb_off = if dims.rhs_batched { bt * k * n } else { 0 };
                    mm_tn(
                        &a.data()[a_off..a_off + m * k],
                        &g[g_off..g_off + m * n],
                        k,
                        m,
                        n,
                        &mut gb[gb_off..gb_off + k * n],
                    );
                }
            }
        }
        Op::Transpose(x) => {
            if x.is_tracked() {
                let shape = node.shape();
                let (rows, cols) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let batch = node.len() / (rows * cols);
                let gx = store.entry(x);
                for bt in 0..batch {
                    let src = &g[bt * rows * cols..(bt + 1) * rows * cols];
                    let dst = &mut gx[bt * rows * cols..(bt + 1) * rows * cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            dst[c * rows + r] = dst[c * rows + r] + src[r * cols + c];
                        }
                    }
                }
            }
        }
        Op::Reshape(x) => {
            if x.is_tracked() {
                accumulate(store.entry(x), g.iter().copied());
            }
        }
        Op::Relu(x) => {
            if x.is_tracked() {
                let mask = x.data().iter().map(|&v| v > T::zero());
                accumulate(
                    store.entry(x),
                    g.iter()
                        .zip(mask)
                        .map(|(&gv, on)| if on { gv } else { T::zero() }),
                );
            }
        }
        Op::AddBias(x, bias) => {
            if x.is_tracked() {
                accumulate(store.entry(x), g.iter().copied());
            }
            if bias.is_tracked() {
                let n = bias.len();
                let gb = store.entry(bias);
                for row in g.chunks(n) {
                    for (o, &gv) in gb.iter_mut().zip(row) {
                        *o = *o + gv;
                    }
                }
            }
        }
        Op::ConcatLast(parts) => {
            let total: usize = parts.iter().map(|p| p.last_dim()).sum();
            let rows = node.len() / total;
            let mut offset = 0;
            for p in parts {
                let w = p.last_dim();
                if p.is_tracked() {
                    let gp = store.entry(p);
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + w];
                        let dst = &mut gp[r * w..(r + 1) * w];
                        for (o, &gv) in dst.iter_mut().zip(src) {
                            *o = *o + gv;
                        }
                    }
                }
                offset += w;
            }
        }
        Op::MeanAxis(x, axis) => {
            if x.is_tracked() {
                let shape = x.shape();
                let outer: usize = shape[..*axis].iter().product();
                let size = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let inv = T::one() / T::from_usize(size).unwrap();
                let gx = store.entry(x);
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for a in 0..size {
                        let dst = &mut gx[(o * size + a) * inner..(o * size + a + 1) * inner];
                        for (d, &gv) in dst.iter_mut().zip(src) {
                            *d = *d + gv * inv;
                        }
                    }
                }
            }
        }
        Op::SumAll(x) => {
            if x.is_tracked() {
                let gv = g[0];
                accumulate(store.entry(x), std::iter::repeat(gv).take(x.len()));
            }
        }
        Op::SoftmaxRows(x) => {
            if x.is_tracked() {
                let n = node.last_dim();
                let y = node.data();
                let gx = store.entry(x);
                for r in 0..y.len() / n {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let mut dot = T::zero();
                    for (&gv, &yv) in gr.iter().zip(yr) {
                        dot = dot + gv * yv;
                    }
                    let dst = &mut gx[r * n..(r + 1) * n];
                    for ((o, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *o = *o + (gv - dot) * yv;
                    }
                }
            }
        }
        Op::LayerNorm { x, gain, bias } => {
            layer_norm_backward(node, x, gain, bias, g, store);
        }
        Op::CrossEntropy { logits, targets } => {
            if logits.is_tracked() {
                let c = logits.last_dim();
                let rows = targets.len();
                let scale = g[0] / T::from_usize(rows).unwrap();
                let gl = store.entry(logits);
                for (r, &t) in targets.iter().enumerate() {
                    let row = &logits.data()[r * c..(r + 1) * c];
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut sum = T::zero();
                    for &v in row {
                        sum = sum + (v - max).exp();
                    }
                    let dst = &mut gl[r * c..(r + 1) * c];
                    for (j, (o, &v)) in dst.iter_mut().zip(row).enumerate() {
                        let mut p = (v - max).exp() / sum;
                        if j == t {
                            p = p - T::one();
                        }
                        *o = *o + scale * p;
                    }
                }
            }
        }
    }
}

fn layer_norm_backward<T: Scalar>(
    node: &Tensor<T>,
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    g: &[T],
    store: &mut GradStore<T>,
) {
    let n = node.last_dim();
    let rows = node.len() / n;
    let eps = T::from_config(LN_EPS);
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let gd = gain.data();

    // Row statistics are cheap to recompute, so nothing is saved forward.
    let mut gx_buf = if x.is_tracked() {
        Some(vec![T::zero(); x.len()])
    } else {
        None
    };
    let mut ggain = if gain.is_tracked() {
        Some(vec![T::zero(); n])
    } else {
        None
    };
    let mut gbias = if bias.is_tracked() {
        Some(vec![T::zero(); n])
    } else {
        None
    };

    for r in 0..rows {
        let xr = &x.data()[r * n..(r + 1) * n];
        let gr = &g[r * n..(r + 1) * n];
        let mut mean = T::zero();
        for &v in xr {
            mean = mean + v;
        }
        mean = mean * inv_n;
        let mut var = T::zero();
        for &v in xr {
            let d = v - mean;
            var = var + d * d;
        }
        var = var * inv_n;
        let inv_std = T::one() / (var + eps).sqrt();

        if let Some(gb) = gbias.as_mut() {
            for (o, &gv) in gb.iter_mut().zip(gr) {
                *o = *o + gv;
            }
        }
        if gx_buf.is_some() || ggain.is_some() {
            // x̂, dx̂ and the two row means the input gradient needs
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            let mut xhat = vec![T::zero(); n];
            let mut dxhat = vec![T::zero(); n];
            for j in 0..n {
                xhat[j] = (xr[j] - mean) * inv_std;
                dxhat[j] = gr[j] * gd[j];
                sum_dxhat = sum_dxhat + dxhat[j];
                sum_dxhat_xhat = sum_dxhat_xhat + dxhat[j] * xhat[j];
            }
            if let Some(gg) = ggain.as_mut() {
                for j in 0..n {
                    gg[j] = gg[j] + gr[j] * xhat[j];
                }
            }
            if let Some(gx) = gx_buf.as_mut() {
                let mean_dxhat = sum_dxhat * inv_n;
                let mean_dxhat_xhat = sum_dxhat_xhat * inv_n;
                let dst = &mut gx[r * n..(r + 1) * n];
                for j in 0..n {
                    dst[j] = inv_std * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                }
            }
        }
    }

    if let Some(buf) = gx_buf {
        accumulate(store.entry(x), buf.into_iter());
    }
    if let Some(buf) = ggain {
        accumulate(store.entry(gain), buf.into_iter());
    }
    if let Some(buf) = gbias {
        accumulate(store.entry(bias), buf.into_iter());
    }
}

fn accumulate<T: Scalar>(dst: &mut [T], src: impl Iterator<Item = T>) {
    for (o, v) in dst.iter_mut().zip(src) {
        *o = *o + v;
    }
}
