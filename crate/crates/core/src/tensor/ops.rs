//! Forward operations and the raw matrix kernels.

use super::{Op, Result, Tensor, TensorError};
use crate::scalar::Scalar;

fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

// ── raw kernels ──────────────────────────────────────────────────────────
//
// `mm_nn` is the hot loop of the whole crate; the ikj order keeps the inner
// loop a stride-1 axpy, which vectorizes without reassociating any floating
// point reduction (results stay bit-deterministic).

/// out += A(m,k) · B(k,n)
pub(crate) fn mm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for l in 0..k {
            let a_il = a[i * k + l];
            let b_row = &b[l * n..(l + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_il * bv;
            }
        }
    }
}

/// out += A(m,k) · B(n,k)ᵀ
pub(crate) fn mm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc = acc + av * bv;
            }
            out[i * n + j] = out[i * n + j] + acc;
        }
    }
}

/// out += A(k,m)ᵀ · B(k,n)
pub(crate) fn mm_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for l in 0..k {
        let a_row = &a[l * m..(l + 1) * m];
        let b_row = &b[l * n..(l + 1) * n];
        for i in 0..m {
            let a_li = a_row[i];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_li * bv;
            }
        }
    }
}

/// Resolved shapes of a (possibly batched) matrix product.
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub lhs_batched: bool,
    pub rhs_batched: bool,
    pub out_shape: Vec<usize>,
}

pub(crate) fn matmul_dims(lhs: &[usize], rhs: &[usize]) -> Result<MatmulDims> {
    let bad = || {
        mismatch(
            "matmul",
            format!("cannot multiply shapes {lhs:?} and {rhs:?}"),
        )
    };
    if lhs.len() < 2 || lhs.len() > 3 || rhs.len() < 2 || rhs.len() > 3 {
        return Err(bad());
    }
    let (bl, m, kl) = match lhs {
        [m, k] => (1, *m, *k),
        [b, m, k] => (*b, *m, *k),
        _ => unreachable!(),
    };
    let (br, kr, n) = match rhs {
        [k, n] => (1, *k, *n),
        [b, k, n] => (*b, *k, *n),
        _ => unreachable!(),
    };
    if kl != kr {
        return Err(bad());
    }
    let batch = if bl == br || br == 1 {
        bl
    } else if bl == 1 {
        br
    } else {
        return Err(bad());
    };
    let out_shape = if lhs.len() == 2 && rhs.len() == 2 {
        vec![m, n]
    } else {
        vec![batch, m, n]
    };
    Ok(MatmulDims {
        batch,
        m,
        k: kl,
        n,
        lhs_batched: lhs.len() == 3 && bl > 1,
        rhs_batched: rhs.len() == 3 && br > 1,
        out_shape,
    })
}

// ── elementwise and structural ops ───────────────────────────────────────

impl<T: Scalar> Tensor<T> {
    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != rhs.shape() {
            return Err(mismatch(
                "add",
                format!("{:?} vs {:?}", self.shape(), rhs.shape()),
            ));
        }
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Add(self.clone(), rhs.clone()),
        ))
    }

    /// Multiplication by a constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&a| a * c).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Scale(self.clone(), c))
    }

    /// Matrix product with optional leading batch dimension; a missing or
    /// size-1 batch broadcasts against the other operand.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let dims = matmul_dims(self.shape(), rhs.shape())?;
        let MatmulDims {
            batch, m, k, n, ..
        } = dims;
        let mut data = vec![T::zero(); batch * m * n];
        for b in 0..batch {
            let a_off = if dims.lhs_batched { b * m * k } else { 0 };
            let b_off = if dims.rhs_batched { b * k * n } else { 0 };
            mm_nn(
                &self.data()[a_off..a_off + m * k],
                &rhs.data()[b_off..b_off + k * n],
                m,
                k,
                n,
                &mut data[b * m * n..(b + 1) * m * n],
            );
        }
        Ok(Tensor::from_op(
            dims.out_shape,
            data,
            Op::Matmul(self.clone(), rhs.clone()),
        ))
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        if self.rank() < 2 {
            return Err(mismatch(
                "transpose",
                format!("needs rank >= 2, got {:?}", self.shape()),
            ));
        }
        let shape = self.shape();
        let (rows, cols) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let batch = self.len() / (rows * cols);
        let mut data = vec![T::zero(); self.len()];
        for b in 0..batch {
            let src = &self.data()[b * rows * cols..(b + 1) * rows * cols];
            let dst = &mut data[b * rows * cols..(b + 1) * rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
        let mut out_shape = shape.to_vec();
        let last = out_shape.len() - 1;
        out_shape.swap(last - 1, last);
        Ok(Tensor::from_op(out_shape, data, Op::Transpose(self.clone())))
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(mismatch(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    pub fn relu(&self) -> Tensor<T> {
        let data = self
            .data()
            .iter()
            .map(|&a| if a > T::zero() { a } else { T::zero() })
            .collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Relu(self.clone()))
    }

    /// Adds a vector along the trailing dimension: `x[.., j] + b[j]`.
    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.last_dim();
        if bias.shape() != [n] {
            return Err(mismatch(
                "add_bias",
                format!("bias {:?} vs trailing dim {}", bias.shape(), n),
            ));
        }
        let b = bias.data();
        let data = self
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &v)| x + v))
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::AddBias(self.clone(), bias.clone()),
        ))
    }

    /// Concatenates along the last dimension; leading dimensions must agree.
    pub fn concat_last(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| mismatch("concat_last", "no inputs".into()))?;
        let lead = &first.shape()[..first.rank() - 1];
        let mut total_last = 0;
        for p in parts {
            if p.rank() == 0 || &p.shape()[..p.rank() - 1] != lead {
                return Err(mismatch(
                    "concat_last",
                    format!("{:?} vs {:?}", p.shape(), first.shape()),
                ));
            }
            total_last += p.last_dim();
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total_last);
        for r in 0..rows {
            for p in parts {
                let w = p.last_dim();
                data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut out_shape = lead.to_vec();
        out_shape.push(total_last);
        Ok(Tensor::from_op(
            out_shape,
            data,
            Op::ConcatLast(parts.iter().map(|p| (*p).clone()).collect()),
        ))
    }

    /// Mean over one axis; the axis disappears from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return Err(mismatch(
                "mean_axis",
                format!("axis {axis} out of range for {:?}", self.shape()),
            ));
        }
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let size = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let inv = T::one() / T::from_usize(size).unwrap();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..size {
                let src = &self.data()[(o * size + a) * inner..(o * size + a + 1) * inner];
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
        for d in data.iter_mut() {
            *d = *d * inv;
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        Ok(Tensor::from_op(
            out_shape,
            data,
            Op::MeanAxis(self.clone(), axis),
        ))
    }

    /// Spatial mean of an (H, W, C) tensor, yielding (C,).
    pub fn mean_pool_2d(&self) -> Result<Tensor<T>> {
        if self.rank() != 3 {
            return Err(mismatch(
                "mean_pool_2d",
                format!("needs (H, W, C), got {:?}", self.shape()),
            ));
        }
        let (h, w, c) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        self.reshape(&[h * w, c])?.mean_axis(0)
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let mut acc = T::zero();
        for &v in self.data() {
            acc = acc + v;
        }
        Tensor::from_op(Vec::new(), vec![acc], Op::SumAll(self.clone()))
    }

    /// Row-wise softmax over the trailing dimension, computed with
    /// max-subtraction so large logits cannot overflow.
    pub fn softmax_rows(&self) -> Tensor<T> {
        let n = self.last_dim();
        let mut data = Vec::with_capacity(self.len());
        for row in self.data().chunks(n.max(1)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            let start = data.len();
            for &v in row {
                let e = (v - max).exp();
                sum = sum + e;
                data.push(e);
            }
            let inv = T::one() / sum;
            for v in &mut data[start..] {
                *v = *v * inv;
            }
        }
        Tensor::from_op(self.shape().to_vec(), data, Op::SoftmaxRows(self.clone()))
    }

    /// Normalizes the trailing dimension to zero mean and unit variance
    /// (ε = 1e-5), then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.last_dim();
        if gain.shape() != [n] || bias.shape() != [n] {
            return Err(mismatch(
                "layer_norm",
                format!(
                    "gain {:?} / bias {:?} vs trailing dim {}",
                    gain.shape(),
                    bias.shape(),
                    n
                ),
            ));
        }
        let eps = T::from_config(super::autograd::LN_EPS);
        let inv_n = T::one() / T::from_usize(n).unwrap();
        let g = gain.data();
        let b = bias.data();
        let mut data = Vec::with_capacity(self.len());
        for row in self.data().chunks(n) {
            let mut mean = T::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean * inv_n;
            let mut var = T::zero();
            for &v in row {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_n;
            let inv_std = T::one() / (var + eps).sqrt();
            for (j, &v) in row.iter().enumerate() {
                data.push((v - mean) * inv_std * g[j] + b[j]);
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::LayerNorm {
                x: self.clone(),
                gain: gain.clone(),
                bias: bias.clone(),
            },
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    /// A rank-1 tensor is one row; a rank-2 tensor is a batch of rows.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor<T>> {
        let classes = self.last_dim();
        let rows = if classes == 0 { 0 } else { self.len() / classes };
        if self.rank() == 0 || self.rank() > 2 || classes < 2 || rows != targets.len() {
            return Err(mismatch(
                "cross_entropy",
                format!("logits {:?} vs {} targets", self.shape(), targets.len()),
            ));
        }
        for &t in targets {
            if t >= classes {
                return Err(TensorError::TargetOutOfRange { index: t, classes });
            }
        }
        let mut total = T::zero();
        for (row, &t) in self.data().chunks(classes).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for &v in row {
                sum = sum + (v - max).exp();
            }
            let lse = max + sum.ln();
            total = total + lse - row[t];
        }
        let mean = total / T::from_usize(targets.len()).unwrap();
        Ok(Tensor::from_op(
            Vec::new(),
            vec![mean],
            Op::CrossEntropy {
                logits: self.clone(),
                targets: targets.to_vec(),
            },
        ))
    }

    /// Affine map over the trailing dimension: `x · w (+ b)`.
    pub fn linear(&self, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        if self.rank() == 0 || w.rank() != 2 || self.last_dim() != w.shape()[0] {
            return Err(mismatch(
                "linear",
                format!("x {:?} vs w {:?}", self.shape(), w.shape()),
            ));
        }
        let in_dim = w.shape()[0];
        let out_dim = w.shape()[1];
        let rows = self.len() / in_dim;
        let flat = self.reshape(&[rows, in_dim])?;
        let mut y = flat.matmul(w)?;
        if let Some(b) = b {
            y = y.add_bias(b)?;
        }
        let mut out_shape = self.shape().to_vec();
        *out_shape.last_mut().unwrap() = out_dim;
        y.reshape(&out_shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.matmul(&eye).unwrap().data(), a.data());
    }

    #[test]
    fn matmul_hand_example() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn matmul_broadcasts_batch() {
        // (2,1,2) · (2,2) and (1,2) · (2,2,2)
        let a = t(&[2, 1, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = t(&[1, 2], &[1.0, 1.0]);
        let b = t(&[2, 2, 2], &[1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 2]);
        assert_eq!(c.data(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn softmax_rows_examples() {
        let x = t(&[3], &[0.0, 0.0, 0.0]);
        for &v in x.softmax_rows().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // large logits must not overflow
        let x = t(&[2], &[1000.0, 1000.0]);
        let y = x.softmax_rows();
        assert!((y.data()[0] - 0.5).abs() < 1e-15);
        assert!(y.all_finite());
        // e^0 / (e^0 + 3)
        let x = t(&[2], &[0.0, 3.0f64.ln()]);
        let y = x.softmax_rows();
        assert!((y.data()[0] - 0.25).abs() < 1e-15);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn relu_definition() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(x.relu().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = t(&[4], &[3.0, 3.0, 3.0, 3.0]);
        let gain = t(&[4], &[1.0; 4]);
        let bias = t(&[4], &[0.0; 4]);
        for &v in x.layer_norm(&gain, &bias).unwrap().data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn linear_identity() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let zero = t(&[3], &[0.0; 3]);
        let y = x.linear(&eye, Some(&zero)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn cross_entropy_analytic_values() {
        // peaked at target
        let mut logits = vec![0.0; 4];
        logits[2] = 30.0;
        let l = t(&[4], &logits).cross_entropy(&[2]).unwrap().item().unwrap();
        assert!(l < 1e-9, "{l}");
        // uniform over 8 and 5 classes
        let l8 = t(&[8], &[0.0; 8]).cross_entropy(&[3]).unwrap().item().unwrap();
        assert!((l8 - 8.0f64.ln()).abs() < 1e-12);
        let l5 = t(&[5], &[0.0; 5]).cross_entropy(&[0]).unwrap().item().unwrap();
        assert!((l5 - 5.0f64.ln()).abs() < 1e-12);
        // out-of-range target
        assert!(t(&[4], &[0.0; 4]).cross_entropy(&[4]).is_err());
    }

    #[test]
    fn cross_entropy_batched_is_row_mean() {
        let logits = t(&[2, 3], &[1.0, 2.0, 3.0, 0.5, 0.0, -0.5]);
        let batched = logits.cross_entropy(&[0, 2]).unwrap().item().unwrap();
        let r0 = t(&[3], &[1.0, 2.0, 3.0]).cross_entropy(&[0]).unwrap().item().unwrap();
        let r1 = t(&[3], &[0.5, 0.0, -0.5]).cross_entropy(&[2]).unwrap().item().unwrap();
        assert!((batched - (r0 + r1) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn structural_ops() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(x.transpose().unwrap().data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(x.mean_axis(0).unwrap().data(), &[2.5, 3.5, 4.5]);
        assert_eq!(x.mean_axis(1).unwrap().data(), &[2.0, 5.0]);
        assert_eq!(x.sum_all().item().unwrap(), 21.0);

        let a = t(&[2, 1], &[1.0, 2.0]);
        let b = t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = Tensor::concat_last(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);

        let grid = t(&[2, 2, 2], &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
        assert_eq!(grid.mean_pool_2d().unwrap().data(), &[2.5, 25.0]);
    }

    #[test]
    fn f32_instantiation_matches_f64() {
        let a32 = Tensor::<f32>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b32 = Tensor::<f32>::new(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c32 = a32.matmul(&b32).unwrap();
        assert_eq!(c32.data(), &[19.0f32, 22.0, 43.0, 50.0]);
        let s = Tensor::<f32>::new(&[2], vec![0.0, 0.0]).unwrap().softmax_rows();
        assert!((s.data()[0] - 0.5).abs() < 1e-7);
    }
}
