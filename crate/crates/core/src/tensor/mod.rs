//! Dense row-major tensors with reverse-mode gradient tracking.
//!
//! A [`Tensor`] is an immutable value. Operations on tensors that descend
//! from a tracked leaf (see [`Tensor::var`]) record their provenance, and
//! [`Tensor::backward`] replays the recorded graph in reverse to produce
//! exact gradients for every tracked leaf. Operations whose inputs are all
//! untracked skip the recording entirely, so inference pays nothing for the
//! machinery.
//!
//! The op surface is deliberately small: exactly what the attention blocks,
//! feed-forward layers and losses need, plus a finite-difference checker
//! ([`grad_check`]) to keep the analytic gradients honest.

mod autograd;
mod gradcheck;
mod ops;
mod params;

pub use autograd::GradStore;
pub use gradcheck::grad_check;
pub use params::ParamSet;

pub(crate) use autograd::Op;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("data length {len} does not match shape {shape:?}")]
    BadData { len: usize, shape: Vec<usize> },
    #[error("cross-entropy target {index} out of range for {classes} classes")]
    TargetOutOfRange { index: usize, classes: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward requires a loss computed from tracked tensors")]
    UntrackedLoss,
}

pub type Result<V> = std::result::Result<V, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    op: Option<Op<T>>,
    tracked: bool,
}

/// Dense N-dimensional array of [`Scalar`]s, cheap to clone (shared storage).
pub struct Tensor<T: Scalar> {
    inner: Arc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("tracked", &self.is_tracked())
            .field("data", &self.data())
            .finish()
    }
}

fn check_len<T>(shape: &[usize], data: &[T]) -> Result<()> {
    let want: usize = shape.iter().product();
    if data.len() != want {
        return Err(TensorError::BadData {
            len: data.len(),
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, op: Option<Op<T>>, tracked: bool) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                op,
                tracked,
            }),
        }
    }

    /// Untracked leaf (plain data: inputs, constants, knowledge maps).
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_len(shape, &data)?;
        Ok(Self::build(shape.to_vec(), data, None, false))
    }

    /// Tracked leaf: a parameter that `backward` will produce a gradient for.
    pub fn var(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_len(shape, &data)?;
        Ok(Self::build(shape.to_vec(), data, None, true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self::build(shape.to_vec(), vec![T::zero(); len], None, false)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let len = shape.iter().product();
        Self::build(shape.to_vec(), vec![v; len], None, false)
    }

    pub fn scalar(v: T) -> Self {
        Self::build(Vec::new(), vec![v], None, false)
    }

    /// Result of an op. Provenance is kept only when some input is tracked.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let tracked = op.parents().iter().any(|p| p.is_tracked());
        let op = if tracked { Some(op) } else { None };
        Self::build(shape, data, op, tracked)
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    pub(crate) fn op(&self) -> Option<&Op<T>> {
        self.inner.op.as_ref()
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn is_tracked(&self) -> bool {
        self.inner.tracked
    }

    /// Value of a scalar (rank-0 or single-element) tensor.
    pub fn item(&self) -> Result<T> {
        if self.len() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        Ok(self.inner.data[0])
    }

    /// Size of the trailing dimension; 1 for rank-0 tensors.
    pub(crate) fn last_dim(&self) -> usize {
        self.inner.shape.last().copied().unwrap_or(1)
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }
}
