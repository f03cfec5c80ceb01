//! Dense N-dimensional arrays with reverse-mode differentiation.
//!
//! Tensors are immutable after creation except for gradient accumulation.
//! Every op records its inputs on the produced tensor, so a value implicitly
//! carries the graph that made it; [`backward`] walks that graph once in
//! reverse topological order and accumulates gradients additively at
//! fan-out points.
//!
//! Feature maps use N×C×H×W layout throughout. The element type is chosen
//! once per program: `f64` for verification, `f32` for runs.

mod autodiff;
mod gradcheck;
mod ops;

pub use autodiff::backward;
pub use gradcheck::{grad_check, op_gradient_checks, GradCheckCase};
pub use ops::{
    bce_loss, conv2d, elementwise, l2_loss, maxpool2d, reduce_mean, reduce_sum, relu, sigmoid,
    upsample_bilinear, ElemKind,
};

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use num_traits::{Float, NumAssignOps};

use crate::error::{Error, Result};
use autodiff::Op;

/// Scalar element type of a tensor. Implemented for `f32` and `f64`.
pub trait Element:
    Float + NumAssignOps + Send + Sync + fmt::Debug + fmt::Display + 'static
{
}

impl Element for f32 {}
impl Element for f64 {}

/// Lossy conversion from `f64` into the active element type.
#[inline]
pub fn el<T: Element>(v: f64) -> T {
    T::from(v).expect("f64 convertible to element type")
}

#[inline]
pub(crate) fn to_f64<T: Element>(v: T) -> f64 {
    v.to_f64().expect("element type convertible to f64")
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

pub(crate) struct Inner<T: Element> {
    id: usize,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    op: Op<T>,
    // Set by the first backward() on this tensor; guards against a second
    // backward without a reset.
    backward_done: AtomicBool,
}

/// Dense N-dimensional array with an optional gradient slot.
///
/// Cloning is cheap (shared handle); two clones are the same tensor and
/// accumulate into the same gradient.
pub struct Tensor<T: Element> {
    pub(crate) inner: Arc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

fn check_shape<T: Element>(shape: &[usize], data: &[T]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Dim(format!(
            "tensor shape {shape:?} has a zero extent"
        )));
    }
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(Error::Dim(format!(
            "shape {:?} implies {} elements but buffer holds {}",
            shape,
            numel,
            data.len()
        )));
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Tensor<T> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {}",
            op.name()
        );
        let requires_grad = op.any_input_requires_grad();
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                op,
                backward_done: AtomicBool::new(false),
            }),
        }
    }

    fn new_leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Tensor<T> {
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                op: Op::Leaf,
                backward_done: AtomicBool::new(false),
            }),
        }
    }

    /// A constant leaf tensor (no gradient tracking).
    pub fn leaf(shape: &[usize], data: Vec<T>) -> Result<Tensor<T>> {
        check_shape(shape, &data)?;
        Ok(Self::new_leaf(shape.to_vec(), data, false))
    }

    /// A trainable leaf tensor; gradients accumulate into it on backward.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Tensor<T>> {
        check_shape(shape, &data)?;
        Ok(Self::new_leaf(shape.to_vec(), data, true))
    }

    /// Leaf tensor from `f64` values, converted to the element type.
    pub fn leaf_f64(shape: &[usize], data: &[f64]) -> Result<Tensor<T>> {
        Self::leaf(shape, data.iter().map(|&v| el(v)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Tensor<T> {
        let numel = shape.iter().product();
        Self::new_leaf(shape.to_vec(), vec![T::zero(); numel], false)
    }

    pub fn full(shape: &[usize], v: T) -> Tensor<T> {
        let numel = shape.iter().product();
        Self::new_leaf(shape.to_vec(), vec![v; numel], false)
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(v: T) -> Tensor<T> {
        Self::new_leaf(Vec::new(), vec![v], false)
    }

    pub fn id(&self) -> usize {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data[0])
    }

    /// A copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().unwrap().clone()
    }

    /// Drops the accumulated gradient and re-arms backward on this tensor.
    pub fn clear_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
        self.inner.backward_done.store(false, Ordering::Relaxed);
    }

    pub(crate) fn accum_grad(&self, contribution: &[T]) {
        debug_assert_eq!(contribution.len(), self.numel());
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += *ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Backpropagates from this scalar tensor; see [`backward`].
    pub fn backward(&self) -> Result<()> {
        backward(self)
    }

    pub fn relu(&self) -> Tensor<T> {
        ops::relu(self)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        ops::sigmoid(self)
    }

    pub fn sum(&self) -> Tensor<T> {
        ops::reduce_sum(self)
    }

    pub fn mean(&self) -> Tensor<T> {
        ops::reduce_mean(self)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        ops::elementwise(self, other, ElemKind::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        ops::elementwise(self, other, ElemKind::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        ops::elementwise(self, other, ElemKind::Mul)
    }
}
