use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::shape::Shape;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a tensor allocation. Clones share the id (and the data), so a
/// gradient computed for a parameter can be looked up from any clone of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

fn fresh_id() -> TensorId {
    TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
}

/// Dense row-major tensor. Data is immutable after creation; "updates"
/// (e.g. optimizer steps) build a new tensor.
#[derive(Debug, Clone)]
pub struct Tensor<S: Scalar> {
    id: TensorId,
    shape: Shape,
    data: Arc<[S]>,
    requires_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: Shape, data: Vec<S>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Dimension(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor {
            id: fresh_id(),
            shape,
            data: data.into(),
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Tensor::from_vec(shape, vec![S::zero(); n]).unwrap()
    }

    pub fn full(shape: Shape, value: S) -> Self {
        let n = shape.numel();
        Tensor::from_vec(shape, vec![value; n]).unwrap()
    }

    pub fn ones(shape: Shape) -> Self {
        Tensor::full(shape, S::one())
    }

    pub fn scalar(value: S) -> Self {
        Tensor::from_vec(Shape::new(vec![1]).unwrap(), vec![value]).unwrap()
    }

    /// Values from a truncated normal (±2σ) with the given std.
    pub fn truncated_normal(shape: Shape, std: f64, rng: &mut Rng) -> Self {
        let n = shape.numel();
        let data: Vec<S> = (0..n)
            .map(|_| S::from_f64(rng.truncated_normal(std)))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Uniform values in [lo, hi); used by tests and gradient checks.
    pub fn rand_uniform(shape: Shape, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let n = shape.numel();
        let data: Vec<S> = (0..n).map(|_| S::from_f64(rng.uniform(lo, hi))).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    pub fn id(&self) -> TensorId {
        self.id
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.data.to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Mark as a gradient target (parameters, and inputs under a gradient
    /// check). Keeps the identity: clones made before or after see the same id.
    pub fn with_requires_grad(mut self, requires: bool) -> Self {
        self.requires_grad = requires;
        self
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Element accessor for 4-D tensors (b, h, w, c); test convenience.
    pub fn at4(&self, b: usize, h: usize, w: usize, c: usize) -> S {
        let d = self.shape.dims();
        debug_assert_eq!(d.len(), 4);
        self.data[((b * d[1] + h) * d[2] + w) * d[3] + c]
    }

    /// Element accessor for 2-D tensors (row, col); test convenience.
    pub fn at2(&self, r: usize, c: usize) -> S {
        let d = self.shape.dims();
        debug_assert_eq!(d.len(), 2);
        self.data[r * d[1] + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same values under a fresh identity with a new shape of equal size.
    /// This is the *untracked* reshape; `ops::reshape` records the gradient.
    pub fn reshaped(&self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.numel() {
            return Err(Error::Dimension(format!(
                "cannot reshape {} to {}",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            id: fresh_id(),
            shape,
            data: Arc::clone(&self.data),
            requires_grad: self.requires_grad,
        })
    }

    /// Exact (bitwise) equality of shape and data.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape;

    type T = Tensor<f32>;

    #[test]
    fn from_vec_checks_length() {
        assert!(T::from_vec(shape![2, 2], vec![1.0, 2.0, 3.0]).is_err());
        assert!(T::from_vec(shape![2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn clones_share_identity_and_data() {
        let t = T::from_vec(shape![3], vec![1.0, 2.0, 3.0]).unwrap();
        let c = t.clone();
        assert_eq!(t.id(), c.id());
        assert!(t.bitwise_eq(&c));
    }

    #[test]
    fn distinct_tensors_have_distinct_ids() {
        let a = T::zeros(shape![2]);
        let b = T::zeros(shape![2]);
        assert_ne!(a.id(), b.id());
    }

    #[test]
    fn reshape_preserves_data_checks_numel() {
        let t = T::from_vec(shape![2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let r = t.reshaped(shape![3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(shape![4, 2]).is_err());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = T::truncated_normal(shape![4, 4], 0.02, &mut Rng::new(11));
        let b = T::truncated_normal(shape![4, 4], 0.02, &mut Rng::new(11));
        assert!(a.bitwise_eq(&b));
    }
}
