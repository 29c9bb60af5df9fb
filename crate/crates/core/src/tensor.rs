use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Dense row-major n-dimensional array with copy-on-write storage.
///
/// Cloning is cheap (the buffer is shared); mutation through
/// [`Tensor::data_mut`] copies only when the buffer is aliased.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.data.len();
        if n <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, &self.data[..])
        } else {
            write!(f, "Tensor{:?} [{:?}, ...; {n}]", self.shape, &self.data[..8])
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(CoreError::Shape(format!(
                "buffer of {} elements does not fit shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    /// Like [`Tensor::from_vec`] but panics on a size mismatch; for internal
    /// kernels whose output sizes are computed from the shape itself.
    pub(crate) fn from_parts(data: Vec<T>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "shape {shape:?}");
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_parts(vec![value; numel(shape)], shape.to_vec())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![value], vec![])
    }

    pub fn eye(n: usize) -> Self {
        let mut d = vec![T::zero(); n * n];
        for i in 0..n {
            d[i * n + i] = T::one();
        }
        Self::from_parts(d, vec![n, n])
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * std)
            })
            .collect();
        Self::from_parts(data, shape.to_vec())
    }

    /// Uniform entries on `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        Self::from_parts(data, shape.to_vec())
    }

    pub fn from_f64_slice(values: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(values.iter().map(|&v| T::lit(v)).collect(), shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|a| (*a).clone())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Element access by multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let st = strides(&self.shape);
        let off: usize = index
            .iter()
            .zip(&self.shape)
            .zip(&st)
            .map(|((&i, &d), &s)| {
                assert!(i < d, "index {i} out of range {d}");
                i * s
            })
            .sum();
        self.data[off]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(CoreError::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub(crate) fn reshaped(&self, shape: Vec<usize>) -> Self {
        assert_eq!(numel(&shape), self.numel(), "reshape {:?} -> {:?}", self.shape, shape);
        Self {
            shape,
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.data.iter().map(|&v| f(v)).collect(), self.shape.clone())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Self::from_parts(
            self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect(),
            self.shape.clone(),
        )
    }

    /// In-place `self += other` (same shape).
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data_mut().iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize_lossy(self.numel().max(1))
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Materialised axis permutation.
    pub fn permute(&self, axes: &[usize]) -> Self {
        assert_eq!(axes.len(), self.rank(), "permute rank");
        let in_st = strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_st: Vec<usize> = axes.iter().map(|&a| in_st[a]).collect();
        let mut out = Vec::with_capacity(self.numel());
        if self.numel() > 0 {
            let r = out_shape.len();
            let mut idx = vec![0usize; r];
            let mut off = 0usize;
            loop {
                out.push(self.data[off]);
                // odometer increment
                let mut d = r;
                loop {
                    if d == 0 {
                        return Self::from_parts(out, out_shape);
                    }
                    d -= 1;
                    idx[d] += 1;
                    off += src_st[d];
                    if idx[d] < out_shape[d] {
                        break;
                    }
                    off -= src_st[d] * idx[d];
                    idx[d] = 0;
                }
            }
        }
        Self::from_parts(out, out_shape)
    }

    /// Contiguous sub-range along one axis.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        let d = self.shape[axis];
        assert!(start + len <= d, "narrow {start}+{len} exceeds {d}");
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * d * inner + start * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Self::from_parts(out, shape)
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            self.shape.clone(),
        )
    }
}
