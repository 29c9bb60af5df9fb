use std::sync::Arc;

use super::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn index_select_tensor<T: Scalar>(x: &Tensor<T>, axis: usize, idx: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let d = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let xd = x.data();
    let mut out = Vec::with_capacity(outer * idx.len() * inner);
    for o in 0..outer {
        for &i in idx {
            assert!(i < d, "index {i} out of range for axis of extent {d}");
            let base = (o * d + i) * inner;
            out.extend_from_slice(&xd[base..base + inner]);
        }
    }
    let mut s = shape.to_vec();
    s[axis] = idx.len();
    Tensor::from_parts(out, s)
}

impl<T: Scalar> Var<T> {
    pub fn reshape(&self, shape: &[usize]) -> Var<T> {
        let y = self.value.reshaped(shape.to_vec());
        let orig = self.shape().to_vec();
        self.op(y, &[self], move |g| vec![Some(g.reshaped(orig))])
    }

    pub fn permute(&self, axes: &[usize]) -> Var<T> {
        let y = self.value.permute(axes);
        let mut inv = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        self.op(y, &[self], move |g| vec![Some(g.permute(&inv))])
    }

    pub fn transpose(&self, a: usize, b: usize) -> Var<T> {
        let mut axes: Vec<usize> = (0..self.rank()).collect();
        axes.swap(a, b);
        self.permute(&axes)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<T> {
        let y = self.value.narrow(axis, start, len);
        let shape = self.shape().to_vec();
        self.op(y, &[self], move |g| {
            let outer: usize = shape[..axis].iter().product();
            let d = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let mut out = vec![T::zero(); outer * d * inner];
            let gd = g.data();
            for o in 0..outer {
                let dst = (o * d + start) * inner;
                let src = o * len * inner;
                out[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
            }
            vec![Some(Tensor::from_parts(out, shape))]
        })
    }

    /// Gathers slices along `axis`; repeated indices accumulate gradient.
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Var<T> {
        let y = index_select_tensor(&self.value, axis, indices);
        let shape = self.shape().to_vec();
        let idx: Arc<[usize]> = indices.into();
        self.op(y, &[self], move |g| {
            let outer: usize = shape[..axis].iter().product();
            let d = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let mut out = vec![T::zero(); outer * d * inner];
            let gd = g.data();
            for o in 0..outer {
                for (j, &i) in idx.iter().enumerate() {
                    let dst = (o * d + i) * inner;
                    let src = (o * idx.len() + j) * inner;
                    for k in 0..inner {
                        out[dst + k] += gd[src + k];
                    }
                }
            }
            vec![Some(Tensor::from_parts(out, shape))]
        })
    }

    /// Repeats every slice along `axis` `times` times in place:
    /// `(a, b)` becomes `(a, a, .., b, b, ..)`.
    pub fn repeat_interleave(&self, axis: usize, times: usize) -> Var<T> {
        let idx: Vec<usize> = (0..self.dim(axis))
            .flat_map(|i| std::iter::repeat_n(i, times))
            .collect();
        self.index_select(axis, &idx)
    }

    /// Concatenation along `axis`.
    pub fn concat(parts: &[&Var<T>], axis: usize) -> Var<T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0].shape();
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let extents: Vec<usize> = parts
            .iter()
            .map(|p| {
                let s = p.shape();
                assert_eq!(s.len(), first.len(), "concat rank mismatch");
                for (i, (&a, &b)) in s.iter().zip(first).enumerate() {
                    assert!(i == axis || a == b, "concat shape mismatch {s:?} vs {first:?}");
                }
                s[axis]
            })
            .collect();
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                let src = &p.value.data()[o * e * inner..(o + 1) * e * inner];
                out.extend_from_slice(src);
            }
        }
        let mut shape = first.to_vec();
        shape[axis] = total;
        let y = Tensor::from_parts(out, shape);
        let need: Vec<bool> = parts.iter().map(|p| p.requires_grad).collect();
        parts[0].op(y, parts, move |g| {
            let mut start = 0;
            extents
                .iter()
                .zip(need)
                .map(|(&e, n)| {
                    let r = n.then(|| g.narrow(axis, start, e));
                    start += e;
                    r
                })
                .collect()
        })
    }
}
