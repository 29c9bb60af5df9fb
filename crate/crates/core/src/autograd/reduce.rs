use super::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn sum_axis_tensor<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let d = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let xd = x.data();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for k in 0..d {
            let src = &xd[(o * d + k) * inner..(o * d + k + 1) * inner];
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    let mut s = shape.to_vec();
    s[axis] = 1;
    Tensor::from_parts(out, s)
}

fn expand_axis<T: Scalar>(g: &Tensor<T>, shape: &[usize], axis: usize) -> Tensor<T> {
    let outer: usize = shape[..axis].iter().product();
    let d = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let gd = g.data();
    let mut out = Vec::with_capacity(outer * d * inner);
    for o in 0..outer {
        let src = &gd[o * inner..(o + 1) * inner];
        for _ in 0..d {
            out.extend_from_slice(src);
        }
    }
    Tensor::from_parts(out, shape.to_vec())
}

impl<T: Scalar> Var<T> {
    pub fn sum_all(&self) -> Var<T> {
        let y = Tensor::scalar(self.value.sum());
        let shape = self.shape().to_vec();
        self.op(y, &[self], move |g| vec![Some(Tensor::full(&shape, g.item()))])
    }

    pub fn mean_all(&self) -> Var<T> {
        let n = T::from_usize_lossy(self.value.numel().max(1));
        self.sum_all().mul_scalar(T::one() / n)
    }

    /// Sum over one axis; the axis is kept with extent 1 when `keepdim`.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Var<T> {
        let kept = sum_axis_tensor(&self.value, axis);
        let y = if keepdim {
            kept
        } else {
            let mut s = self.shape().to_vec();
            s.remove(axis);
            kept.reshaped(s)
        };
        let shape = self.shape().to_vec();
        self.op(y, &[self], move |g| {
            let mut ks = shape.clone();
            ks[axis] = 1;
            vec![Some(expand_axis(&g.reshaped(ks), &shape, axis))]
        })
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Var<T> {
        let n = T::from_usize_lossy(self.dim(axis).max(1));
        self.sum_axis(axis, keepdim).mul_scalar(T::one() / n)
    }
}
