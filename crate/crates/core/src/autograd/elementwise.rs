use super::Var;
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

/// NumPy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let r = a.len().max(b.len());
    (0..r)
        .map(|i| {
            let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
            let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
            match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => panic!("cannot broadcast {a:?} with {b:?}"),
            }
        })
        .collect()
}

/// Strides of `shape` viewed inside `out_shape`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let r = out_shape.len();
    let st = strides(shape);
    (0..r)
        .map(|i| {
            if i + shape.len() < r {
                0
            } else {
                let j = i + shape.len() - r;
                if shape[j] == 1 {
                    0
                } else {
                    st[j]
                }
            }
        })
        .collect()
}

/// Visits `out_shape` row by row (last axis innermost), passing the offsets
/// of each operand at the start of the row.
fn for_each_row(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize),
) {
    let total = numel(out_shape);
    if total == 0 {
        return;
    }
    let r = out_shape.len();
    if r == 0 {
        f(0, 0, 0, 1, 0, 0);
        return;
    }
    let inner = out_shape[r - 1];
    let (ia, ib) = (sa[r - 1], sb[r - 1]);
    let outer = total / inner;
    let mut idx = vec![0usize; r - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    for row in 0..outer {
        f(row * inner, oa, ob, inner, ia, ib);
        for d in (0..r - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * idx[d];
            ob -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape());
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); numel(&out_shape)];
    for_each_row(&out_shape, &sa, &sb, |o, oa, ob, n, ia, ib| {
        let dst = &mut out[o..o + n];
        match (ia, ib) {
            (1, 1) => {
                for ((d, &x), &y) in dst.iter_mut().zip(&ad[oa..oa + n]).zip(&bd[ob..ob + n]) {
                    *d = f(x, y);
                }
            }
            (1, 0) => {
                let y = bd[ob];
                for (d, &x) in dst.iter_mut().zip(&ad[oa..oa + n]) {
                    *d = f(x, y);
                }
            }
            (0, 1) => {
                let x = ad[oa];
                for (d, &y) in dst.iter_mut().zip(&bd[ob..ob + n]) {
                    *d = f(x, y);
                }
            }
            _ => {
                for (k, d) in dst.iter_mut().enumerate() {
                    *d = f(ad[oa + k * ia], bd[ob + k * ib]);
                }
            }
        }
    });
    Tensor::from_parts(out, out_shape)
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn reduce_to_shape<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let out_shape = g.shape().to_vec();
    let st = broadcast_strides(shape, &out_shape);
    let unit = strides(&out_shape);
    let gd = g.data();
    let mut out = vec![T::zero(); numel(shape)];
    for_each_row(&out_shape, &unit, &st, |_, og, ot, n, ig, it| {
        if it == 0 {
            let mut s = T::zero();
            for k in 0..n {
                s += gd[og + k * ig];
            }
            out[ot] += s;
        } else {
            for k in 0..n {
                out[ot + k * it] += gd[og + k * ig];
            }
        }
    });
    Tensor::from_parts(out, shape.to_vec())
}

fn unary<T: Scalar>(
    x: &Var<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Var<T> {
    let y = x.value.map(f);
    let (xv, yv) = (x.value.clone(), y.clone());
    x.op(y, &[x], move |g| {
        let d: Vec<T> = g
            .data()
            .iter()
            .zip(xv.data().iter().zip(yv.data()))
            .map(|(&g, (&x, &y))| g * df(x, y))
            .collect();
        vec![Some(Tensor::from_parts(d, xv.shape().to_vec()))]
    })
}

impl<T: Scalar> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Var<T> {
        let y = broadcast_binary(&self.value, &other.value, |a, b| a + b);
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        let need = [self.requires_grad, other.requires_grad];
        self.op(y, &[self, other], move |g| {
            vec![
                need[0].then(|| reduce_to_shape(g, &sa)),
                need[1].then(|| reduce_to_shape(g, &sb)),
            ]
        })
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        let y = broadcast_binary(&self.value, &other.value, |a, b| a - b);
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        let need = [self.requires_grad, other.requires_grad];
        self.op(y, &[self, other], move |g| {
            vec![
                need[0].then(|| reduce_to_shape(g, &sa)),
                need[1].then(|| reduce_to_shape(&g.map(|v| -v), &sb)),
            ]
        })
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        let y = broadcast_binary(&self.value, &other.value, |a, b| a * b);
        let (av, bv) = (self.value.clone(), other.value.clone());
        let need = [self.requires_grad, other.requires_grad];
        self.op(y, &[self, other], move |g| {
            vec![
                need[0].then(|| reduce_to_shape(&broadcast_binary(g, &bv, |g, b| g * b), av.shape())),
                need[1].then(|| reduce_to_shape(&broadcast_binary(g, &av, |g, a| g * a), bv.shape())),
            ]
        })
    }

    pub fn div(&self, other: &Var<T>) -> Var<T> {
        let y = broadcast_binary(&self.value, &other.value, |a, b| a / b);
        let (bv, yv) = (other.value.clone(), y.clone());
        let sa = self.shape().to_vec();
        let need = [self.requires_grad, other.requires_grad];
        self.op(y, &[self, other], move |g| {
            let ga = broadcast_binary(g, &bv, |g, b| g / b);
            let gb = need[1].then(|| {
                // d(a/b)/db = -y/b
                let gy = ga.zip_map(&yv, |gb, y| -gb * y);
                reduce_to_shape(&gy, bv.shape())
            });
            vec![need[0].then(|| reduce_to_shape(&ga, &sa)), gb]
        })
    }

    pub fn add_scalar(&self, s: T) -> Var<T> {
        let y = self.value.map(|v| v + s);
        self.op(y, &[self], move |g| vec![Some(g.clone())])
    }

    pub fn mul_scalar(&self, s: T) -> Var<T> {
        let y = self.value.map(|v| v * s);
        self.op(y, &[self], move |g| vec![Some(g.map(|v| v * s))])
    }

    pub fn neg(&self) -> Var<T> {
        self.mul_scalar(-T::one())
    }

    pub fn exp(&self) -> Var<T> {
        unary(self, |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Var<T> {
        unary(self, |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn tanh(&self) -> Var<T> {
        unary(self, |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Var<T> {
        unary(self, sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn relu(&self) -> Var<T> {
        unary(
            self,
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// `x * sigmoid(x)` (a.k.a. swish).
    pub fn silu(&self) -> Var<T> {
        unary(
            self,
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    /// Absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&self) -> Var<T> {
        unary(
            self,
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn square(&self) -> Var<T> {
        unary(self, |x| x * x, |x, _| x + x)
    }

    pub fn sqrt(&self) -> Var<T> {
        unary(self, |x| x.sqrt(), |_, y| T::lit(0.5) / y)
    }

    /// `bound * tanh(x / bound)`: smooth symmetric clamp.
    pub fn soft_clamp(&self, bound: T) -> Var<T> {
        unary(
            self,
            move |x| bound * (x / bound).tanh(),
            move |_, y| {
                let t = y / bound;
                T::one() - t * t
            },
        )
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes_follow_numpy_rules() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[4]), vec![2, 3, 4]);
        assert_eq!(broadcast_shape(&[2, 1, 4], &[2, 3, 1]), vec![2, 3, 4]);
        assert_eq!(broadcast_shape(&[], &[5]), vec![5]);
    }

    #[test]
    fn reduce_inverts_broadcast_counts() {
        let g = Tensor::<f64>::ones(&[2, 3, 4]);
        let r = reduce_to_shape(&g, &[2, 1, 4]);
        assert_eq!(r.shape(), &[2, 1, 4]);
        assert!(r.data().iter().all(|&v| v == 3.0));
        let r = reduce_to_shape(&g, &[4]);
        assert!(r.data().iter().all(|&v| v == 6.0));
        let r = reduce_to_shape(&g, &[]);
        assert_eq!(r.item(), 24.0);
    }

    #[test]
    fn broadcast_binary_matches_manual_loop() {
        let a = Tensor::<f64>::from_vec((0..6).map(f64::from).collect(), &[2, 3, 1]).unwrap();
        let b = Tensor::<f64>::from_vec(vec![10.0, 20.0], &[1, 1, 2]).unwrap();
        let c = broadcast_binary(&a, &b, |x, y| x + y);
        assert_eq!(c.shape(), &[2, 3, 2]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..2 {
                    let want = (i * 3 + j) as f64 + [10.0, 20.0][k];
                    assert_eq!(c.at(&[i, j, k]), want);
                }
            }
        }
    }
}
