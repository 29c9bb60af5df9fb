use super::Var;
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// LU factorisation with partial pivoting of a row-major `n x n` matrix.
/// Returns the packed factors and the row permutation, or `None` when a
/// pivot is exactly zero.
fn lu<T: Scalar>(a: &[T], n: usize) -> Option<(Vec<T>, Vec<usize>)> {
    let mut m = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (p, pv) = (k..n)
            .map(|i| (i, m[i * n + k].abs()))
            .fold((k, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pv == T::zero() {
            return None;
        }
        if p != k {
            for j in 0..n {
                m.swap(k * n + j, p * n + j);
            }
            perm.swap(k, p);
        }
        let piv = m[k * n + k];
        for i in k + 1..n {
            let f = m[i * n + k] / piv;
            m[i * n + k] = f;
            for j in k + 1..n {
                let u = m[k * n + j];
                m[i * n + j] -= f * u;
            }
        }
    }
    Some((m, perm))
}

/// `log|det A|` of a square matrix; `-inf` when singular.
pub fn lu_logabsdet<T: Scalar>(a: &Tensor<T>) -> T {
    let n = a.dim(0);
    assert_eq!(a.shape(), &[n, n], "logabsdet needs a square matrix");
    match lu(a.data(), n) {
        Some((m, _)) => (0..n).map(|i| m[i * n + i].abs().ln()).sum(),
        None => T::neg_infinity(),
    }
}

/// Inverse of a square matrix, `None` when singular.
pub fn lu_inverse<T: Scalar>(a: &Tensor<T>) -> Option<Tensor<T>> {
    let n = a.dim(0);
    assert_eq!(a.shape(), &[n, n], "inverse needs a square matrix");
    let (m, perm) = lu(a.data(), n)?;
    let mut inv = vec![T::zero(); n * n];
    let mut col = vec![T::zero(); n];
    for c in 0..n {
        // solve L U x = P e_c
        for i in 0..n {
            col[i] = if perm[i] == c { T::one() } else { T::zero() };
        }
        for i in 0..n {
            let mut s = col[i];
            for j in 0..i {
                s -= m[i * n + j] * col[j];
            }
            col[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for j in i + 1..n {
                s -= m[i * n + j] * col[j];
            }
            col[i] = s / m[i * n + i];
        }
        for i in 0..n {
            inv[i * n + c] = col[i];
        }
    }
    Some(Tensor::from_parts(inv, vec![n, n]))
}

impl<T: Scalar> Var<T> {
    /// Matrix product over the last two axes.
    ///
    /// `other` is either 2-D (shared across all leading axes of `self`) or
    /// has exactly the same leading axes as `self`.
    pub fn matmul(&self, other: &Var<T>) -> Var<T> {
        let (a, b) = (&self.value, &other.value);
        let ar = a.rank();
        assert!(ar >= 2 && b.rank() >= 2, "matmul needs rank >= 2");
        let (m, k) = (a.dim(ar - 2), a.dim(ar - 1));
        let br = b.rank();
        let (k2, n) = (b.dim(br - 2), b.dim(br - 1));
        assert_eq!(k, k2, "matmul inner dims {:?} @ {:?}", a.shape(), b.shape());
        let need = [self.requires_grad, other.requires_grad];
        let mut out_shape = a.shape()[..ar - 2].to_vec();
        out_shape.extend([m, n]);

        if br == 2 {
            let rows = a.numel() / k.max(1);
            let mut out = vec![T::zero(); rows * n];
            gemm(
                rows,
                k,
                n,
                T::one(),
                MatRef::row_major(a.data(), k, false),
                MatRef::row_major(b.data(), n, false),
                T::zero(),
                &mut out,
            );
            let (av, bv) = (a.clone(), b.clone());
            return self.op(Tensor::from_parts(out, out_shape), &[self, other], move |g| {
                let ga = need[0].then(|| {
                    let mut d = vec![T::zero(); rows * k];
                    gemm(
                        rows,
                        n,
                        k,
                        T::one(),
                        MatRef::row_major(g.data(), n, false),
                        MatRef { data: bv.data(), rs: 1, cs: n },
                        T::zero(),
                        &mut d,
                    );
                    Tensor::from_parts(d, av.shape().to_vec())
                });
                let gb = need[1].then(|| {
                    let mut d = vec![T::zero(); k * n];
                    gemm(
                        k,
                        rows,
                        n,
                        T::one(),
                        MatRef { data: av.data(), rs: 1, cs: k },
                        MatRef::row_major(g.data(), n, false),
                        T::zero(),
                        &mut d,
                    );
                    Tensor::from_parts(d, bv.shape().to_vec())
                });
                vec![ga, gb]
            });
        }

        assert_eq!(
            &a.shape()[..ar - 2],
            &b.shape()[..br - 2],
            "batched matmul needs equal leading axes"
        );
        let batch: usize = a.shape()[..ar - 2].iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                T::one(),
                MatRef::row_major(&a.data()[i * m * k..], k, false),
                MatRef::row_major(&b.data()[i * k * n..], n, false),
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let (av, bv) = (a.clone(), b.clone());
        self.op(Tensor::from_parts(out, out_shape), &[self, other], move |g| {
            let gd = g.data();
            let ga = need[0].then(|| {
                let mut d = vec![T::zero(); batch * m * k];
                for i in 0..batch {
                    gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        MatRef::row_major(&gd[i * m * n..], n, false),
                        MatRef { data: &bv.data()[i * k * n..], rs: 1, cs: n },
                        T::zero(),
                        &mut d[i * m * k..(i + 1) * m * k],
                    );
                }
                Tensor::from_parts(d, av.shape().to_vec())
            });
            let gb = need[1].then(|| {
                let mut d = vec![T::zero(); batch * k * n];
                for i in 0..batch {
                    gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        MatRef { data: &av.data()[i * m * k..], rs: 1, cs: k },
                        MatRef::row_major(&gd[i * m * n..], n, false),
                        T::zero(),
                        &mut d[i * k * n..(i + 1) * k * n],
                    );
                }
                Tensor::from_parts(d, bv.shape().to_vec())
            });
            vec![ga, gb]
        })
    }

    /// `log|det W|` of a square matrix, differentiable (`d/dW = W^{-T}`).
    pub fn logabsdet(&self) -> Var<T> {
        let v = lu_logabsdet(&self.value);
        let w = self.value.clone();
        self.op(Tensor::scalar(v), &[self], move |g| {
            let inv = lu_inverse(&w).expect("logabsdet gradient of a singular matrix");
            let s = g.item();
            vec![Some(inv.permute(&[1, 0]).scale(s))]
        })
    }
}
