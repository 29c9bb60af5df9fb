use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type tag used when tensors are serialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

/// Floating point element of a [`Tensor`](crate::Tensor): `f32` or `f64`.
///
/// Everything numeric in this crate is written against this trait; the
/// only per-type code is the matrix-multiply kernel and byte conversion.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + bytemuck::Pod
    + 'static
{
    const DTYPE: DType;

    /// `c = alpha * a @ b + beta * c` on strided row/column layouts.
    ///
    /// # Safety
    /// The pointers must address every element reachable through the given
    /// dimensions and strides, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize fits in float")
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided operand description for [`gemm`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major `rows x cols`, optionally viewed transposed.
    pub fn row_major(data: &'a [T], cols: usize, transposed: bool) -> Self {
        if transposed {
            Self { data, rs: 1, cs: cols }
        } else {
            Self { data, rs: cols, cs: 1 }
        }
    }
}

/// Safe wrapper: `c (m x n, row-major) = alpha * a @ b + beta * c`.
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm output too small");
    if k > 0 {
        let last_a = (m - 1) * a.rs + (k - 1) * a.cs;
        let last_b = (k - 1) * b.rs + (n - 1) * b.cs;
        assert!(last_a < a.data.len(), "gemm lhs out of bounds");
        assert!(last_b < b.data.len(), "gemm rhs out of bounds");
    }
    if n <= 16 && m >= 8 && a.cs == 1 {
        if n <= 8 {
            small_n_dispatch::<T, 8>(m, k, n, alpha, a, b, beta, c);
        } else {
            small_n_dispatch::<T, 16>(m, k, n, alpha, a, b, beta, c);
        }
        return;
    }
    // SAFETY: extents checked above; `c` is a distinct mutable slice.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn small_n_dispatch<T: Scalar, const N: usize>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the required CPU feature was detected at runtime.
            unsafe { small_n_gemm_avx2::<T, N>(m, k, n, alpha, a, b, beta, c) };
            return;
        }
    }
    small_n_gemm::<T, N>(m, k, n, alpha, a, b, beta, c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn small_n_gemm_avx2<T: Scalar, const N: usize>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
) {
    small_n_gemm::<T, N>(m, k, n, alpha, a, b, beta, c);
}

/// Product for outputs at most `N` wide, where the packing overhead of a
/// blocked GEMM dominates. `a` must have unit column stride.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn small_n_gemm<T: Scalar, const N: usize>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
) {
    let mut panel = vec![[T::zero(); N]; k];
    for (kk, row) in panel.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate().take(n) {
            *v = b.data[kk * b.rs + j * b.cs];
        }
    }
    let mut acc = vec![[T::zero(); N]; m];
    let mut i = 0;
    while i + 4 <= m {
        let r0 = &a.data[i * a.rs..i * a.rs + k];
        let r1 = &a.data[(i + 1) * a.rs..(i + 1) * a.rs + k];
        let r2 = &a.data[(i + 2) * a.rs..(i + 2) * a.rs + k];
        let r3 = &a.data[(i + 3) * a.rs..(i + 3) * a.rs + k];
        let mut s = [[T::zero(); N]; 4];
        for ((((brow, &a0), &a1), &a2), &a3) in panel.iter().zip(r0).zip(r1).zip(r2).zip(r3) {
            for j in 0..N {
                s[0][j] += a0 * brow[j];
                s[1][j] += a1 * brow[j];
                s[2][j] += a2 * brow[j];
                s[3][j] += a3 * brow[j];
            }
        }
        acc[i..i + 4].copy_from_slice(&s);
        i += 4;
    }
    for (r, out) in acc.iter_mut().enumerate().skip(i) {
        let row = &a.data[r * a.rs..r * a.rs + k];
        for (&av, brow) in row.iter().zip(&panel) {
            for j in 0..N {
                out[j] += av * brow[j];
            }
        }
    }
    for (crow, s) in c.chunks_exact_mut(n).zip(&acc) {
        if beta == T::zero() {
            for j in 0..n {
                crow[j] = alpha * s[j];
            }
        } else {
            for j in 0..n {
                crow[j] = beta * crow[j] + alpha * s[j];
            }
        }
    }
}
