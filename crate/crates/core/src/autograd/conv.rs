//! Convolution and pooling kernels on channel-last layouts.
//!
//! The volumetric kernel handles 1-D, 2-D and 3-D convolutions: 2-D inputs
//! `(N, H, W, C)` are viewed as `(N, 1, H, W, C)` and 1-D sequences
//! `(N, T, C)` as `(N, 1, T, 1, C)`.

use super::Var;
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Kernel extent, stride, zero padding and dilation per spatial axis
/// (depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub dilation: [usize; 3],
}

impl ConvGeometry {
    pub fn new(kernel: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> Self {
        Self {
            kernel,
            stride,
            pad,
            dilation: [1, 1, 1],
        }
    }

    /// Length-preserving 1-D convolution (odd kernel).
    pub fn same_1d(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel: [1, kernel, 1],
            stride: [1, 1, 1],
            pad: [0, dilation * (kernel - 1) / 2, 0],
            dilation: [1, dilation, 1],
        }
    }

    pub fn out_dim(&self, axis: usize, input: usize) -> usize {
        let span = self.dilation[axis] * (self.kernel[axis] - 1) + 1;
        let padded = input + 2 * self.pad[axis];
        assert!(padded >= span, "input extent {input} too small for kernel");
        (padded - span) / self.stride[axis] + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }
}

/// Square max-pooling window on the two spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PoolGeometry {
    pub fn out_dim(&self, input: usize) -> usize {
        (input + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

struct Dims {
    n: usize,
    ind: [usize; 3],
    outd: [usize; 3],
    cin: usize,
    cout: usize,
}

impl Dims {
    fn in_slice(&self) -> usize {
        self.ind[1] * self.ind[2] * self.cin
    }
    fn out_rows(&self) -> usize {
        self.outd[1] * self.outd[2]
    }
}

/// Range of kernel taps `k` along one axis whose input coordinate
/// `o * stride + k * dil - pad` lands inside `0..len`, and the input
/// coordinate of the first such tap.
#[inline]
fn valid_taps(o: usize, stride: usize, dil: usize, pad: usize, kernel: usize, len: usize) -> (usize, usize, usize) {
    let base = (o * stride) as isize - pad as isize;
    let mut lo = 0;
    while lo < kernel && base + ((lo * dil) as isize) < 0 {
        lo += 1;
    }
    let mut hi = kernel;
    while hi > lo && base + (((hi - 1) * dil) as isize) >= len as isize {
        hi -= 1;
    }
    let first = if lo < hi { (base + (lo * dil) as isize) as usize } else { 0 };
    (lo, hi, first)
}

/// Gathers the receptive fields of output depth-slice `od` of image `n`
/// into `cols` (`Ho*Wo` rows of `taps*Cin`).
fn im2col<T: Scalar>(x: &[T], dims: &Dims, g: &ConvGeometry, n: usize, od: usize, cols: &mut [T]) {
    let [id_, ih, iw] = dims.ind;
    let [_, oh, ow] = dims.outd;
    let [kd_n, kh_n, kw_n] = g.kernel;
    let cin = dims.cin;
    let kc = g.taps() * cin;
    let img = &x[n * id_ * dims.in_slice()..(n + 1) * id_ * dims.in_slice()];
    let (d_lo, d_hi, z0) = valid_taps(od, g.stride[0], g.dilation[0], g.pad[0], kd_n, id_);
    for y in 0..oh {
        let (h_lo, h_hi, y0) = valid_taps(y, g.stride[1], g.dilation[1], g.pad[1], kh_n, ih);
        for xo in 0..ow {
            let (w_lo, w_hi, x0) = valid_taps(xo, g.stride[2], g.dilation[2], g.pad[2], kw_n, iw);
            let row = &mut cols[(y * ow + xo) * kc..(y * ow + xo + 1) * kc];
            if d_lo > 0 || d_hi < kd_n || h_lo > 0 || h_hi < kh_n || w_lo > 0 || w_hi < kw_n {
                row.fill(T::zero());
            }
            for kd in d_lo..d_hi {
                let zi = z0 + (kd - d_lo) * g.dilation[0];
                for kh in h_lo..h_hi {
                    let yi = y0 + (kh - h_lo) * g.dilation[1];
                    let dst0 = ((kd * kh_n + kh) * kw_n + w_lo) * cin;
                    let src0 = ((zi * ih + yi) * iw + x0) * cin;
                    let run = w_hi - w_lo;
                    if g.dilation[2] == 1 {
                        row[dst0..dst0 + run * cin].copy_from_slice(&img[src0..src0 + run * cin]);
                    } else {
                        for r in 0..run {
                            let s = src0 + r * g.dilation[2] * cin;
                            row[dst0 + r * cin..dst0 + (r + 1) * cin].copy_from_slice(&img[s..s + cin]);
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds column gradients back onto the input gradient.
fn col2im<T: Scalar>(cols: &[T], dims: &Dims, g: &ConvGeometry, n: usize, od: usize, dx: &mut [T]) {
    let [id_, ih, iw] = dims.ind;
    let [_, oh, ow] = dims.outd;
    let [kd_n, kh_n, kw_n] = g.kernel;
    let cin = dims.cin;
    let kc = g.taps() * cin;
    let img = &mut dx[n * id_ * dims.in_slice()..(n + 1) * id_ * dims.in_slice()];
    let (d_lo, d_hi, z0) = valid_taps(od, g.stride[0], g.dilation[0], g.pad[0], kd_n, id_);
    for y in 0..oh {
        let (h_lo, h_hi, y0) = valid_taps(y, g.stride[1], g.dilation[1], g.pad[1], kh_n, ih);
        for xo in 0..ow {
            let (w_lo, w_hi, x0) = valid_taps(xo, g.stride[2], g.dilation[2], g.pad[2], kw_n, iw);
            let row = &cols[(y * ow + xo) * kc..(y * ow + xo + 1) * kc];
            for kd in d_lo..d_hi {
                let zi = z0 + (kd - d_lo) * g.dilation[0];
                for kh in h_lo..h_hi {
                    let yi = y0 + (kh - h_lo) * g.dilation[1];
                    let dst0 = ((kd * kh_n + kh) * kw_n + w_lo) * cin;
                    let src0 = ((zi * ih + yi) * iw + x0) * cin;
                    let run = w_hi - w_lo;
                    if g.dilation[2] == 1 {
                        for (d, &s) in img[src0..src0 + run * cin].iter_mut().zip(&row[dst0..dst0 + run * cin]) {
                            *d += s;
                        }
                    } else {
                        for r in 0..run {
                            let s = src0 + r * g.dilation[2] * cin;
                            for (d, &v) in img[s..s + cin].iter_mut().zip(&row[dst0 + r * cin..dst0 + (r + 1) * cin]) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Var<T> {
    /// Volumetric convolution of `(N, D, H, W, Cin)` with a weight of shape
    /// `(kd, kh, kw, Cin, Cout)` and optional bias `(Cout)`.
    pub fn conv3d(&self, weight: &Var<T>, bias: Option<&Var<T>>, geom: ConvGeometry) -> Var<T> {
        let xs = self.shape();
        assert_eq!(xs.len(), 5, "conv3d input must be (N, D, H, W, C)");
        let ws = weight.shape();
        assert_eq!(
            ws,
            &[geom.kernel[0], geom.kernel[1], geom.kernel[2], xs[4], ws[4]],
            "conv3d weight shape"
        );
        let dims = Dims {
            n: xs[0],
            ind: [xs[1], xs[2], xs[3]],
            outd: [geom.out_dim(0, xs[1]), geom.out_dim(1, xs[2]), geom.out_dim(2, xs[3])],
            cin: xs[4],
            cout: ws[4],
        };
        let kc = geom.taps() * dims.cin;
        let rows = dims.out_rows();
        let cout = dims.cout;
        let out_len = dims.n * dims.outd[0] * rows * cout;
        let mut out = vec![T::zero(); out_len];
        if let Some(b) = bias {
            assert_eq!(b.shape(), &[cout], "conv bias shape");
            for chunk in out.chunks_mut(cout) {
                chunk.copy_from_slice(b.value.data());
            }
        }
        let xd = self.value.data();
        let wd = weight.value.data();
        let pointwise = geom.is_pointwise();
        let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); rows * kc] };
        for n in 0..dims.n {
            for od in 0..dims.outd[0] {
                let o = (n * dims.outd[0] + od) * rows * cout;
                let src: &[T] = if pointwise {
                    let s = (n * dims.ind[0] + od) * dims.in_slice();
                    &xd[s..s + dims.in_slice()]
                } else {
                    im2col(xd, &dims, &geom, n, od, &mut cols);
                    &cols
                };
                gemm(
                    rows,
                    kc,
                    cout,
                    T::one(),
                    MatRef::row_major(src, kc, false),
                    MatRef::row_major(wd, cout, false),
                    T::one(),
                    &mut out[o..o + rows * cout],
                );
            }
        }
        let out_shape = vec![dims.n, dims.outd[0], dims.outd[1], dims.outd[2], cout];
        let (xv, wv) = (self.value.clone(), weight.value.clone());
        let need_x = self.requires_grad;
        let need_w = weight.requires_grad;
        let need_b = bias.map(|b| b.requires_grad).unwrap_or(false);
        let has_bias = bias.is_some();
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        self.op(Tensor::from_parts(out, out_shape), &parents, move |g| {
            let gd = g.data();
            let xd = xv.data();
            let wd = wv.data();
            let mut dx = if need_x { vec![T::zero(); xv.numel()] } else { Vec::new() };
            let mut dw = if need_w { vec![T::zero(); wv.numel()] } else { Vec::new() };
            let mut cols = vec![T::zero(); if pointwise { 0 } else { rows * kc }];
            let mut dcols = vec![T::zero(); if need_x { rows * kc } else { 0 }];
            for n in 0..dims.n {
                for od in 0..dims.outd[0] {
                    let o = (n * dims.outd[0] + od) * rows * cout;
                    let gs = &gd[o..o + rows * cout];
                    if need_w {
                        let src: &[T] = if pointwise {
                            let s = (n * dims.ind[0] + od) * dims.in_slice();
                            &xd[s..s + dims.in_slice()]
                        } else {
                            im2col(xd, &dims, &geom, n, od, &mut cols);
                            &cols
                        };
                        gemm(
                            kc,
                            rows,
                            cout,
                            T::one(),
                            MatRef { data: src, rs: 1, cs: kc },
                            MatRef::row_major(gs, cout, false),
                            T::one(),
                            &mut dw,
                        );
                    }
                    if need_x {
                        if pointwise {
                            let s = (n * dims.ind[0] + od) * dims.in_slice();
                            gemm(
                                rows,
                                cout,
                                kc,
                                T::one(),
                                MatRef::row_major(gs, cout, false),
                                MatRef { data: wd, rs: 1, cs: cout },
                                T::one(),
                                &mut dx[s..s + dims.in_slice()],
                            );
                        } else {
                            gemm(
                                rows,
                                cout,
                                kc,
                                T::one(),
                                MatRef::row_major(gs, cout, false),
                                MatRef { data: wd, rs: 1, cs: cout },
                                T::zero(),
                                &mut dcols,
                            );
                            col2im(&dcols, &dims, &geom, n, od, &mut dx);
                        }
                    }
                }
            }
            let mut res = vec![
                need_x.then(|| Tensor::from_parts(dx, xv.shape().to_vec())),
                need_w.then(|| Tensor::from_parts(dw, wv.shape().to_vec())),
            ];
            if has_bias {
                res.push(need_b.then(|| {
                    let mut db = vec![T::zero(); cout];
                    for chunk in gd.chunks(cout) {
                        for (d, &v) in db.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    Tensor::from_parts(db, vec![cout])
                }));
            }
            res
        })
    }

    /// 2-D convolution of `(N, H, W, Cin)` with weight `(kh, kw, Cin, Cout)`.
    pub fn conv2d(
        &self,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Var<T> {
        let s = self.shape();
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let ws = weight.shape();
        let w5 = weight.reshape(&[1, ws[0], ws[1], ws[2], ws[3]]);
        let geom = ConvGeometry::new([1, kernel, kernel], [1, stride, stride], [0, pad, pad]);
        let y = self.reshape(&[n, 1, h, w, c]).conv3d(&w5, bias, geom);
        let ys = y.shape().to_vec();
        y.reshape(&[ys[0], ys[2], ys[3], ys[4]])
    }

    /// Length-preserving 1-D convolution of `(N, T, Cin)` with weight
    /// `(k, Cin, Cout)`.
    pub fn conv1d(&self, weight: &Var<T>, bias: Option<&Var<T>>, dilation: usize) -> Var<T> {
        let s = self.shape();
        let (n, t, c) = (s[0], s[1], s[2]);
        let ws = weight.shape();
        let k = ws[0];
        assert!(k % 2 == 1, "same-padded conv1d needs an odd kernel");
        let w5 = weight.reshape(&[1, k, 1, ws[1], ws[2]]);
        let y = self
            .reshape(&[n, 1, t, 1, c])
            .conv3d(&w5, bias, ConvGeometry::same_1d(k, dilation));
        y.reshape(&[n, t, ws[2]])
    }

    /// Depthwise length-preserving 1-D convolution of `(N, T, C)` with
    /// weight `(k, C)` and bias `(C)`.
    pub fn depthwise_conv1d(&self, weight: &Var<T>, bias: &Var<T>) -> Var<T> {
        let s = self.shape();
        let (n, t, c) = (s[0], s[1], s[2]);
        let k = weight.dim(0);
        assert_eq!(weight.shape(), &[k, c], "depthwise weight shape");
        assert!(k % 2 == 1, "depthwise conv needs an odd kernel");
        let half = (k / 2) as isize;
        let xd = self.value.data();
        let wd = weight.value.data();
        let mut out = vec![T::zero(); n * t * c];
        for b in 0..n {
            for ti in 0..t {
                let dst = &mut out[(b * t + ti) * c..(b * t + ti + 1) * c];
                dst.copy_from_slice(bias.value.data());
                for kk in 0..k {
                    let src_t = ti as isize + kk as isize - half;
                    if src_t < 0 || src_t >= t as isize {
                        continue;
                    }
                    let src = &xd[(b * t + src_t as usize) * c..(b * t + src_t as usize + 1) * c];
                    let w = &wd[kk * c..(kk + 1) * c];
                    for j in 0..c {
                        dst[j] += src[j] * w[j];
                    }
                }
            }
        }
        let (xv, wv) = (self.value.clone(), weight.value.clone());
        let need = [self.requires_grad, weight.requires_grad, bias.requires_grad];
        self.op(
            Tensor::from_parts(out, vec![n, t, c]),
            &[self, weight, bias],
            move |g| {
                let gd = g.data();
                let (xd, wd) = (xv.data(), wv.data());
                let mut dx = vec![T::zero(); n * t * c];
                let mut dw = vec![T::zero(); k * c];
                let mut db = vec![T::zero(); c];
                for b in 0..n {
                    for ti in 0..t {
                        let go = &gd[(b * t + ti) * c..(b * t + ti + 1) * c];
                        for j in 0..c {
                            db[j] += go[j];
                        }
                        for kk in 0..k {
                            let src_t = ti as isize + kk as isize - half;
                            if src_t < 0 || src_t >= t as isize {
                                continue;
                            }
                            let so = (b * t + src_t as usize) * c;
                            for j in 0..c {
                                dw[kk * c + j] += go[j] * xd[so + j];
                                dx[so + j] += go[j] * wd[kk * c + j];
                            }
                        }
                    }
                }
                vec![
                    need[0].then(|| Tensor::from_parts(dx, vec![n, t, c])),
                    need[1].then(|| Tensor::from_parts(dw, vec![k, c])),
                    need[2].then(|| Tensor::from_parts(db, vec![c])),
                ]
            },
        )
    }

    /// Max pooling over the spatial axes of `(N, H, W, C)`; padded cells
    /// never win.
    pub fn max_pool2d(&self, pool: PoolGeometry) -> Var<T> {
        let s = self.shape();
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (pool.out_dim(h), pool.out_dim(w));
        let xd = self.value.data();
        let mut out = vec![T::neg_infinity(); n * oh * ow * c];
        let mut arg = vec![usize::MAX; n * oh * ow * c];
        for b in 0..n {
            for y in 0..oh {
                for x in 0..ow {
                    let o = ((b * oh + y) * ow + x) * c;
                    for ky in 0..pool.kernel {
                        let yi = (y * pool.stride + ky) as isize - pool.pad as isize;
                        if yi < 0 || yi >= h as isize {
                            continue;
                        }
                        for kx in 0..pool.kernel {
                            let xi = (x * pool.stride + kx) as isize - pool.pad as isize;
                            if xi < 0 || xi >= w as isize {
                                continue;
                            }
                            let src = ((b * h + yi as usize) * w + xi as usize) * c;
                            for j in 0..c {
                                if xd[src + j] > out[o + j] || arg[o + j] == usize::MAX {
                                    out[o + j] = xd[src + j];
                                    arg[o + j] = src + j;
                                }
                            }
                        }
                    }
                }
            }
        }
        let in_len = self.value.numel();
        let in_shape = s.to_vec();
        self.op(
            Tensor::from_parts(out, vec![n, oh, ow, c]),
            &[self],
            move |g| {
                let mut dx = vec![T::zero(); in_len];
                for (&a, &gv) in arg.iter().zip(g.data()) {
                    dx[a] += gv;
                }
                vec![Some(Tensor::from_parts(dx, in_shape))]
            },
        )
    }
}
