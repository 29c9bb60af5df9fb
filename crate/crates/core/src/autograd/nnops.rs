use super::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn last_dim<T: Scalar>(x: &Tensor<T>) -> (usize, usize) {
    let c = *x.shape().last().expect("rank >= 1");
    (x.numel() / c.max(1), c)
}

fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (rows, c) = last_dim(x);
    let xd = x.data();
    let mut out = vec![T::zero(); rows * c];
    for r in 0..rows {
        let src = &xd[r * c..(r + 1) * c];
        let dst = &mut out[r * c..(r + 1) * c];
        let m = src.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - m).exp();
            s += *d;
        }
        for d in dst.iter_mut() {
            *d /= s;
        }
    }
    Tensor::from_parts(out, x.shape().to_vec())
}

/// Batch statistics of a channel-last tensor: per-channel mean and biased
/// variance over every leading axis.
pub(crate) fn channel_stats<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let (rows, c) = last_dim(x);
    let xd = x.data();
    let n = T::from_usize_lossy(rows.max(1));
    let mut mean = vec![T::zero(); c];
    for r in 0..rows {
        for (m, &v) in mean.iter_mut().zip(&xd[r * c..(r + 1) * c]) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![T::zero(); c];
    for r in 0..rows {
        for ((s, &v), &m) in var.iter_mut().zip(&xd[r * c..(r + 1) * c]).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in var.iter_mut() {
        *s /= n;
    }
    (mean, var)
}

impl<T: Scalar> Var<T> {
    /// Softmax over the last axis.
    pub fn softmax(&self) -> Var<T> {
        let y = softmax_rows(&self.value);
        let yv = y.clone();
        self.op(y, &[self], move |g| {
            let (rows, c) = last_dim(&yv);
            let (gd, yd) = (g.data(), yv.data());
            let mut out = vec![T::zero(); rows * c];
            for r in 0..rows {
                let s = r * c..(r + 1) * c;
                let dot: T = gd[s.clone()].iter().zip(&yd[s.clone()]).map(|(&a, &b)| a * b).sum();
                for ((o, &gv), &yv) in out[s.clone()].iter_mut().zip(&gd[s.clone()]).zip(&yd[s]) {
                    *o = yv * (gv - dot);
                }
            }
            vec![Some(Tensor::from_parts(out, yv.shape().to_vec()))]
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Var<T> {
        let p = softmax_rows(&self.value);
        let (rows, c) = last_dim(&self.value);
        let xd = self.value.data();
        let mut out = vec![T::zero(); rows * c];
        for r in 0..rows {
            let src = &xd[r * c..(r + 1) * c];
            let m = src.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + src.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            for (o, &v) in out[r * c..(r + 1) * c].iter_mut().zip(src) {
                *o = v - lse;
            }
        }
        let y = Tensor::from_parts(out, self.shape().to_vec());
        self.op(y, &[self], move |g| {
            let (gd, pd) = (g.data(), p.data());
            let mut out = vec![T::zero(); rows * c];
            for r in 0..rows {
                let s = r * c..(r + 1) * c;
                let gs: T = gd[s.clone()].iter().copied().sum();
                for ((o, &gv), &pv) in out[s.clone()].iter_mut().zip(&gd[s.clone()]).zip(&pd[s]) {
                    *o = gv - pv * gs;
                }
            }
            vec![Some(Tensor::from_parts(out, p.shape().to_vec()))]
        })
    }

    /// Per-row cross-entropy `-log softmax(logits)[target]` for logits of
    /// shape `(.., K)`; the result drops the last axis.
    pub fn cross_entropy(&self, targets: &[usize]) -> Var<T> {
        let (rows, c) = last_dim(&self.value);
        assert_eq!(rows, targets.len(), "one target per logit row");
        let p = softmax_rows(&self.value);
        let xd = self.value.data();
        let mut loss = Vec::with_capacity(rows);
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < c, "target {t} out of range for {c} classes");
            let src = &xd[r * c..(r + 1) * c];
            let m = src.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + src.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            loss.push(lse - src[t]);
        }
        let mut shape = self.shape().to_vec();
        shape.pop();
        let targets = targets.to_vec();
        let in_shape = self.shape().to_vec();
        self.op(Tensor::from_parts(loss, shape), &[self], move |g| {
            let mut out = p.into_vec();
            for (r, &t) in targets.iter().enumerate() {
                let gr = g.data()[r];
                let row = &mut out[r * c..(r + 1) * c];
                row[t] -= T::one();
                for v in row.iter_mut() {
                    *v *= gr;
                }
            }
            vec![Some(Tensor::from_parts(out, in_shape))]
        })
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Var<T> {
        let (rows, c) = last_dim(&self.value);
        assert_eq!(gamma.shape(), &[c], "layer_norm gamma shape");
        assert_eq!(beta.shape(), &[c], "layer_norm beta shape");
        let xd = self.value.data();
        let (gd, bd) = (gamma.value.data(), beta.value.data());
        let ct = T::from_usize_lossy(c);
        let mut xhat = vec![T::zero(); rows * c];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * c];
        for r in 0..rows {
            let src = &xd[r * c..(r + 1) * c];
            let mean = src.iter().copied().sum::<T>() / ct;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / ct;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (src[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gd[j] + bd[j];
            }
        }
        let shape = self.shape().to_vec();
        let gv = gamma.value.clone();
        let need = [self.requires_grad, gamma.requires_grad, beta.requires_grad];
        self.op(
            Tensor::from_parts(out, shape.clone()),
            &[self, gamma, beta],
            move |g| {
                let gdat = g.data();
                let gam = gv.data();
                let mut dx = vec![T::zero(); if need[0] { rows * c } else { 0 }];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for r in 0..rows {
                    let gr = &gdat[r * c..(r + 1) * c];
                    let hr = &xhat[r * c..(r + 1) * c];
                    for j in 0..c {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                    }
                    if need[0] {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..c {
                            let dh = gr[j] * gam[j];
                            m1 += dh;
                            m2 += dh * hr[j];
                        }
                        m1 /= ct;
                        m2 /= ct;
                        for j in 0..c {
                            let dh = gr[j] * gam[j];
                            dx[r * c + j] = rstd[r] * (dh - m1 - hr[j] * m2);
                        }
                    }
                }
                vec![
                    need[0].then(|| Tensor::from_parts(dx, shape)),
                    need[1].then(|| Tensor::from_parts(dgamma, vec![c])),
                    need[2].then(|| Tensor::from_parts(dbeta, vec![c])),
                ]
            },
        )
    }

    /// Batch normalisation of a channel-last tensor using the statistics of
    /// this batch (training mode).
    pub fn batch_norm_train(&self, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Var<T> {
        let (rows, c) = last_dim(&self.value);
        let (mean, var) = channel_stats(&self.value);
        let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xd = self.value.data();
        let (gd, bd) = (gamma.value.data(), beta.value.data());
        let mut xhat = vec![T::zero(); rows * c];
        let mut out = vec![T::zero(); rows * c];
        for r in 0..rows {
            for j in 0..c {
                let h = (xd[r * c + j] - mean[j]) * rstd[j];
                xhat[r * c + j] = h;
                out[r * c + j] = h * gd[j] + bd[j];
            }
        }
        let shape = self.shape().to_vec();
        let gv = gamma.value.clone();
        let need = [self.requires_grad, gamma.requires_grad, beta.requires_grad];
        let n = T::from_usize_lossy(rows.max(1));
        self.op(
            Tensor::from_parts(out, shape.clone()),
            &[self, gamma, beta],
            move |g| {
                let gdat = g.data();
                let gam = gv.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for r in 0..rows {
                    for j in 0..c {
                        dgamma[j] += gdat[r * c + j] * xhat[r * c + j];
                        dbeta[j] += gdat[r * c + j];
                    }
                }
                let dx = need[0].then(|| {
                    let mut dx = vec![T::zero(); rows * c];
                    for r in 0..rows {
                        for j in 0..c {
                            let dh = gdat[r * c + j] * gam[j];
                            let m1 = dbeta[j] * gam[j] / n;
                            let m2 = dgamma[j] * gam[j] / n;
                            dx[r * c + j] = rstd[j] * (dh - m1 - xhat[r * c + j] * m2);
                        }
                    }
                    Tensor::from_parts(dx, shape)
                });
                vec![
                    dx,
                    need[1].then(|| Tensor::from_parts(dgamma, vec![c])),
                    need[2].then(|| Tensor::from_parts(dbeta, vec![c])),
                ]
            },
        )
    }

    /// Relative-position gather for attention: `self` has shape
    /// `(.., T, 2M+1)` holding scores against relative offsets `-M..=M`;
    /// the result `(.., T, T)` has `out[i, j] = self[i, clamp(j - i) + M]`.
    pub fn rel_to_abs(&self, max_rel: usize) -> Var<T> {
        let r = self.rank();
        let t = self.dim(r - 2);
        let p = self.dim(r - 1);
        assert_eq!(p, 2 * max_rel + 1, "relative axis must be 2M+1");
        let batch = self.value.numel() / (t * p).max(1);
        let m = max_rel as isize;
        let col = move |i: usize, j: usize| -> usize {
            ((j as isize - i as isize).clamp(-m, m) + m) as usize
        };
        let xd = self.value.data();
        let mut out = vec![T::zero(); batch * t * t];
        for b in 0..batch {
            for i in 0..t {
                let src = &xd[(b * t + i) * p..(b * t + i + 1) * p];
                let dst = &mut out[(b * t + i) * t..(b * t + i + 1) * t];
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = src[col(i, j)];
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[r - 1] = t;
        let in_shape = self.shape().to_vec();
        self.op(Tensor::from_parts(out, shape), &[self], move |g| {
            let gd = g.data();
            let mut dx = vec![T::zero(); batch * t * p];
            for b in 0..batch {
                for i in 0..t {
                    for j in 0..t {
                        dx[(b * t + i) * p + col(i, j)] += gd[(b * t + i) * t + j];
                    }
                }
            }
            vec![Some(Tensor::from_parts(dx, in_shape))]
        })
    }
}
