//! Parameterised layers. Each layer owns [`ParamId`]s into a shared
//! [`ParamStore`](crate::ParamStore) and runs inside a [`Ctx`].

use crate::autograd::{ConvGeometry, Var};
use crate::ctx::Ctx;
use crate::params::{Builder, Init, ParamId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `y = x W + b` on the last axis; `W` is stored `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, in_dim: usize, out_dim: usize) -> Self {
        Self::with_init(b, in_dim, out_dim, Init::FanInUniform(in_dim), true)
    }

    pub fn zeroed<T: Scalar>(b: &mut Builder<'_, T>, in_dim: usize, out_dim: usize) -> Self {
        Self::with_init(b, in_dim, out_dim, Init::Zeros, true)
    }

    pub fn with_init<T: Scalar>(
        b: &mut Builder<'_, T>,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        bias: bool,
    ) -> Self {
        let weight = b.param("weight", &[in_dim, out_dim], init);
        let bias = bias.then(|| {
            let binit = match init {
                Init::Zeros => Init::Zeros,
                _ => Init::FanInUniform(in_dim),
            };
            b.param("bias", &[out_dim], binit)
        });
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let y = x.matmul(&ctx.param(self.weight));
        match self.bias {
            Some(b) => y.add(&ctx.param(b)),
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, dim: usize) -> Self {
        Self {
            gamma: b.param("gamma", &[dim], Init::Ones),
            beta: b.param("beta", &[dim], Init::Zeros),
            eps: 1e-5,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        x.layer_norm(&ctx.param(self.gamma), &ctx.param(self.beta), T::lit(self.eps))
    }
}

/// Batch normalisation over every leading axis of a channel-last tensor,
/// with running statistics for evaluation.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, channels: usize) -> Self {
        Self {
            gamma: b.param("gamma", &[channels], Init::Ones),
            beta: b.param("beta", &[channels], Init::Zeros),
            running_mean: b.buffer("running_mean", Tensor::zeros(&[channels])),
            running_var: b.buffer("running_var", Tensor::ones(&[channels])),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        if ctx.is_train() {
            let (mean, var) = crate::autograd::channel_stats(x.value());
            let rows = x.value().numel() / mean.len().max(1);
            let unbias = if rows > 1 {
                T::from_usize_lossy(rows) / T::from_usize_lossy(rows - 1)
            } else {
                T::one()
            };
            let m = T::lit(self.momentum);
            let one = T::one();
            let rm = ctx.params().get(self.running_mean);
            let rv = ctx.params().get(self.running_var);
            let new_mean: Vec<T> = rm
                .data()
                .iter()
                .zip(&mean)
                .map(|(&r, &b)| (one - m) * r + m * b)
                .collect();
            let new_var: Vec<T> = rv
                .data()
                .iter()
                .zip(&var)
                .map(|(&r, &b)| (one - m) * r + m * b * unbias)
                .collect();
            let c = mean.len();
            ctx.push_buffer_update(self.running_mean, Tensor::from_parts(new_mean, vec![c]));
            ctx.push_buffer_update(self.running_var, Tensor::from_parts(new_var, vec![c]));
            x.batch_norm_train(&gamma, &beta, T::lit(self.eps))
        } else {
            let rm = ctx.params().get(self.running_mean);
            let rv = ctx.params().get(self.running_var);
            let eps = T::lit(self.eps);
            let scale = rv.map(|v| T::one() / (v + eps).sqrt());
            let shift = rm.zip_map(&scale, |m, s| -m * s);
            let scale = ctx.constant(scale).mul(&gamma);
            let shift = ctx.constant(shift).mul(&gamma).add(&beta);
            x.mul(&scale).add(&shift)
        }
    }
}

/// Same-length 1-D convolution over `(N, T, C)`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub kernel: usize,
    pub dilation: usize,
}

impl Conv1d {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        let fan_in = in_ch * kernel;
        Self {
            weight: b.param("weight", &[kernel, in_ch, out_ch], Init::FanInUniform(fan_in)),
            bias: Some(b.param("bias", &[out_ch], Init::FanInUniform(fan_in))),
            kernel,
            dilation,
        }
    }

    pub fn zeroed<T: Scalar>(b: &mut Builder<'_, T>, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self {
            weight: b.param("weight", &[kernel, in_ch, out_ch], Init::Zeros),
            bias: Some(b.param("bias", &[out_ch], Init::Zeros)),
            kernel,
            dilation: 1,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let bias = self.bias.map(|b| ctx.param(b));
        x.conv1d(&ctx.param(self.weight), bias.as_ref(), self.dilation)
    }
}

#[derive(Debug, Clone)]
pub struct DepthwiseConv1d {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DepthwiseConv1d {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, channels: usize, kernel: usize) -> Self {
        Self {
            weight: b.param("weight", &[kernel, channels], Init::FanInUniform(kernel)),
            bias: b.param("bias", &[channels], Init::FanInUniform(kernel)),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        x.depthwise_conv1d(&ctx.param(self.weight), &ctx.param(self.bias))
    }
}

/// Bias-free convolution over channel-last images `(N, H, W, C)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Self {
            weight: b.param(
                "weight",
                &[kernel, kernel, in_ch, out_ch],
                Init::KaimingNormal(fan_in),
            ),
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        x.conv2d(&ctx.param(self.weight), None, self.kernel, self.stride, self.pad)
    }
}

/// Bias-free volumetric convolution over `(N, D, H, W, C)`.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: ParamId,
    pub geometry: ConvGeometry,
}

impl Conv3d {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, in_ch: usize, out_ch: usize, geometry: ConvGeometry) -> Self {
        let [kd, kh, kw] = geometry.kernel;
        let fan_in = in_ch * kd * kh * kw;
        Self {
            weight: b.param("weight", &[kd, kh, kw, in_ch, out_ch], Init::KaimingNormal(fan_in)),
            geometry,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        x.conv3d(&ctx.param(self.weight), None, self.geometry)
    }
}

/// Lookup table `(vocab, dim)`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, vocab: usize, dim: usize) -> Self {
        Self {
            table: b.param("table", &[vocab, dim], Init::Normal(1.0)),
            vocab,
            dim,
        }
    }

    /// Rows for `ids`, shaped `(ids.len(), dim)`.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, ids: &[usize]) -> Var<T> {
        ctx.param(self.table).index_select(0, ids)
    }
}
