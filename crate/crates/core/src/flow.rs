//! Conditional normalising-flow post-net: `N` steps of
//! ActNorm, invertible 1x1 convolution and affine coupling.

use crate::autograd::{channel_stats, lu_inverse, Var};
use crate::ctx::Ctx;
use crate::error::{CoreError, Result};
use crate::model::ModelConfig;
use crate::nn::{Conv1d, Linear};
use crate::params::{Builder, Init, ModelRng, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const DDI_EPS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub bands: usize,
    pub steps: usize,
    pub hidden: usize,
    pub layers: usize,
    pub kernel: usize,
    pub cond_channels: usize,
    /// Width of the decoder input and speaker embedding.
    pub input_dim: usize,
    pub scale_clamp: f64,
}

impl FlowConfig {
    pub fn from_model(cfg: &ModelConfig) -> Self {
        Self {
            bands: cfg.mel_bands,
            steps: cfg.n_flow_steps,
            hidden: cfg.flow_hidden,
            layers: cfg.flow_layers,
            kernel: cfg.flow_kernel,
            cond_channels: cfg.flow_cond_channels,
            input_dim: cfg.d_model,
            scale_clamp: cfg.flow_scale_clamp,
        }
    }
}

/// How the negative log-likelihood is reduced over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NllReduction {
    /// Per-item total divided by the number of mel elements, averaged over items.
    #[default]
    PerElement,
    /// Per-item total, averaged over items.
    Sum,
}

/// Conditioning inputs, all batch-first.
#[derive(Debug, Clone)]
pub struct FlowCondition<T: Scalar> {
    /// `(B, T, input_dim)`
    pub decoder_input: Var<T>,
    /// `(B, T, bands)`
    pub decoder_output: Var<T>,
    /// `(B, input_dim)`
    pub speaker: Var<T>,
}

impl<T: Scalar> FlowCondition<T> {
    pub fn detach(&self) -> Self {
        Self {
            decoder_input: self.decoder_input.detach(),
            decoder_output: self.decoder_output.detach(),
            speaker: self.speaker.detach(),
        }
    }
}

/// Latent and per-item log-determinant `(B,)` of the forward map.
#[derive(Debug, Clone)]
pub struct FlowOutput<T: Scalar> {
    pub z: Var<T>,
    pub log_det: Var<T>,
}

#[derive(Debug, Clone)]
struct ActNorm {
    log_scale: ParamId,
    bias: ParamId,
    initialised: ParamId,
}

impl ActNorm {
    fn new<T: Scalar>(b: &mut Builder<'_, T>, c: usize) -> Self {
        Self {
            log_scale: b.param("log_scale", &[c], Init::Zeros),
            bias: b.param("bias", &[c], Init::Zeros),
            initialised: b.buffer("initialised", Tensor::zeros(&[1])),
        }
    }

    fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> (Var<T>, Var<T>) {
        let ls = ctx.param(self.log_scale);
        let y = x.mul(&ls.exp()).add(&ctx.param(self.bias));
        let frames = T::from_usize_lossy(x.dim(1));
        (y, ls.sum_all().mul_scalar(frames))
    }

    fn inverse<T: Scalar>(&self, ctx: &Ctx<'_, T>, y: &Var<T>) -> Var<T> {
        let ls = ctx.param(self.log_scale);
        y.sub(&ctx.param(self.bias)).mul(&ls.neg().exp())
    }
}

#[derive(Debug, Clone)]
struct InvConv {
    /// `(C, C)`; each frame maps as `y = W x`.
    weight: ParamId,
}

impl InvConv {
    fn new<T: Scalar>(b: &mut Builder<'_, T>, c: usize) -> Self {
        Self {
            weight: b.param("weight", &[c, c], Init::Orthogonal),
        }
    }

    fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> (Var<T>, Var<T>) {
        let w = ctx.param(self.weight);
        let frames = T::from_usize_lossy(x.dim(1));
        (x.matmul(&w.transpose(0, 1)), w.logabsdet().mul_scalar(frames))
    }

    fn inverse<T: Scalar>(&self, ctx: &Ctx<'_, T>, y: &Var<T>) -> Result<Var<T>> {
        let w = ctx.params().get(self.weight).cast::<f64>();
        let inv = lu_inverse(&w).map(|m| m.cast::<T>()).ok_or(CoreError::NonFinite {
            stage: "inverse of 1x1 flow convolution".into(),
        })?;
        let inv_t = ctx.constant(inv).transpose(0, 1);
        Ok(y.matmul(&inv_t))
    }
}

#[derive(Debug, Clone)]
struct WnLayer {
    conv: Conv1d,
    cond: Linear,
    res_skip: Linear,
}

/// Affine coupling on an even/odd channel split, with a gated
/// dilated-convolution network predicting log-scale and shift.
#[derive(Debug, Clone)]
struct Coupling {
    start: Linear,
    layers: Vec<WnLayer>,
    end: Linear,
    hidden: usize,
    half: usize,
    scale_clamp: f64,
}

impl Coupling {
    fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &FlowConfig) -> Self {
        let half = cfg.bands / 2;
        let h = cfg.hidden;
        let layers = (0..cfg.layers)
            .map(|i| {
                let mut s = b.sub(format!("wn{i}"));
                let res_out = if i + 1 < cfg.layers { 2 * h } else { h };
                WnLayer {
                    conv: Conv1d::new(&mut s.sub("conv"), h, 2 * h, cfg.kernel, 1),
                    cond: Linear::new(&mut s.sub("cond"), cfg.cond_channels, 2 * h),
                    res_skip: Linear::new(&mut s.sub("res_skip"), h, res_out),
                }
            })
            .collect();
        Self {
            start: Linear::new(&mut b.sub("start"), half, h),
            layers,
            end: Linear::zeroed(&mut b.sub("end"), h, 2 * half),
            hidden: h,
            half,
            scale_clamp: cfg.scale_clamp,
        }
    }

    fn evens(&self) -> Vec<usize> {
        (0..self.half).map(|i| 2 * i).collect()
    }

    fn odds(&self) -> Vec<usize> {
        (0..self.half).map(|i| 2 * i + 1).collect()
    }

    /// Maps `[evens | odds]` back to interleaved channel order.
    fn interleave(&self) -> Vec<usize> {
        (0..2 * self.half)
            .map(|c| if c % 2 == 0 { c / 2 } else { self.half + c / 2 })
            .collect()
    }

    fn scale_shift<T: Scalar>(&self, ctx: &Ctx<'_, T>, xa: &Var<T>, cond: &Var<T>) -> (Var<T>, Var<T>) {
        let h = self.hidden;
        let mut x = self.start.forward(ctx, xa);
        let mut skip: Option<Var<T>> = None;
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            let a = l.conv.forward(ctx, &x).add(&l.cond.forward(ctx, cond));
            let acts = a.narrow(2, 0, h).tanh().mul(&a.narrow(2, h, h).sigmoid());
            let rs = l.res_skip.forward(ctx, &acts);
            let s = if i + 1 < n {
                x = x.add(&rs.narrow(2, 0, h));
                rs.narrow(2, h, h)
            } else {
                rs
            };
            skip = Some(match skip {
                Some(acc) => acc.add(&s),
                None => s,
            });
        }
        let out = self.end.forward(ctx, &skip.expect("at least one layer"));
        let raw = out.narrow(2, 0, self.half);
        let log_s = if self.scale_clamp > 0.0 {
            raw.soft_clamp(T::lit(self.scale_clamp))
        } else {
            raw
        };
        (log_s, out.narrow(2, self.half, self.half))
    }

    fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>, cond: &Var<T>) -> (Var<T>, Var<T>) {
        let b = x.dim(0);
        let xa = x.index_select(2, &self.evens());
        let xb = x.index_select(2, &self.odds());
        let (log_s, t) = self.scale_shift(ctx, &xa, cond);
        let yb = xb.mul(&log_s.exp()).add(&t);
        let y = Var::concat(&[&xa, &yb], 2).index_select(2, &self.interleave());
        let n = log_s.value().numel() / b;
        (y, log_s.reshape(&[b, n]).sum_axis(1, false))
    }

    fn inverse<T: Scalar>(&self, ctx: &Ctx<'_, T>, y: &Var<T>, cond: &Var<T>) -> Var<T> {
        let ya = y.index_select(2, &self.evens());
        let yb = y.index_select(2, &self.odds());
        let (log_s, t) = self.scale_shift(ctx, &ya, cond);
        let xb = yb.sub(&t).mul(&log_s.neg().exp());
        Var::concat(&[&ya, &xb], 2).index_select(2, &self.interleave())
    }
}

#[derive(Debug, Clone)]
struct FlowStep {
    actnorm: ActNorm,
    invconv: InvConv,
    coupling: Coupling,
}

impl FlowStep {
    fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>, cond: &Var<T>) -> (Var<T>, Var<T>) {
        let (h, ld_a) = self.actnorm.forward(ctx, x);
        let (h, ld_w) = self.invconv.forward(ctx, &h);
        let (y, ld_c) = self.coupling.forward(ctx, &h, cond);
        (y, ld_c.add(&ld_a.add(&ld_w)))
    }

    fn inverse<T: Scalar>(&self, ctx: &Ctx<'_, T>, y: &Var<T>, cond: &Var<T>) -> Result<Var<T>> {
        let h = self.coupling.inverse(ctx, y, cond);
        let h = self.invconv.inverse(ctx, &h)?;
        Ok(self.actnorm.inverse(ctx, &h))
    }
}

/// Invertible map between mel frames and a standard-normal latent,
/// conditioned on the decoder input, decoder output and speaker.
#[derive(Debug, Clone)]
pub struct FlowPostNet {
    cfg: FlowConfig,
    cond_input: Linear,
    cond_output: Linear,
    cond_speaker: Linear,
    steps: Vec<FlowStep>,
}

impl FlowPostNet {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: FlowConfig) -> Result<Self> {
        if cfg.bands < 2 || cfg.bands % 2 != 0 {
            return Err(CoreError::Config(format!(
                "flow needs an even band count, got {}",
                cfg.bands
            )));
        }
        if cfg.steps == 0 || cfg.layers == 0 || cfg.kernel % 2 == 0 {
            return Err(CoreError::Config(
                "flow needs at least one step, one layer and an odd kernel".into(),
            ));
        }
        let c = cfg.cond_channels;
        let cond_input = Linear::new(&mut b.sub("cond_input"), cfg.input_dim, c);
        let cond_output = Linear::new(&mut b.sub("cond_output"), cfg.bands, c);
        let cond_speaker = Linear::new(&mut b.sub("cond_speaker"), cfg.input_dim, c);
        let steps = (0..cfg.steps)
            .map(|i| {
                let mut s = b.sub(format!("step{i}"));
                FlowStep {
                    actnorm: ActNorm::new(&mut s.sub("actnorm"), cfg.bands),
                    invconv: InvConv::new(&mut s.sub("invconv"), cfg.bands),
                    coupling: Coupling::new(&mut s.sub("coupling"), &cfg),
                }
            })
            .collect();
        Ok(Self {
            cfg,
            cond_input,
            cond_output,
            cond_speaker,
            steps,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Joint conditioning signal `(B, T, cond_channels)`.
    pub fn condition<T: Scalar>(&self, ctx: &Ctx<'_, T>, c: &FlowCondition<T>) -> Result<Var<T>> {
        let di = c.decoder_input.shape();
        let d_o = c.decoder_output.shape();
        let sp = c.speaker.shape();
        if di.len() != 3
            || d_o.len() != 3
            || sp.len() != 2
            || di[..2] != d_o[..2]
            || sp[0] != di[0]
            || di[2] != self.cfg.input_dim
            || d_o[2] != self.cfg.bands
            || sp[1] != self.cfg.input_dim
        {
            return Err(CoreError::Shape(format!(
                "flow condition shapes {di:?}, {d_o:?}, {sp:?} do not match bands {} / width {}",
                self.cfg.bands, self.cfg.input_dim
            )));
        }
        let spk = self
            .cond_speaker
            .forward(ctx, &c.speaker)
            .reshape(&[sp[0], 1, self.cfg.cond_channels]);
        Ok(self
            .cond_input
            .forward(ctx, &c.decoder_input)
            .add(&self.cond_output.forward(ctx, &c.decoder_output))
            .add(&spk))
    }

    fn check_x<T: Scalar>(&self, x: &Var<T>, cond: &Var<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.cfg.bands || s[..2] != cond.shape()[..2] {
            return Err(CoreError::Shape(format!(
                "flow input {s:?} does not match condition {:?}",
                cond.shape()
            )));
        }
        Ok(())
    }

    /// Mel `(B, T, bands)` to latent, with per-item log|det J|.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>, c: &FlowCondition<T>) -> Result<FlowOutput<T>> {
        let cond = self.condition(ctx, c)?;
        self.check_x(x, &cond)?;
        let mut h = x.clone();
        let mut log_det = ctx.constant(Tensor::zeros(&[x.dim(0)]));
        for step in &self.steps {
            let (y, ld) = step.forward(ctx, &h, &cond);
            h = y;
            log_det = log_det.add(&ld);
        }
        Ok(FlowOutput { z: h, log_det })
    }

    /// Latent to mel.
    pub fn inverse<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>, c: &FlowCondition<T>) -> Result<Var<T>> {
        let cond = self.condition(ctx, c)?;
        self.check_x(z, &cond)?;
        let mut h = z.clone();
        for step in self.steps.iter().rev() {
            h = step.inverse(ctx, &h, &cond)?;
        }
        Ok(h)
    }

    /// Negative log-likelihood of `x` under a standard-normal base.
    pub fn nll<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        x: &Var<T>,
        c: &FlowCondition<T>,
        reduction: NllReduction,
    ) -> Result<Var<T>> {
        let out = self.forward(ctx, x, c)?;
        let b = x.dim(0);
        let n = x.value().numel() / b.max(1);
        let quad = out
            .z
            .square()
            .reshape(&[b, n])
            .sum_axis(1, false)
            .mul_scalar(T::lit(0.5));
        let per_item = quad
            .add_scalar(T::lit(0.5 * LN_2PI * n as f64))
            .sub(&out.log_det);
        let per_item = match reduction {
            NllReduction::Sum => per_item,
            NllReduction::PerElement => per_item.mul_scalar(T::lit(1.0 / n as f64)),
        };
        Ok(per_item.mean_all())
    }

    /// Draws `z ~ N(0, temperature^2)` of shape `(B, T, bands)` and inverts it.
    pub fn sample<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        c: &FlowCondition<T>,
        temperature: f64,
        rng: &mut ModelRng,
    ) -> Result<Var<T>> {
        let s = c.decoder_output.shape();
        let z = Tensor::randn(&[s[0], s[1], self.cfg.bands], temperature.max(0.0), rng);
        self.inverse(ctx, &ctx.constant(z), c)
    }

    pub fn is_initialised<T: Scalar>(&self, store: &ParamStore<T>) -> bool {
        self.steps
            .iter()
            .all(|s| store.get(s.actnorm.initialised).data()[0] > T::zero())
    }

    /// Data-dependent ActNorm initialisation: each step's output has zero
    /// mean and unit variance per band on the given batch. No-op (returns
    /// `false`) once initialised.
    pub fn initialise<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        x: &Tensor<T>,
        decoder_input: &Tensor<T>,
        decoder_output: &Tensor<T>,
        speaker: &Tensor<T>,
    ) -> Result<bool> {
        if self.is_initialised(store) {
            return Ok(false);
        }
        let mut h = x.clone();
        for step in &self.steps {
            let (mean, var) = channel_stats(&h);
            let log_scale: Vec<T> = var
                .iter()
                .map(|&v| -(v + T::lit(DDI_EPS)).ln() * T::lit(0.5))
                .collect();
            let bias: Vec<T> = mean
                .iter()
                .zip(&log_scale)
                .map(|(&m, &ls)| -m * ls.exp())
                .collect();
            let c = log_scale.len();
            store.set(step.actnorm.log_scale, Tensor::from_parts(log_scale, vec![c]));
            store.set(step.actnorm.bias, Tensor::from_parts(bias, vec![c]));
            store.set(step.actnorm.initialised, Tensor::ones(&[1]));
            let ctx = Ctx::eval(store);
            let cond = FlowCondition {
                decoder_input: ctx.constant(decoder_input.clone()),
                decoder_output: ctx.constant(decoder_output.clone()),
                speaker: ctx.constant(speaker.clone()),
            };
            let cond = self.condition(&ctx, &cond)?;
            h = step.forward(&ctx, &ctx.constant(h), &cond).0.value().clone();
        }
        Ok(true)
    }
}
