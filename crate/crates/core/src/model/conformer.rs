use crate::autograd::Var;
use crate::ctx::Ctx;
use crate::nn::{BatchNorm, DepthwiseConv1d, LayerNorm, Linear};
use crate::params::{Builder, Init, ParamId};
use crate::scalar::Scalar;

use super::ModelConfig;

#[derive(Debug, Clone)]
struct FeedForward {
    norm: LayerNorm,
    up: Linear,
    down: Linear,
    dropout: f64,
}

impl FeedForward {
    fn new<T: Scalar>(b: &mut Builder<'_, T>, d: usize, expansion: usize, dropout: f64) -> Self {
        Self {
            norm: LayerNorm::new(&mut b.sub("norm"), d),
            up: Linear::new(&mut b.sub("up"), d, d * expansion),
            down: Linear::new(&mut b.sub("down"), d * expansion, d),
            dropout,
        }
    }

    fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let h = self.up.forward(ctx, &self.norm.forward(ctx, x)).silu();
        let h = ctx.dropout(&h, self.dropout);
        ctx.dropout(&self.down.forward(ctx, &h), self.dropout)
    }
}

/// Multi-head self-attention with learned relative-position key offsets
/// clipped to `±max_rel`.
#[derive(Debug, Clone)]
pub struct RelPosAttention {
    norm: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    /// `(head_dim, 2 * max_rel + 1)`, shared by all heads.
    rel_keys: ParamId,
    heads: usize,
    max_rel: usize,
    dropout: f64,
}

impl RelPosAttention {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let dh = cfg.head_dim();
        Self {
            norm: LayerNorm::new(&mut b.sub("norm"), d),
            q: Linear::new(&mut b.sub("q"), d, d),
            k: Linear::new(&mut b.sub("k"), d, d),
            v: Linear::new(&mut b.sub("v"), d, d),
            out: Linear::new(&mut b.sub("out"), d, d),
            rel_keys: b.param(
                "rel_keys",
                &[dh, 2 * cfg.max_rel_pos + 1],
                Init::Normal(1.0 / (dh as f64).sqrt()),
            ),
            heads: cfg.n_heads,
            max_rel: cfg.max_rel_pos,
            dropout: cfg.dropout,
        }
    }

    /// `(B, T, d)` to `(B, T, d)`; includes the pre-norm and output dropout.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let (b, t, d) = (x.dim(0), x.dim(1), x.dim(2));
        let dh = d / self.heads;
        let x = self.norm.forward(ctx, x);
        let split = |lin: &Linear| {
            lin.forward(ctx, &x)
                .reshape(&[b, t, self.heads, dh])
                .permute(&[0, 2, 1, 3])
        };
        let (q, k, v) = (split(&self.q), split(&self.k), split(&self.v));
        let content = q.matmul(&k.transpose(2, 3));
        let position = q.matmul(&ctx.param(self.rel_keys)).rel_to_abs(self.max_rel);
        let scores = content
            .add(&position)
            .mul_scalar(T::lit(1.0 / (dh as f64).sqrt()));
        let attn = ctx.dropout(&scores.softmax(), self.dropout);
        let ctxt = attn
            .matmul(&v)
            .permute(&[0, 2, 1, 3])
            .reshape(&[b, t, d]);
        ctx.dropout(&self.out.forward(ctx, &ctxt), self.dropout)
    }
}

#[derive(Debug, Clone)]
struct ConvModule {
    norm: LayerNorm,
    pointwise_in: Linear,
    depthwise: DepthwiseConv1d,
    bn: BatchNorm,
    pointwise_out: Linear,
    dropout: f64,
}

impl ConvModule {
    fn new<T: Scalar>(b: &mut Builder<'_, T>, d: usize, kernel: usize, dropout: f64) -> Self {
        Self {
            norm: LayerNorm::new(&mut b.sub("norm"), d),
            pointwise_in: Linear::new(&mut b.sub("pointwise_in"), d, 2 * d),
            depthwise: DepthwiseConv1d::new(&mut b.sub("depthwise"), d, kernel),
            bn: BatchNorm::new(&mut b.sub("bn"), d),
            pointwise_out: Linear::new(&mut b.sub("pointwise_out"), d, d),
            dropout,
        }
    }

    fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let d = x.dim(2);
        let h = self.pointwise_in.forward(ctx, &self.norm.forward(ctx, x));
        let h = h.narrow(2, 0, d).mul(&h.narrow(2, d, d).sigmoid());
        let h = self.depthwise.forward(ctx, &h);
        let h = self.bn.forward(ctx, &h).silu();
        ctx.dropout(&self.pointwise_out.forward(ctx, &h), self.dropout)
    }
}

/// Macaron block: half-step FFN, attention, convolution, half-step FFN,
/// final LayerNorm.
#[derive(Debug, Clone)]
pub struct ConformerLayer {
    ff1: FeedForward,
    attn: RelPosAttention,
    conv: ConvModule,
    ff2: FeedForward,
    norm: LayerNorm,
}

impl ConformerLayer {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Self {
            ff1: FeedForward::new(&mut b.sub("ff1"), d, cfg.ff_expansion, cfg.dropout),
            attn: RelPosAttention::new(&mut b.sub("attn"), cfg),
            conv: ConvModule::new(&mut b.sub("conv"), d, cfg.conv_kernel, cfg.dropout),
            ff2: FeedForward::new(&mut b.sub("ff2"), d, cfg.ff_expansion, cfg.dropout),
            norm: LayerNorm::new(&mut b.sub("norm"), d),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let half = T::lit(0.5);
        let x = x.add(&self.ff1.forward(ctx, x).mul_scalar(half));
        let x = x.add(&self.attn.forward(ctx, &x));
        let x = x.add(&self.conv.forward(ctx, &x));
        let x = x.add(&self.ff2.forward(ctx, &x).mul_scalar(half));
        self.norm.forward(ctx, &x)
    }
}

#[derive(Debug, Clone)]
pub struct ConformerStack {
    layers: Vec<ConformerLayer>,
}

impl ConformerStack {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig, n_layers: usize) -> Self {
        let layers = (0..n_layers)
            .map(|i| ConformerLayer::new(&mut b.sub(i), cfg))
            .collect();
        Self { layers }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        self.layers.iter().fold(x.clone(), |h, l| l.forward(ctx, &h))
    }
}
