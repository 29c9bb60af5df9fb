use crate::autograd::{ConvGeometry, PoolGeometry, Var};
use crate::ctx::Ctx;
use crate::error::{CoreError, Result};
use crate::nn::{BatchNorm, Conv2d, Conv3d, Linear};
use crate::params::Builder;
use crate::scalar::Scalar;

use super::ModelConfig;

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    shortcut: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    fn new<T: Scalar>(b: &mut Builder<'_, T>, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let shortcut = (stride != 1 || in_ch != out_ch).then(|| {
            let mut s = b.sub("shortcut");
            (
                Conv2d::new(&mut s.sub("conv"), in_ch, out_ch, 1, stride, 0),
                BatchNorm::new(&mut s.sub("bn"), out_ch),
            )
        });
        Self {
            conv1: Conv2d::new(&mut b.sub("conv1"), in_ch, out_ch, 3, stride, 1),
            bn1: BatchNorm::new(&mut b.sub("bn1"), out_ch),
            conv2: Conv2d::new(&mut b.sub("conv2"), out_ch, out_ch, 3, 1, 1),
            bn2: BatchNorm::new(&mut b.sub("bn2"), out_ch),
            shortcut,
        }
    }

    fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let h = self.bn1.forward(ctx, &self.conv1.forward(ctx, x)).relu();
        let h = self.bn2.forward(ctx, &self.conv2.forward(ctx, &h));
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(ctx, &conv.forward(ctx, x)),
            None => x.clone(),
        };
        h.add(&skip).relu()
    }
}

/// Spatio-temporal stem followed by a per-frame 18-layer residual trunk.
///
/// `(B, T, H, W, 1)` grayscale mouth crops become `(B, T, d_model)`.
#[derive(Debug, Clone)]
pub struct VisualFrontEnd {
    stem: Conv3d,
    stem_bn: BatchNorm,
    blocks: Vec<BasicBlock>,
    proj: Linear,
    frame_size: usize,
}

impl VisualFrontEnd {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Self {
        let c0 = cfg.frontend_channels;
        let stem = Conv3d::new(
            &mut b.sub("stem"),
            1,
            c0,
            ConvGeometry::new([5, 7, 7], [1, 2, 2], [2, 3, 3]),
        );
        let stem_bn = BatchNorm::new(&mut b.sub("stem_bn"), c0);
        let mut blocks = Vec::new();
        let mut in_ch = c0;
        for (stage, &width) in cfg.trunk_channels.iter().enumerate() {
            for i in 0..2 {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(
                    &mut b.sub(format!("layer{}.{}", stage + 1, i)),
                    in_ch,
                    width,
                    stride,
                ));
                in_ch = width;
            }
        }
        let proj = Linear::new(&mut b.sub("proj"), in_ch, cfg.d_model);
        Self {
            stem,
            stem_bn,
            blocks,
            proj,
            frame_size: cfg.frame_size,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, frames: &Var<T>) -> Result<Var<T>> {
        let s = frames.shape().to_vec();
        if s.len() != 5 || s[2] != self.frame_size || s[3] != self.frame_size || s[4] != 1 {
            return Err(CoreError::Shape(format!(
                "video frames must be (B, T, {0}, {0}, 1), got {s:?}",
                self.frame_size
            )));
        }
        let (b, t) = (s[0], s[1]);
        let h = self.stem.forward(ctx, frames);
        let h = self.stem_bn.forward(ctx, &h).relu();
        let hs = h.shape().to_vec();
        let mut h = h
            .reshape(&[b * t, hs[2], hs[3], hs[4]])
            .max_pool2d(PoolGeometry { kernel: 3, stride: 2, pad: 1 });
        for block in &self.blocks {
            h = block.forward(ctx, &h);
        }
        let hs = h.shape().to_vec();
        let pooled = h.reshape(&[b * t, hs[1] * hs[2], hs[3]]).mean_axis(1, false);
        Ok(self.proj.forward(ctx, &pooled).reshape(&[b, t, self.proj.out_dim]))
    }
}
