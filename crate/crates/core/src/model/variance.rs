use crate::autograd::Var;
use crate::ctx::Ctx;
use crate::nn::{Conv1d, LayerNorm, Linear};
use crate::params::Builder;
use crate::scalar::Scalar;

/// Stack of `conv -> ReLU -> LayerNorm -> dropout` followed by a
/// zero-initialised projection, so every head starts at a constant output.
#[derive(Debug, Clone)]
pub struct VariancePredictor {
    convs: Vec<(Conv1d, LayerNorm)>,
    proj: Linear,
    dropout: f64,
}

impl VariancePredictor {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        in_dim: usize,
        hidden: usize,
        kernel: usize,
        layers: usize,
        out_dim: usize,
        dropout: f64,
    ) -> Self {
        let convs = (0..layers)
            .map(|i| {
                let mut s = b.sub(i);
                let cin = if i == 0 { in_dim } else { hidden };
                (
                    Conv1d::new(&mut s.sub("conv"), cin, hidden, kernel, 1),
                    LayerNorm::new(&mut s.sub("norm"), hidden),
                )
            })
            .collect();
        Self {
            convs,
            proj: Linear::zeroed(&mut b.sub("proj"), hidden, out_dim),
            dropout,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.convs.len()
    }

    /// `(B, T, in_dim)` to `(B, T, out_dim)`.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let mut h = x.clone();
        for (conv, norm) in &self.convs {
            h = norm.forward(ctx, &conv.forward(ctx, &h).relu());
            h = ctx.dropout(&h, self.dropout);
        }
        self.proj.forward(ctx, &h)
    }
}
