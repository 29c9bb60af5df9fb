//! Regression, classification and combined training objectives.
//!
//! Every per-clip loss sums over frames (or averages with
//! [`Reduction::Mean`]); batched losses average the per-clip values.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Sum over frames.
    #[default]
    Sum,
    /// Mean over frames.
    Mean,
}

fn per_item<T: Scalar>(frame_losses: &Var<T>, reduction: Reduction) -> Var<T> {
    let b = frame_losses.dim(0);
    let n = frame_losses.value().numel() / b.max(1);
    let summed = frame_losses.reshape(&[b, n]).sum_axis(1, false);
    let per_clip = match reduction {
        Reduction::Sum => summed,
        Reduction::Mean => summed.mul_scalar(T::lit(1.0 / n.max(1) as f64)),
    };
    per_clip.mean_all()
}

fn same_shape<T: Scalar>(what: &str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() || a.rank() < 2 {
        return Err(CoreError::Shape(format!(
            "{what}: prediction {:?} vs target {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// L1 over `(B, T, ...)`: absolute error summed within each frame, then
/// reduced over frames.
pub fn l1_loss<T: Scalar>(pred: &Var<T>, target: &Var<T>, reduction: Reduction) -> Result<Var<T>> {
    same_shape("l1 loss", pred, target)?;
    let (b, t) = (pred.dim(0), pred.dim(1));
    let frame = pred.sub(target).abs().reshape(&[b, t, pred.value().numel() / (b * t).max(1)]);
    Ok(per_item(&frame.sum_axis(2, false), reduction))
}

/// Mel reconstruction: per-frame L1 norm, summed over frames.
pub fn mel_loss<T: Scalar>(pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    if pred.rank() != 3 {
        return Err(CoreError::Shape(format!("mel must be (B, T, bands), got {:?}", pred.shape())));
    }
    l1_loss(pred, target, Reduction::Sum)
}

/// Frame-wise cross-entropy of `(B, T, K)` logits against `B * T` ids.
pub fn linguistic_loss<T: Scalar>(logits: &Var<T>, targets: &[usize], reduction: Reduction) -> Result<Var<T>> {
    let s = logits.shape();
    if s.len() != 3 || targets.len() != s[0] * s[1] {
        return Err(CoreError::Shape(format!(
            "logits {s:?} vs {} linguistic targets",
            targets.len()
        )));
    }
    if let Some(&k) = targets.iter().find(|&&k| k >= s[2]) {
        return Err(CoreError::InvalidInput(format!("target unit {k} outside {} classes", s[2])));
    }
    Ok(per_item(&logits.cross_entropy(targets), reduction))
}

/// `(L_l, L_p, L_e)` for one batch.
pub fn variance_losses<T: Scalar>(
    logits: &Var<T>,
    pitch: &Var<T>,
    energy: &Var<T>,
    linguistic_target: &[usize],
    pitch_target: &Tensor<T>,
    energy_target: &Tensor<T>,
    reduction: Reduction,
) -> Result<(Var<T>, Var<T>, Var<T>)> {
    let g = pitch.graph();
    let lp = l1_loss(pitch, &g.constant(pitch_target.clone()), reduction)?;
    let le = l1_loss(energy, &g.constant(energy_target.clone()), reduction)?;
    let ll = linguistic_loss(logits, linguistic_target, reduction)?;
    Ok((ll, lp, le))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_var: f64,
    pub lambda_post: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_var: 0.1,
            lambda_post: 0.1,
        }
    }
}

/// Scalar components of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub mel: f64,
    pub linguistic: f64,
    pub pitch: f64,
    pub energy: f64,
    pub post: f64,
}

impl LossComponents {
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("mel", self.mel),
            ("linguistic", self.linguistic),
            ("pitch", self.pitch),
            ("energy", self.energy),
            ("post", self.post),
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !v.is_finite() {
                return Err(CoreError::NonFinite { stage: name.into() });
            }
        }
        Ok(())
    }
}

/// `L_mel + λ_var (L_l + L_p + L_e) + λ_post L_post` on plain numbers.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    c.check_finite()?;
    Ok(c.mel + w.lambda_var * (c.linguistic + c.pitch + c.energy) + w.lambda_post * c.post)
}

/// Differentiable counterpart of [`total_loss`].
pub fn total_loss_var<T: Scalar>(
    mel: &Var<T>,
    linguistic: &Var<T>,
    pitch: &Var<T>,
    energy: &Var<T>,
    post: &Var<T>,
    w: &LossWeights,
) -> Var<T> {
    let var = linguistic.add(pitch).add(energy).mul_scalar(T::lit(w.lambda_var));
    mel.add(&var).add(&post.mul_scalar(T::lit(w.lambda_post)))
}
