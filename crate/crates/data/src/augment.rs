use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clip::VideoClip;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub mask_min: usize,
    pub mask_max: usize,
    pub fill: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            mask_min: 10,
            mask_max: 30,
            fill: 0.0,
        }
    }
}

/// One clip's augmentation: a horizontal flip decision and a single mask
/// shared by every frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPlan {
    pub flip: bool,
    pub mask: Option<MaskRect>,
}

impl AugmentPlan {
    pub fn sample(seed: u64, frame_size: usize, cfg: &AugmentConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flip = rng.random::<f64>() < cfg.flip_prob;
        let hi = cfg.mask_max.min(frame_size);
        let mask = (cfg.mask_min <= hi && hi > 0).then(|| {
            let height = rng.random_range(cfg.mask_min..=hi);
            let width = rng.random_range(cfg.mask_min..=hi);
            MaskRect {
                top: rng.random_range(0..=frame_size - height),
                left: rng.random_range(0..=frame_size - width),
                height,
                width,
            }
        });
        Self { flip, mask }
    }

    pub fn apply(&self, clip: &VideoClip, fill: f32) -> VideoClip {
        let mut out = clip.clone();
        let s = clip.size();
        for frame in out.frames_mut().chunks_exact_mut(s * s) {
            if self.flip {
                for row in frame.chunks_exact_mut(s) {
                    row.reverse();
                }
            }
            if let Some(m) = self.mask {
                for r in m.top..m.top + m.height {
                    frame[r * s + m.left..r * s + m.left + m.width].fill(fill);
                }
            }
        }
        out
    }
}

/// Random flip and fixed-position mask, deterministic in `seed`.
pub fn augment(clip: &VideoClip, seed: u64, cfg: &AugmentConfig) -> VideoClip {
    AugmentPlan::sample(seed, clip.size(), cfg).apply(clip, cfg.fill)
}
