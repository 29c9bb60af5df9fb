use rand::Rng;

use lipsynth_signal::MelSpectrogram;

use crate::clip::VideoClip;
use crate::error::{DataError, Result};

/// Video-rate supervision for the variance heads.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceTargets {
    pub linguistic: Vec<usize>,
    /// Standardised pitch.
    pub pitch: Vec<f64>,
    /// Pooled log-mel frame norms.
    pub energy: Vec<f64>,
}

impl VarianceTargets {
    pub fn new(linguistic: Vec<usize>, pitch: Vec<f64>, energy: Vec<f64>) -> Result<Self> {
        if linguistic.len() != pitch.len() || pitch.len() != energy.len() {
            return Err(DataError::InvalidInput(format!(
                "variance target lengths differ: linguistic {}, pitch {}, energy {}",
                linguistic.len(),
                pitch.len(),
                energy.len()
            )));
        }
        if energy.iter().any(|&e| e < 0.0 || !e.is_finite()) {
            return Err(DataError::InvalidInput("energy targets must be finite and non-negative".into()));
        }
        Ok(Self {
            linguistic,
            pitch,
            energy,
        })
    }

    pub fn len(&self) -> usize {
        self.pitch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pitch.is_empty()
    }

    /// Frames `[start, start + len)`, zero-padded past the end.
    pub fn window(&self, start: usize, len: usize) -> Self {
        let take = |v: &[f64]| {
            let mut out: Vec<f64> = v.iter().skip(start).take(len).copied().collect();
            out.resize(len, 0.0);
            out
        };
        let mut ling: Vec<usize> = self.linguistic.iter().skip(start).take(len).copied().collect();
        ling.resize(len, 0);
        Self {
            linguistic: ling,
            pitch: take(&self.pitch),
            energy: take(&self.energy),
        }
    }
}

/// A clip with its aligned mel-spectrogram and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub clip: VideoClip,
    pub mel: MelSpectrogram,
    pub targets: VarianceTargets,
}

impl Example {
    /// Checks the fixed `ratio` between mel and video frames.
    pub fn new(id: String, clip: VideoClip, mel: MelSpectrogram, targets: VarianceTargets, ratio: usize) -> Result<Self> {
        if mel.frames != ratio * clip.len() {
            return Err(DataError::InvalidInput(format!(
                "clip `{id}`: {} mel frames for {} video frames (ratio {ratio})",
                mel.frames,
                clip.len()
            )));
        }
        if targets.len() != clip.len() {
            return Err(DataError::InvalidInput(format!(
                "clip `{id}`: {} target frames for {} video frames",
                targets.len(),
                clip.len()
            )));
        }
        Ok(Self {
            id,
            clip,
            mel,
            targets,
        })
    }

    pub fn ratio(&self) -> usize {
        self.mel.frames / self.clip.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    /// Short clips are rejected.
    Train,
    /// Short clips are padded.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    /// Frames taken from the clip; the rest is padding.
    pub valid: usize,
    pub clip: VideoClip,
    pub mel: MelSpectrogram,
    pub targets: VarianceTargets,
}

/// Window of `len` video frames starting at `start`, with the mel window
/// `[ratio * start, ratio * (start + len))`.
pub fn window_at(ex: &Example, start: usize, len: usize, mel_fill: f64) -> Window {
    let r = ex.ratio();
    let valid = ex.clip.len().saturating_sub(start).min(len);
    let mut mel = ex.mel.slice(r * start, r * valid);
    mel.fit_frames(r * len, mel_fill);
    Window {
        start,
        valid,
        clip: ex.clip.window(start, len),
        mel,
        targets: ex.targets.window(start, len),
    }
}

/// Uniformly placed window of `len` video frames.
pub fn sample_window<R: Rng + ?Sized>(
    ex: &Example,
    len: usize,
    mode: WindowMode,
    mel_fill: f64,
    rng: &mut R,
) -> Result<Window> {
    let t = ex.clip.len();
    if len == 0 {
        return Err(DataError::InvalidInput("window length must be positive".into()));
    }
    if t < len {
        return match mode {
            WindowMode::Train => Err(DataError::InvalidInput(format!(
                "clip `{}` has {t} frames, fewer than the window length {len}",
                ex.id
            ))),
            WindowMode::Eval => Ok(window_at(ex, 0, len, mel_fill)),
        };
    }
    let start = rng.random_range(0..=t - len);
    Ok(window_at(ex, start, len, mel_fill))
}
