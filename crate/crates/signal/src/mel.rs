use crate::error::{Result, SignalError};
use crate::stft::Stft;

/// Log-mel front-end settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Magnitudes are clamped to this value before the natural log.
    pub floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 640,
            win_length: 640,
            hop: 160,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8_000.0,
            floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn log_floor(&self) -> f64 {
        self.floor.ln()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Row-major `(frames, bands)` matrix of log-magnitude mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f64>,
    pub frames: usize,
    pub bands: usize,
}

impl MelSpectrogram {
    pub fn new(values: Vec<f64>, frames: usize, bands: usize) -> Result<Self> {
        if values.len() != frames * bands {
            return Err(SignalError::InvalidInput(format!(
                "mel buffer holds {} values, expected {frames}x{bands}",
                values.len()
            )));
        }
        Ok(Self { values, frames, bands })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.bands..(t + 1) * self.bands]
    }

    /// Copy of frames `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let v = self.values[start * self.bands..(start + len) * self.bands].to_vec();
        Self {
            values: v,
            frames: len,
            bands: self.bands,
        }
    }

    /// Truncates or extends with `fill` to exactly `frames` frames.
    pub fn fit_frames(&mut self, frames: usize, fill: f64) {
        self.values.resize(frames * self.bands, fill);
        self.frames = frames;
    }
}

/// HTK-scale triangular filters without area normalisation, `(n_mels, n_bins)`.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - l) / (c - l);
                    let down = (r - f) / (r - c);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Centre frequency in Hz of every mel band.
pub fn band_centers(cfg: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

#[derive(Debug)]
pub struct MelExtractor {
    cfg: MelConfig,
    stft: Stft,
    /// Sparse filters: first non-zero bin and weights.
    filters: Vec<(usize, Vec<f64>)>,
    dense: Vec<Vec<f64>>,
}

impl MelExtractor {
    pub fn new(cfg: MelConfig) -> Self {
        let stft = Stft::new(cfg.n_fft, cfg.win_length, cfg.hop);
        let dense = mel_filterbank(&cfg);
        let filters = dense
            .iter()
            .map(|row| {
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w > 0.0).map_or(first, |l| l + 1);
                (first, row[first..last].to_vec())
            })
            .collect();
        Self {
            cfg,
            stft,
            filters,
            dense,
        }
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn filterbank(&self) -> &[Vec<f64>] {
        &self.dense
    }

    /// Log-mel spectrogram of a mono waveform sampled at `sample_rate`.
    pub fn extract(&self, wave: &[f64], sample_rate: u32) -> Result<MelSpectrogram> {
        if sample_rate != self.cfg.sample_rate {
            return Err(SignalError::InvalidInput(format!(
                "sample rate {sample_rate} Hz, expected {} Hz",
                self.cfg.sample_rate
            )));
        }
        if wave.len() < self.cfg.hop {
            return Err(SignalError::InvalidInput(format!(
                "waveform of {} samples is shorter than one hop ({})",
                wave.len(),
                self.cfg.hop
            )));
        }
        if wave.iter().any(|v| !v.is_finite()) {
            return Err(SignalError::InvalidInput("waveform contains non-finite samples".into()));
        }
        let mags = self.stft.magnitude(wave);
        let mut values = Vec::with_capacity(mags.len() * self.cfg.n_mels);
        for frame in &mags {
            values.extend(self.project(frame));
        }
        MelSpectrogram::new(values, mags.len(), self.cfg.n_mels)
    }

    /// Log-mel of one linear magnitude frame.
    pub fn project<'a>(&'a self, magnitude: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        self.filters.iter().map(move |(first, w)| {
            let e: f64 = w.iter().zip(&magnitude[*first..]).map(|(a, b)| a * b).sum();
            e.max(self.cfg.floor).ln()
        })
    }
}

/// Euclidean norm of every mel frame.
pub fn frame_energy(mel: &MelSpectrogram) -> Vec<f64> {
    (0..mel.frames)
        .map(|t| mel.frame(t).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Averages consecutive blocks of `factor` values; a trailing partial block
/// is averaged over its own length.
pub fn mean_pool(x: &[f64], factor: usize) -> Vec<f64> {
    x.chunks(factor.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Frame energies pooled to the video rate.
pub fn video_rate_energy(mel: &MelSpectrogram, factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || mel.frames % factor != 0 {
        return Err(SignalError::InvalidInput(format!(
            "{} mel frames are not divisible by {factor}",
            mel.frames
        )));
    }
    Ok(mean_pool(&frame_energy(mel), factor))
}
