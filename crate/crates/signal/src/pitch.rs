//! Probabilistic YIN: per-frame F0 candidates weighted by a beta prior over
//! thresholds, decoded with a two-block (voiced/unvoiced) hidden Markov
//! model whose pitch transitions are confined to a triangular band.

use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Result, SignalError};

#[derive(Debug, Clone, PartialEq)]
pub struct PyinConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub hop: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub n_thresholds: usize,
    pub beta: (f64, f64),
    pub boltzmann: f64,
    /// Pitch bin width in semitones.
    pub resolution: f64,
    /// Largest pitch change between frames, in octaves per second.
    pub max_transition_rate: f64,
    pub switch_prob: f64,
    pub no_trough_prob: f64,
}

impl Default for PyinConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_length: 1024,
            hop: 160,
            fmin: 60.0,
            fmax: 500.0,
            n_thresholds: 100,
            beta: (2.0, 18.0),
            boltzmann: 2.0,
            resolution: 0.1,
            max_transition_rate: 35.92,
            switch_prob: 0.01,
            no_trough_prob: 0.01,
        }
    }
}

/// Frame-level pitch; `f0[t]` is `None` for unvoiced frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    pub f0: Vec<Option<f64>>,
    pub voiced_prob: Vec<f64>,
}

impl PitchTrack {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0.iter().flatten().copied()
    }

    /// Raw Hz with unvoiced frames set to `fill`.
    pub fn filled(&self, fill: f64) -> Vec<f64> {
        self.f0.iter().map(|f| f.unwrap_or(fill)).collect()
    }
}

#[derive(Debug)]
pub struct Pyin {
    cfg: PyinConfig,
    min_period: usize,
    max_period: usize,
    beta_probs: Vec<f64>,
    thresholds: Vec<f64>,
    n_bins: usize,
    bins_per_semitone: usize,
    band: Vec<f64>,
    /// `log_trans[from * width + offset]`, rows renormalised at the edges.
    log_trans: Vec<f64>,
}

impl Pyin {
    pub fn new(cfg: PyinConfig) -> Result<Self> {
        if !(cfg.fmin > 0.0 && cfg.fmax > cfg.fmin) {
            return Err(SignalError::InvalidInput(format!(
                "pitch range [{}, {}] is empty",
                cfg.fmin, cfg.fmax
            )));
        }
        let sr = cfg.sample_rate as f64;
        let win = cfg.frame_length / 2;
        let min_period = ((sr / cfg.fmax).floor() as usize).max(1);
        let max_period = ((sr / cfg.fmin).ceil() as usize).min(cfg.frame_length - win - 1);
        if min_period + 2 > max_period {
            return Err(SignalError::InvalidInput(
                "frame too short for the requested pitch range".into(),
            ));
        }
        let thresholds: Vec<f64> = (0..=cfg.n_thresholds)
            .map(|i| i as f64 / cfg.n_thresholds as f64)
            .collect();
        let beta = Beta::new(cfg.beta.0, cfg.beta.1)
            .map_err(|e| SignalError::InvalidInput(format!("beta prior: {e}")))?;
        let cdf: Vec<f64> = thresholds.iter().map(|&t| beta.cdf(t)).collect();
        let beta_probs = cdf.windows(2).map(|w| w[1] - w[0]).collect();

        let bins_per_semitone = (1.0 / cfg.resolution).ceil() as usize;
        let n_bins =
            (12.0 * bins_per_semitone as f64 * (cfg.fmax / cfg.fmin).log2()).floor() as usize + 1;
        let max_semitones =
            (cfg.max_transition_rate * 12.0 * cfg.hop as f64 / sr).round() as usize;
        let width = max_semitones * bins_per_semitone + 1;
        let band = triangle(width);
        let half = width / 2;
        let mut log_trans = vec![f64::NEG_INFINITY; n_bins * width];
        for from in 0..n_bins {
            let lo = from.saturating_sub(half);
            let hi = (from + half).min(n_bins - 1);
            let norm: f64 = (lo..=hi).map(|to| band[to + half - from]).sum();
            for to in lo..=hi {
                let off = to + half - from;
                log_trans[from * width + off] = (band[off] / norm).ln();
            }
        }
        Ok(Self {
            cfg,
            min_period,
            max_period,
            beta_probs,
            thresholds,
            n_bins,
            bins_per_semitone,
            band,
            log_trans,
        })
    }

    pub fn config(&self) -> &PyinConfig {
        &self.cfg
    }

    pub fn n_pitch_bins(&self) -> usize {
        self.n_bins
    }

    /// Width of the pitch transition band in bins.
    pub fn transition_width(&self) -> usize {
        self.band.len()
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        self.cfg.fmin * 2f64.powf(bin as f64 / (12 * self.bins_per_semitone) as f64)
    }

    /// Pitch track with `floor(len / hop)` frames centred like the mel
    /// front-end.
    pub fn track(&self, wave: &[f64], sample_rate: u32) -> Result<PitchTrack> {
        if sample_rate != self.cfg.sample_rate {
            return Err(SignalError::InvalidInput(format!(
                "sample rate {sample_rate} Hz, expected {} Hz",
                self.cfg.sample_rate
            )));
        }
        if wave.len() < self.cfg.hop {
            return Err(SignalError::InvalidInput("waveform shorter than one hop".into()));
        }
        let n_frames = wave.len() / self.cfg.hop;
        let n_states = 2 * self.n_bins;
        let mut obs = vec![0.0; n_frames * n_states];
        let mut frame = vec![0.0; self.cfg.frame_length];
        let half = (self.cfg.frame_length / 2) as isize;
        for t in 0..n_frames {
            let start = (t * self.cfg.hop) as isize - half;
            for (j, slot) in frame.iter_mut().enumerate() {
                let idx = start + j as isize;
                *slot = if idx >= 0 && (idx as usize) < wave.len() {
                    wave[idx as usize]
                } else {
                    0.0
                };
            }
            self.observe(&frame, &mut obs[t * n_states..(t + 1) * n_states]);
        }
        let path = self.viterbi(&obs, n_frames);
        let mut f0 = Vec::with_capacity(n_frames);
        let mut voiced_prob = Vec::with_capacity(n_frames);
        for (t, &s) in path.iter().enumerate() {
            let row = &obs[t * n_states..(t + 1) * n_states];
            voiced_prob.push(row[..self.n_bins].iter().sum::<f64>().clamp(0.0, 1.0));
            f0.push((s < self.n_bins).then(|| self.bin_frequency(s)));
        }
        Ok(PitchTrack { f0, voiced_prob })
    }

    fn cmnd(&self, frame: &[f64]) -> Vec<f64> {
        let win = self.cfg.frame_length / 2;
        let max_p = self.max_period;
        let mut diff = vec![0.0; max_p + 1];
        for (tau, d) in diff.iter_mut().enumerate().skip(1) {
            *d = frame[..win]
                .iter()
                .zip(&frame[tau..tau + win])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
        }
        let mut running = 0.0;
        let mut out = Vec::with_capacity(max_p + 1 - self.min_period);
        for tau in 1..=max_p {
            running += diff[tau];
            if tau >= self.min_period {
                let denom = running / tau as f64;
                out.push(diff[tau] / (denom + f64::MIN_POSITIVE));
            }
        }
        out
    }

    /// Fills one frame's observation probabilities over `2 * n_bins` states.
    fn observe(&self, frame: &[f64], obs: &mut [f64]) {
        let yin = self.cmnd(frame);
        let n = yin.len();
        let is_trough: Vec<bool> = (0..n)
            .map(|i| {
                if i == 0 {
                    yin[0] < yin[1]
                } else if i == n - 1 {
                    yin[i] < yin[i - 1]
                } else {
                    yin[i] < yin[i - 1] && yin[i] <= yin[i + 1]
                }
            })
            .collect();
        let troughs: Vec<usize> = (0..n).filter(|&i| is_trough[i]).collect();
        let n_thr = self.cfg.n_thresholds;
        if !troughs.is_empty() {
            let mut probs = vec![0.0; troughs.len()];
            let lambda = self.cfg.boltzmann;
            for j in 0..n_thr {
                let thr = self.thresholds[j + 1];
                let n_below = troughs.iter().filter(|&&i| yin[i] < thr).count();
                if n_below == 0 {
                    continue;
                }
                let z = 1.0 - (-lambda * n_below as f64).exp();
                let mut pos = 0usize;
                for (k, &i) in troughs.iter().enumerate() {
                    if yin[i] < thr {
                        let pmf = (1.0 - (-lambda).exp()) * (-lambda * pos as f64).exp() / z;
                        probs[k] += pmf * self.beta_probs[j];
                        pos += 1;
                    }
                }
            }
            let global = troughs
                .iter()
                .enumerate()
                .min_by(|a, b| yin[*a.1].total_cmp(&yin[*b.1]))
                .map(|(k, _)| k)
                .unwrap_or(0);
            let gmin = yin[troughs[global]];
            let not_below = (0..n_thr).filter(|&j| gmin >= self.thresholds[j + 1]).count();
            probs[global] +=
                self.cfg.no_trough_prob * self.beta_probs[..not_below].iter().sum::<f64>();

            let sr = self.cfg.sample_rate as f64;
            let per_octave = (12 * self.bins_per_semitone) as f64;
            for (k, &i) in troughs.iter().enumerate() {
                if probs[k] <= 0.0 {
                    continue;
                }
                let shift = if i == 0 || i == n - 1 {
                    0.0
                } else {
                    let a = yin[i + 1] + yin[i - 1] - 2.0 * yin[i];
                    let b = 0.5 * (yin[i + 1] - yin[i - 1]);
                    if b.abs() >= a.abs() {
                        0.0
                    } else {
                        -b / a
                    }
                };
                let period = (self.min_period + i) as f64 + shift;
                let f = sr / period;
                let bin = (per_octave * (f / self.cfg.fmin).log2()).round();
                let bin = bin.clamp(0.0, (self.n_bins - 1) as f64) as usize;
                obs[bin] += probs[k];
            }
        }
        let voiced: f64 = obs[..self.n_bins].iter().sum::<f64>().clamp(0.0, 1.0);
        let fill = (1.0 - voiced) / self.n_bins as f64;
        for v in &mut obs[self.n_bins..] {
            *v = fill;
        }
    }

    fn viterbi(&self, obs: &[f64], n_frames: usize) -> Vec<usize> {
        let nb = self.n_bins;
        let ns = 2 * nb;
        let width = self.band.len();
        let half = width / 2;
        let log = |p: f64| (p + f64::MIN_POSITIVE).ln();
        let stay = log(1.0 - self.cfg.switch_prob);
        let switch = log(self.cfg.switch_prob);
        let mut value: Vec<f64> = (0..ns).map(|s| log(obs[s]) - (ns as f64).ln()).collect();
        let mut back = vec![0u32; n_frames * ns];
        let mut next = vec![0.0; ns];
        for t in 1..n_frames {
            for i in 0..ns {
                let (block, bin) = (i / nb, i % nb);
                let lo = bin.saturating_sub(half);
                let hi = (bin + half).min(nb - 1);
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0usize;
                for from_block in 0..2 {
                    let sw = if from_block == block { stay } else { switch };
                    for j in lo..=hi {
                        // offset of `bin` inside row `j`
                        let off = bin + half - j;
                        let v = value[from_block * nb + j] + sw + self.log_trans[j * width + off];
                        if v > best {
                            best = v;
                            arg = from_block * nb + j;
                        }
                    }
                }
                next[i] = best + log(obs[t * ns + i]);
                back[t * ns + i] = arg as u32;
            }
            std::mem::swap(&mut value, &mut next);
        }
        let mut state = value
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut path = vec![0; n_frames];
        for t in (0..n_frames).rev() {
            path[t] = state;
            if t > 0 {
                state = back[t * ns + state] as usize;
            }
        }
        path
    }
}

/// Symmetric triangle of odd `width`, peak 1 at the centre.
fn triangle(width: usize) -> Vec<f64> {
    let c = (width as f64 - 1.0) / 2.0;
    let d = (width as f64 + 1.0) / 2.0;
    (0..width).map(|n| 1.0 - ((n as f64 - c) / d).abs()).collect()
}

/// Corpus-level pitch statistics in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchStats {
    pub mean: f64,
    pub std: f64,
}

impl PitchStats {
    /// Population mean and standard deviation.
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Err(SignalError::Degenerate("no voiced frames in the corpus".into()));
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let stats = Self {
            mean,
            std: var.sqrt(),
        };
        stats.check()?;
        Ok(stats)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.std > 0.0) || !self.mean.is_finite() || !self.std.is_finite() {
            return Err(SignalError::Degenerate(format!(
                "pitch std {} is not positive",
                self.std
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardisedPitch {
    /// Video-rate standardised pitch.
    pub values: Vec<f64>,
    pub all_unvoiced: bool,
}

/// Fills unvoiced frames with the corpus mean, standardises and mean-pools
/// by `factor`.
pub fn standardise_pitch(track: &PitchTrack, stats: &PitchStats, factor: usize) -> Result<StandardisedPitch> {
    stats.check()?;
    let z: Vec<f64> = track
        .filled(stats.mean)
        .into_iter()
        .map(|f| (f - stats.mean) / stats.std)
        .collect();
    Ok(StandardisedPitch {
        values: crate::mel::mean_pool(&z, factor),
        all_unvoiced: track.f0.iter().all(Option::is_none),
    })
}
