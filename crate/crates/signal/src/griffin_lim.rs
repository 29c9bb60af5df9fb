//! Log-mel inversion: pseudo-inverse of the filterbank back to a linear
//! magnitude spectrogram, then iterative phase recovery.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::error::{Result, SignalError};
use crate::mel::{MelConfig, MelExtractor, MelSpectrogram};

#[derive(Debug)]
pub struct GriffinLim {
    mel: MelExtractor,
    /// `(n_bins, n_mels)` pseudo-inverse, row-major.
    pinv: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl GriffinLim {
    pub fn new(cfg: MelConfig, iterations: usize, seed: u64) -> Result<Self> {
        let mel = MelExtractor::new(cfg);
        let fb = mel.filterbank();
        let (m, k) = (fb.len(), fb[0].len());
        let mat = DMatrix::from_fn(m, k, |i, j| fb[i][j]);
        let pinv = mat
            .pseudo_inverse(1e-10)
            .map_err(|e| SignalError::InvalidInput(format!("filterbank pseudo-inverse: {e}")))?;
        let mut flat = Vec::with_capacity(k * m);
        for i in 0..k {
            for j in 0..m {
                flat.push(pinv[(i, j)]);
            }
        }
        Ok(Self {
            mel,
            pinv: flat,
            iterations,
            seed,
        })
    }

    pub fn extractor(&self) -> &MelExtractor {
        &self.mel
    }

    /// Non-negative linear magnitudes `(frames, n_bins)` from log-mel frames.
    pub fn linear_magnitude(&self, mel: &MelSpectrogram) -> Result<Vec<Vec<f64>>> {
        let cfg = self.mel.config();
        if mel.bands != cfg.n_mels {
            return Err(SignalError::InvalidInput(format!(
                "mel has {} bands, expected {}",
                mel.bands, cfg.n_mels
            )));
        }
        let n_bins = self.mel.stft().n_bins();
        let floor = cfg.floor;
        Ok((0..mel.frames)
            .map(|t| {
                // the floor maps to zero so silent frames stay silent
                let lin: Vec<f64> = mel.frame(t).iter().map(|v| (v.exp() - floor).max(0.0)).collect();
                (0..n_bins)
                    .map(|b| {
                        let row = &self.pinv[b * cfg.n_mels..(b + 1) * cfg.n_mels];
                        row.iter().zip(&lin).map(|(p, x)| p * x).sum::<f64>().max(0.0)
                    })
                    .collect()
            })
            .collect())
    }

    /// Waveform of `mel.frames * hop` samples.
    pub fn reconstruct(&self, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        if mel.values.iter().any(|v| !v.is_finite()) {
            return Err(SignalError::InvalidInput("mel contains non-finite values".into()));
        }
        let mag = self.linear_magnitude(mel)?;
        let stft = self.mel.stft();
        let len = mel.frames * stft.hop();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut spec: Vec<Vec<Complex64>> = mag
            .iter()
            .map(|f| {
                f.iter()
                    .map(|&a| Complex64::from_polar(a, rng.random::<f64>() * std::f64::consts::TAU))
                    .collect()
            })
            .collect();
        let mut wave = stft.inverse(&spec, len);
        for _ in 0..self.iterations {
            let est = stft.forward(&wave);
            for ((s, e), a) in spec.iter_mut().zip(&est).zip(&mag) {
                for ((sv, ev), &av) in s.iter_mut().zip(e).zip(a) {
                    let n = ev.norm();
                    *sv = if n > 1e-12 {
                        ev * (av / n)
                    } else {
                        Complex64::new(av, 0.0)
                    };
                }
            }
            wave = stft.inverse(&spec, len);
        }
        Ok(wave)
    }
}
