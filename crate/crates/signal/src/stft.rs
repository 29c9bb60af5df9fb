//! Centred short-time Fourier transform with zero padding.
//!
//! Frame `t` is centred on sample `t * hop`; `floor(len / hop)` frames are
//! produced for a signal of `len` samples.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("n_fft", &self.n_fft)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Stft {
    /// `win_length` must not exceed `n_fft`; shorter windows are centred.
    pub fn new(n_fft: usize, win_length: usize, hop: usize) -> Self {
        assert!(win_length <= n_fft && hop > 0 && n_fft > 0);
        let mut window = vec![0.0; n_fft];
        let off = (n_fft - win_length) / 2;
        window[off..off + win_length].copy_from_slice(&hann(win_length));
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window,
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_frames(&self, len: usize) -> usize {
        len / self.hop
    }

    /// One-sided spectra, one `Vec` of `n_bins` values per frame.
    pub fn forward(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let frames = self.n_frames(x.len());
        let half = (self.n_fft / 2) as isize;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut out = Vec::with_capacity(frames);
        for t in 0..frames {
            let start = (t * self.hop) as isize - half;
            for (j, slot) in buf.iter_mut().enumerate() {
                let idx = start + j as isize;
                let v = if idx >= 0 && (idx as usize) < x.len() {
                    x[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex64::new(v * self.window[j], 0.0);
            }
            self.forward.process(&mut buf);
            out.push(buf[..self.n_bins()].to_vec());
        }
        out
    }

    /// Magnitudes of [`forward`](Self::forward).
    pub fn magnitude(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.forward(x)
            .into_iter()
            .map(|f| f.iter().map(|c| c.norm()).collect())
            .collect()
    }

    /// Weighted overlap-add inverse producing `len` samples.
    pub fn inverse(&self, spectra: &[Vec<Complex64>], len: usize) -> Vec<f64> {
        let n = self.n_fft;
        let half = (n / 2) as isize;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (t, spec) in spectra.iter().enumerate() {
            for k in 0..n {
                buf[k] = if k < spec.len() {
                    spec[k]
                } else {
                    spec[n - k].conj()
                };
            }
            // the DC and Nyquist bins of a real signal carry no imaginary part
            buf[0].im = 0.0;
            if n % 2 == 0 {
                buf[n / 2].im = 0.0;
            }
            self.inverse.process(&mut buf);
            let start = (t * self.hop) as isize - half;
            for (j, c) in buf.iter().enumerate() {
                let idx = start + j as isize;
                if idx >= 0 && (idx as usize) < len {
                    let w = self.window[j];
                    out[idx as usize] += c.re / n as f64 * w;
                    norm[idx as usize] += w * w;
                }
            }
        }
        for (o, w) in out.iter_mut().zip(&norm) {
            if *w > 1e-10 {
                *o /= w;
            }
        }
        out
    }
}
