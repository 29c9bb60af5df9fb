//! Pitch moments, energy MAE and edit-distance error rates.

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Mean, standard deviation, skewness and excess kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchMoments {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Central moments with `1/n` normalisation throughout.
pub fn pitch_moments(values: &[f64]) -> Result<PitchMoments> {
    if values.len() < 2 {
        return Err(PipelineError::InvalidInput("pitch moments need at least two values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::InvalidInput("pitch values must be finite".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if m2 <= f64::EPSILON * mean.abs().max(1.0) * f64::EPSILON {
        return Err(PipelineError::InvalidInput("pitch values are constant; moments are undefined".into()));
    }
    let std = m2.sqrt();
    Ok(PitchMoments {
        mean,
        std,
        skewness: m3 / (m2 * std),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    })
}

/// How utterances are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// All voiced frames in one pool.
    #[default]
    Global,
    /// Moments per utterance, then averaged.
    PerUtterance,
}

pub fn pooled_moments(utterances: &[Vec<f64>], pooling: Pooling) -> Result<PitchMoments> {
    match pooling {
        Pooling::Global => pitch_moments(&utterances.concat()),
        Pooling::PerUtterance => {
            let each: Vec<PitchMoments> = utterances
                .iter()
                .filter(|u| u.len() >= 2)
                .map(|u| pitch_moments(u))
                .collect::<Result<_>>()?;
            if each.is_empty() {
                return Err(PipelineError::InvalidInput("no utterance has two voiced frames".into()));
            }
            let n = each.len() as f64;
            let avg = |f: fn(&PitchMoments) -> f64| each.iter().map(f).sum::<f64>() / n;
            Ok(PitchMoments {
                mean: avg(|m| m.mean),
                std: avg(|m| m.std),
                skewness: avg(|m| m.skewness),
                excess_kurtosis: avg(|m| m.excess_kurtosis),
            })
        }
    }
}

/// One table row: `label | μ | σ | γ | κ` with 2, 2, 3 and 3 decimals.
pub fn format_moments_row(label: &str, m: &PitchMoments) -> String {
    format!(
        "{label} | {:.2} | {:.2} | {:.3} | {:.3}",
        m.mean, m.std, m.skewness, m.excess_kurtosis
    )
}

/// Frame-wise mean absolute error, truncating to the shorter sequence.
pub fn energy_mae(generated: &[f64], reference: &[f64]) -> Result<f64> {
    let n = generated.len().min(reference.len());
    if n == 0 {
        return Err(PipelineError::InvalidInput("energy MAE of an empty sequence".into()));
    }
    if generated.len() != reference.len() {
        log::warn!(
            "energy sequences differ in length ({} vs {}); truncating to {n}",
            generated.len(),
            reference.len()
        );
    }
    Ok(generated[..n]
        .iter()
        .zip(&reference[..n])
        .map(|(g, r)| (g - r).abs())
        .sum::<f64>()
        / n as f64)
}

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Distance over reference length, in percent.
pub fn error_rate<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(PipelineError::InvalidInput("error rate against an empty reference".into()));
    }
    Ok(100.0 * edit_distance(hypothesis, reference) as f64 / reference.len() as f64)
}

/// Lowercase, drop punctuation, split on whitespace.
pub fn normalise_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation() && !(c.is_ascii() && c.is_ascii_control()))
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Characters of the normalised words joined by single spaces.
pub fn normalise_chars(text: &str) -> Vec<char> {
    normalise_words(text).join(" ").chars().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Word,
    Char,
    Phoneme,
}

/// Grapheme-to-phoneme conversion.
pub trait G2p {
    fn phonemes(&self, text: &str) -> Result<Vec<String>>;
}

/// Treats every letter as a phoneme; exact for the synthetic corpus, whose
/// transcripts spell phones one letter each.
#[derive(Debug, Clone, Copy, Default)]
pub struct LetterG2p;

impl G2p for LetterG2p {
    fn phonemes(&self, text: &str) -> Result<Vec<String>> {
        Ok(normalise_words(text)
            .iter()
            .flat_map(|w| w.chars().map(|c| c.to_string()).collect::<Vec<_>>())
            .collect())
    }
}

/// Runs `command <text>` and splits its standard output on whitespace.
#[derive(Debug, Clone)]
pub struct ExternalG2p {
    pub command: Vec<String>,
}

impl G2p for ExternalG2p {
    fn phonemes(&self, text: &str) -> Result<Vec<String>> {
        let out = lipsynth_data::units::run_external(&self.command, "g2p", &[std::ffi::OsStr::new(text)])?;
        Ok(String::from_utf8_lossy(&out.stdout)
            .split_whitespace()
            .map(str::to_string)
            .collect())
    }
}

/// Error rate of a transcript pair in the given unit.
pub fn transcript_error(hypothesis: &str, reference: &str, unit: Unit, g2p: &dyn G2p) -> Result<f64> {
    match unit {
        Unit::Word => error_rate(&normalise_words(hypothesis), &normalise_words(reference)),
        Unit::Char => error_rate(&normalise_chars(hypothesis), &normalise_chars(reference)),
        Unit::Phoneme => error_rate(&g2p.phonemes(hypothesis)?, &g2p.phonemes(reference)?),
    }
}

/// Corpus-level rate: summed distances over summed reference lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RateAccumulator {
    pub errors: usize,
    pub length: usize,
}

impl RateAccumulator {
    pub fn add<T: PartialEq>(&mut self, hypothesis: &[T], reference: &[T]) -> Result<()> {
        if reference.is_empty() {
            return Err(PipelineError::InvalidInput("error rate against an empty reference".into()));
        }
        self.errors += edit_distance(hypothesis, reference);
        self.length += reference.len();
        Ok(())
    }

    pub fn rate(&self) -> Option<f64> {
        (self.length > 0).then(|| 100.0 * self.errors as f64 / self.length as f64)
    }
}
