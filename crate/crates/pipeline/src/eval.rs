//! Corpus evaluation: synthesise every clip of a split, vocode, transcribe
//! and score pitch, energy and intelligibility.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lipsynth_core::Scalar;
use lipsynth_data::clip::read_wav;
use lipsynth_data::{load_clip, Manifest, Split};
use lipsynth_signal::{frame_energy, MelConfig, MelExtractor, MelSpectrogram, Pyin, PyinConfig};

use crate::asr::Asr;
use crate::error::{io_err, PipelineError, Result};
use crate::metrics::{
    energy_mae, normalise_chars, normalise_words, pooled_moments, G2p, PitchMoments, Pooling, RateAccumulator,
};
use crate::plot::plot_mel_comparison;
use crate::synth::{Synthesizer, Vocoder};

pub const DEFAULT_TEMPERATURE: f64 = 0.667;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub split: Split,
    pub temperature: f64,
    pub seed: u64,
    pub pooling: Pooling,
    pub vocoder: Vocoder,
    pub mel: MelConfig,
    pub pyin: PyinConfig,
    /// Reference and generated mels of the first three clips.
    pub plot: Option<PathBuf>,
    /// Stop after this many clips; 0 means all.
    pub limit: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: Split::Test,
            temperature: DEFAULT_TEMPERATURE,
            seed: 0,
            pooling: Pooling::Global,
            vocoder: Vocoder::default(),
            mel: MelConfig::default(),
            pyin: PyinConfig::default(),
            plot: None,
            limit: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub wer: f64,
    pub cer: f64,
    pub per: Option<f64>,
    pub energy_mae: f64,
    pub voiced_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub asr: String,
    pub temperature: f64,
    pub pooling: Pooling,
    pub pitch_generated: Option<PitchMoments>,
    pub pitch_reference: Option<PitchMoments>,
    pub energy_mae: f64,
    pub wer: f64,
    pub cer: f64,
    pub per: Option<f64>,
    pub samples: Vec<SampleReport>,
}

impl EvalReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serialises");
        crate::write_atomic(path, text.as_bytes())?;
        Ok(())
    }
}

fn moments_or_warn(pools: &[Vec<f64>], pooling: Pooling, what: &str) -> Option<PitchMoments> {
    match pooled_moments(pools, pooling) {
        Ok(m) => Some(m),
        Err(e) => {
            log::warn!("{what} pitch moments unavailable: {e}");
            None
        }
    }
}

pub fn evaluate<T: Scalar>(
    synth: &Synthesizer<T>,
    manifest: &Manifest,
    asr: &dyn Asr,
    g2p: Option<&dyn G2p>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut records: Vec<_> = manifest.records.iter().filter(|r| r.split == opts.split).collect();
    if records.is_empty() {
        return Err(PipelineError::InvalidInput(format!(
            "the manifest has no {:?} clips",
            opts.split
        )));
    }
    if opts.limit > 0 {
        records.truncate(opts.limit);
    }
    let mel_x = MelExtractor::new(opts.mel.clone());
    let pyin = Pyin::new(opts.pyin.clone())?;
    let floor = opts.mel.log_floor();
    let frame_size = synth.cfg.model.frame_size;

    let (mut words, mut chars, mut phones) = (
        RateAccumulator::default(),
        RateAccumulator::default(),
        RateAccumulator::default(),
    );
    let (mut gen_pitch, mut ref_pitch) = (Vec::new(), Vec::new());
    let mut energy_sum = 0.0;
    let mut samples = Vec::new();
    let mut panels: Vec<MelSpectrogram> = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        log::info!("evaluating {}", rec.id);
        let reference = rec
            .text
            .clone()
            .ok_or_else(|| PipelineError::InvalidInput(format!("clip `{}` has no reference transcript", rec.id)))?;
        let clip = load_clip(manifest, rec, frame_size)?;
        let out = synth.synthesise(&clip, rec.speaker, opts.temperature, opts.seed.wrapping_add(i as u64))?;
        let wave = opts.vocoder.vocode(&out.refined, &opts.mel)?;

        let (ref_wave, sr) = read_wav(&manifest.resolve(&rec.audio))?;
        let mut ref_mel = mel_x.extract(&ref_wave, sr)?;
        ref_mel.fit_frames(out.refined.frames, floor);
        let e = energy_mae(&frame_energy(&out.refined), &frame_energy(&ref_mel))?;
        energy_sum += e;

        let voiced: Vec<f64> = pyin.track(&wave, lipsynth_data::SAMPLE_RATE)?.voiced().collect();
        ref_pitch.push(pyin.track(&ref_wave, sr)?.voiced().collect::<Vec<f64>>());

        let hypothesis = asr.transcribe(&rec.id, &wave)?;
        let (hw, rw) = (normalise_words(&hypothesis), normalise_words(&reference));
        let (hc, rc) = (normalise_chars(&hypothesis), normalise_chars(&reference));
        let before = (words, chars);
        words.add(&hw, &rw)?;
        chars.add(&hc, &rc)?;
        let per = match g2p {
            Some(g) => {
                let (hp, rp) = (g.phonemes(&hypothesis)?, g.phonemes(&reference)?);
                let start = phones;
                phones.add(&hp, &rp)?;
                Some(100.0 * (phones.errors - start.errors) as f64 / (phones.length - start.length) as f64)
            }
            None => None,
        };
        samples.push(SampleReport {
            id: rec.id.clone(),
            reference,
            hypothesis,
            wer: 100.0 * (words.errors - before.0.errors) as f64 / rw.len() as f64,
            cer: 100.0 * (chars.errors - before.1.errors) as f64 / rc.len() as f64,
            per,
            energy_mae: e,
            voiced_frames: voiced.len(),
        });
        gen_pitch.push(voiced);
        if panels.len() < 6 {
            panels.push(ref_mel);
            panels.push(out.refined);
        }
    }
    if let Some(path) = &opts.plot {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        plot_mel_comparison(&panels.iter().collect::<Vec<_>>(), path)?;
    }
    let n = samples.len();
    Ok(EvalReport {
        n_samples: n,
        asr: asr.name().to_string(),
        temperature: opts.temperature,
        pooling: opts.pooling,
        pitch_generated: moments_or_warn(&gen_pitch, opts.pooling, "generated"),
        pitch_reference: moments_or_warn(&ref_pitch, opts.pooling, "reference"),
        energy_mae: energy_sum / n as f64,
        wer: words.rate().unwrap_or(0.0),
        cer: chars.rate().unwrap_or(0.0),
        per: g2p.and(phones.rate()),
        samples,
    })
}
