//! Inference: silent video to refined mel-spectrogram to waveform.

use std::path::Path;

use rand::SeedableRng;

use lipsynth_core::model::argmax_rows;
use lipsynth_core::{Ctx, LipToSpeech, ModelRng, ParamStore, Scalar, Tensor, VarianceSource};
use lipsynth_data::VideoClip;
use lipsynth_signal::{GriffinLim, MelConfig, MelSpectrogram};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{PipelineError, Result};

/// Everything one inference pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub coarse: MelSpectrogram,
    pub refined: MelSpectrogram,
    pub units: Vec<usize>,
    /// Standardised pitch per video frame.
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
}

/// A frozen network ready for inference.
pub struct Synthesizer<T: Scalar> {
    pub cfg: ExperimentConfig,
    model: LipToSpeech,
    store: ParamStore<T>,
}

fn to_mel<T: Scalar>(t: &Tensor<T>) -> Result<MelSpectrogram> {
    let s = t.shape();
    Ok(MelSpectrogram::new(t.to_f64_vec(), s[1], s[2])?)
}

impl<T: Scalar> Synthesizer<T> {
    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = LipToSpeech::new(ck.config.model.clone(), &mut store, &mut ModelRng::seed_from_u64(0))?;
        store.load_named(&ck.params)?;
        Ok(Self {
            cfg: ck.config.clone(),
            model,
            store,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn from_parts(cfg: ExperimentConfig, model: LipToSpeech, store: ParamStore<T>) -> Self {
        Self { cfg, model, store }
    }

    /// Encodes the clip, predicts the variances, decodes with the predicted
    /// conditioning and samples the post-net at `temperature`.
    pub fn synthesise(&self, clip: &VideoClip, speaker: usize, temperature: f64, seed: u64) -> Result<SynthOutput> {
        let m = &self.cfg.model;
        if clip.size() != m.frame_size {
            return Err(PipelineError::InvalidInput(format!(
                "frames are {0}x{0}, the model expects {1}x{1}",
                clip.size(),
                m.frame_size
            )));
        }
        if clip.is_empty() {
            return Err(PipelineError::InvalidInput("the clip has no frames".into()));
        }
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(PipelineError::InvalidInput(format!("temperature {temperature} must be finite and non-negative")));
        }
        let (t, s) = (clip.len(), clip.size());
        let frames: Vec<T> = clip.pixels().iter().map(|&p| T::lit(p as f64)).collect();
        let frames = Tensor::from_vec(frames, &[1, t, s, s, 1])?;
        let ctx = Ctx::eval(&self.store);
        let spk = [speaker];
        let h = self.model.encode_video(&ctx, &ctx.constant(frames), &spk)?;
        let pred = self.model.predict_variances(&ctx, &h);
        let dec = self
            .model
            .condition_and_decode(&ctx, &h, VarianceSource::Predicted(&pred), &spk)?;
        let cond = self.model.flow_condition(&ctx, &dec, &spk)?;
        let mut rng = ModelRng::seed_from_u64(seed);
        let x = self.model.postnet().sample(&ctx, &cond, temperature, &mut rng)?;
        let refined = self.model.from_flow_space(&x, &dec);
        if !refined.value().all_finite() {
            return Err(PipelineError::NonFinite {
                what: "refined mel".into(),
                step: 0,
            });
        }
        Ok(SynthOutput {
            coarse: to_mel(dec.mel.value())?,
            refined: to_mel(refined.value())?,
            units: argmax_rows(pred.linguistic_logits.value()),
            pitch: pred.pitch.value().to_f64_vec(),
            energy: pred.energy.value().to_f64_vec(),
        })
    }
}

/// Waveform generator behind the refined mel.
#[derive(Debug, Clone, PartialEq)]
pub enum Vocoder {
    GriffinLim { iterations: usize, seed: u64 },
    /// `command <mel.npy> <out.wav>`; the mel is `(frames, bands)` log-mel.
    External { command: String, fallback: bool },
}

impl Default for Vocoder {
    fn default() -> Self {
        Self::GriffinLim {
            iterations: 60,
            seed: 0,
        }
    }
}

impl Vocoder {
    pub fn vocode(&self, mel: &MelSpectrogram, mel_cfg: &MelConfig) -> Result<Vec<f64>> {
        match self {
            Self::GriffinLim { iterations, seed } => {
                Ok(GriffinLim::new(mel_cfg.clone(), *iterations, *seed)?.reconstruct(mel)?)
            }
            Self::External { command, fallback } => match external_vocoder(command, mel) {
                Ok(w) => Ok(w),
                Err(e) if *fallback => {
                    log::warn!("external vocoder failed ({e}); falling back to Griffin-Lim");
                    Self::default().vocode(mel, mel_cfg)
                }
                Err(e) => Err(e),
            },
        }
    }
}

fn external_vocoder(command: &str, mel: &MelSpectrogram) -> Result<Vec<f64>> {
    let argv: Vec<String> = command.split_whitespace().map(str::to_string).collect();
    if argv.is_empty() {
        return Err(PipelineError::MissingDependency {
            name: "external vocoder".into(),
            detail: "no command configured".into(),
        });
    }
    let dir = tempfile::tempdir().map_err(crate::error::io_err(std::env::temp_dir()))?;
    let mel_path = dir.path().join("mel.npy");
    let wav_path = dir.path().join("out.wav");
    lipsynth_data::clip::write_matrix_npy(&mel_path, &mel.values, mel.frames, mel.bands)?;
    lipsynth_data::units::run_external(&argv, "external vocoder", &[mel_path.as_os_str(), wav_path.as_os_str()])?;
    let (wave, sr) = lipsynth_data::clip::read_wav(&wav_path)?;
    if sr != lipsynth_data::SAMPLE_RATE {
        return Err(PipelineError::InvalidInput(format!("external vocoder produced {sr} Hz audio")));
    }
    Ok(wave)
}
