//! Video encoder, variance adaptor, mel decoder and the conditional flow
//! post-net, assembled into one network over a shared [`ParamStore`].

mod config;
mod conformer;
mod frontend;
mod variance;

pub use config::ModelConfig;
pub use conformer::{ConformerLayer, ConformerStack, RelPosAttention};
pub use frontend::VisualFrontEnd;
pub use variance::VariancePredictor;

use crate::autograd::Var;
use crate::ctx::Ctx;
use crate::error::{CoreError, Result};
use crate::flow::{FlowCondition, FlowConfig, FlowPostNet};
use crate::nn::{Conv1d, Embedding, Linear};
use crate::params::{Builder, ModelRng, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Corpus statistics the network normalises its regression targets with.
#[derive(Debug, Clone, PartialEq)]
pub struct DataStats {
    /// Per-band mean and standard deviation of the log-mel.
    pub mel_mean: Vec<f64>,
    pub mel_std: Vec<f64>,
    pub energy_mean: f64,
    pub energy_std: f64,
}

impl DataStats {
    pub fn identity(bands: usize) -> Self {
        Self {
            mel_mean: vec![0.0; bands],
            mel_std: vec![1.0; bands],
            energy_mean: 0.0,
            energy_std: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct StatBuffers {
    mel_mean: ParamId,
    mel_std: ParamId,
    energy_mean: ParamId,
    energy_std: ParamId,
}

/// Head outputs at video rate.
#[derive(Debug, Clone)]
pub struct VariancePrediction<T: Scalar> {
    /// `(B, T_v, K)`
    pub linguistic_logits: Var<T>,
    /// `(B, T_v)`, in standardised pitch units.
    pub pitch: Var<T>,
    /// `(B, T_v)`, in raw energy units.
    pub energy: Var<T>,
}

/// What conditions the decoder: ground truth during training,
/// the heads' own predictions at inference.
#[derive(Debug, Clone, Copy)]
pub enum VarianceSource<'a, T: Scalar> {
    Targets {
        /// `B * T_v` cluster ids, batch-major.
        linguistic: &'a [usize],
        /// `(B, T_v)`
        pitch: &'a Tensor<T>,
        /// `(B, T_v)`
        energy: &'a Tensor<T>,
    },
    Predicted(&'a VariancePrediction<T>),
}

#[derive(Debug, Clone)]
pub struct DecoderOutput<T: Scalar> {
    /// Upsampled, variance-conditioned sequence `(B, T_m, d_model)`.
    pub decoder_input: Var<T>,
    /// Decoder projection in normalised mel units `(B, T_m, bands)`.
    pub mel_norm: Var<T>,
    /// Coarse log-mel `(B, T_m, bands)`.
    pub mel: Var<T>,
}

/// The full lip-to-speech network.
#[derive(Debug, Clone)]
pub struct LipToSpeech {
    cfg: ModelConfig,
    frontend: VisualFrontEnd,
    speaker: Embedding,
    encoder: ConformerStack,
    pitch_head: VariancePredictor,
    energy_head: VariancePredictor,
    linguistic_head: VariancePredictor,
    linguistic_emb: Embedding,
    pitch_emb: Conv1d,
    energy_emb: Conv1d,
    decoder: ConformerStack,
    mel_proj: Linear,
    postnet: FlowPostNet,
    stats: StatBuffers,
}

impl LipToSpeech {
    /// Registers every parameter in `store` and returns the network.
    pub fn new<T: Scalar>(cfg: ModelConfig, store: &mut ParamStore<T>, rng: &mut ModelRng) -> Result<Self> {
        cfg.validate()?;
        let mut b = Builder::new(store, rng);
        let d = cfg.d_model;
        let vh = cfg.variance_hidden;
        let vk = cfg.variance_kernel;
        let p = cfg.dropout;
        let frontend = VisualFrontEnd::new(&mut b.sub("frontend"), &cfg);
        let speaker = Embedding::new(&mut b.sub("speaker"), cfg.n_speakers, d);
        let encoder = ConformerStack::new(&mut b.sub("encoder"), &cfg, cfg.enc_layers);
        let pitch_head = VariancePredictor::new(&mut b.sub("pitch_head"), d, vh, vk, cfg.pitch_layers, 1, p);
        let energy_head = VariancePredictor::new(&mut b.sub("energy_head"), d, vh, vk, cfg.energy_layers, 1, p);
        let linguistic_head = VariancePredictor::new(
            &mut b.sub("linguistic_head"),
            d,
            vh,
            vk,
            cfg.linguistic_layers,
            cfg.n_clusters,
            p,
        );
        let linguistic_emb = Embedding::new(&mut b.sub("linguistic_emb"), cfg.n_clusters, d);
        let pitch_emb = Conv1d::new(&mut b.sub("pitch_emb"), 1, d, vk, 1);
        let energy_emb = Conv1d::new(&mut b.sub("energy_emb"), 1, d, vk, 1);
        let decoder = ConformerStack::new(&mut b.sub("decoder"), &cfg, cfg.dec_layers);
        let mel_proj = Linear::new(&mut b.sub("mel_proj"), d, cfg.mel_bands);
        let postnet = FlowPostNet::new(&mut b.sub("postnet"), FlowConfig::from_model(&cfg))?;
        let stats = {
            let mut s = b.sub("stats");
            let m = cfg.mel_bands;
            StatBuffers {
                mel_mean: s.buffer("mel_mean", Tensor::zeros(&[m])),
                mel_std: s.buffer("mel_std", Tensor::ones(&[m])),
                energy_mean: s.buffer("energy_mean", Tensor::zeros(&[1])),
                energy_std: s.buffer("energy_std", Tensor::ones(&[1])),
            }
        };
        Ok(Self {
            cfg,
            frontend,
            speaker,
            encoder,
            pitch_head,
            energy_head,
            linguistic_head,
            linguistic_emb,
            pitch_emb,
            energy_emb,
            decoder,
            mel_proj,
            postnet,
            stats,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn postnet(&self) -> &FlowPostNet {
        &self.postnet
    }

    pub fn encoder_layers(&self) -> usize {
        self.encoder.len()
    }

    pub fn decoder_layers(&self) -> usize {
        self.decoder.len()
    }

    /// Convolution depth of the (linguistic, pitch, energy) heads.
    pub fn head_depths(&self) -> (usize, usize, usize) {
        (
            self.linguistic_head.num_layers(),
            self.pitch_head.num_layers(),
            self.energy_head.num_layers(),
        )
    }

    pub fn set_data_stats<T: Scalar>(&self, store: &mut ParamStore<T>, stats: &DataStats) -> Result<()> {
        let m = self.cfg.mel_bands;
        if stats.mel_mean.len() != m || stats.mel_std.len() != m {
            return Err(CoreError::Shape(format!(
                "data statistics cover {} bands, model has {m}",
                stats.mel_mean.len()
            )));
        }
        let floor = |v: f64| if v.is_finite() && v > 1e-6 { v } else { 1.0 };
        let std: Vec<f64> = stats.mel_std.iter().map(|&v| floor(v)).collect();
        store.set(self.stats.mel_mean, Tensor::from_f64_slice(&stats.mel_mean, &[m])?);
        store.set(self.stats.mel_std, Tensor::from_f64_slice(&std, &[m])?);
        store.set(self.stats.energy_mean, Tensor::from_f64_slice(&[stats.energy_mean], &[1])?);
        store.set(self.stats.energy_std, Tensor::from_f64_slice(&[floor(stats.energy_std)], &[1])?);
        Ok(())
    }

    pub fn data_stats<T: Scalar>(&self, store: &ParamStore<T>) -> DataStats {
        DataStats {
            mel_mean: store.get(self.stats.mel_mean).to_f64_vec(),
            mel_std: store.get(self.stats.mel_std).to_f64_vec(),
            energy_mean: store.get(self.stats.energy_mean).data()[0].as_f64(),
            energy_std: store.get(self.stats.energy_std).data()[0].as_f64(),
        }
    }

    fn check_speakers(&self, speakers: &[usize]) -> Result<()> {
        match speakers.iter().find(|&&s| s >= self.cfg.n_speakers) {
            Some(&id) => Err(CoreError::UnknownSpeaker {
                id,
                n_speakers: self.cfg.n_speakers,
            }),
            None => Ok(()),
        }
    }

    /// Speaker embeddings `(B, d_model)`.
    pub fn speaker_embedding<T: Scalar>(&self, ctx: &Ctx<'_, T>, speakers: &[usize]) -> Result<Var<T>> {
        self.check_speakers(speakers)?;
        Ok(self.speaker.forward(ctx, speakers))
    }

    /// `(B, T_v, H, W, 1)` frames to encoder states `(B, T_v, d_model)`.
    pub fn encode_video<T: Scalar>(&self, ctx: &Ctx<'_, T>, frames: &Var<T>, speakers: &[usize]) -> Result<Var<T>> {
        let b = frames.shape().first().copied().unwrap_or(0);
        if speakers.len() != b {
            return Err(CoreError::Shape(format!(
                "{} speaker ids for a batch of {b}",
                speakers.len()
            )));
        }
        let spk = self.speaker_embedding(ctx, speakers)?;
        let x = self.frontend.forward(ctx, frames)?;
        let x = x.add(&spk.reshape(&[b, 1, self.cfg.d_model]));
        Ok(self.encoder.forward(ctx, &x))
    }

    fn energy_affine<T: Scalar>(&self, ctx: &Ctx<'_, T>) -> (Var<T>, Var<T>) {
        (
            ctx.param(self.stats.energy_mean),
            ctx.param(self.stats.energy_std),
        )
    }

    pub fn predict_variances<T: Scalar>(&self, ctx: &Ctx<'_, T>, h: &Var<T>) -> VariancePrediction<T> {
        let (b, t) = (h.dim(0), h.dim(1));
        let (e_mean, e_std) = self.energy_affine(ctx);
        let pitch = self.pitch_head.forward(ctx, h).reshape(&[b, t]);
        let energy = self
            .energy_head
            .forward(ctx, h)
            .reshape(&[b, t])
            .mul(&e_std)
            .add(&e_mean);
        VariancePrediction {
            linguistic_logits: self.linguistic_head.forward(ctx, h),
            pitch,
            energy,
        }
    }

    /// Adds the variance embeddings to `h`, upsamples to mel rate and decodes.
    pub fn condition_and_decode<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        h: &Var<T>,
        source: VarianceSource<'_, T>,
        speakers: &[usize],
    ) -> Result<DecoderOutput<T>> {
        let (b, t, d) = (h.dim(0), h.dim(1), h.dim(2));
        let (ling_ids, pitch, energy) = match source {
            VarianceSource::Targets {
                linguistic,
                pitch,
                energy,
            } => {
                if linguistic.len() != b * t || pitch.shape() != [b, t] || energy.shape() != [b, t] {
                    return Err(CoreError::Shape(format!(
                        "variance targets ({}, {:?}, {:?}) do not match encoder output ({b}, {t})",
                        linguistic.len(),
                        pitch.shape(),
                        energy.shape()
                    )));
                }
                if let Some(&k) = linguistic.iter().find(|&&k| k >= self.cfg.n_clusters) {
                    return Err(CoreError::InvalidInput(format!(
                        "linguistic unit {k} outside codebook of {}",
                        self.cfg.n_clusters
                    )));
                }
                (
                    linguistic.to_vec(),
                    ctx.constant(pitch.clone()),
                    ctx.constant(energy.clone()),
                )
            }
            VarianceSource::Predicted(p) => (
                argmax_rows(p.linguistic_logits.value()),
                p.pitch.detach(),
                p.energy.detach(),
            ),
        };
        let (e_mean, e_std) = self.energy_affine(ctx);
        let energy_in = energy.sub(&e_mean).div(&e_std).reshape(&[b, t, 1]);
        let cond = h
            .add(&self.linguistic_emb.forward(ctx, &ling_ids).reshape(&[b, t, d]))
            .add(&self.pitch_emb.forward(ctx, &pitch.reshape(&[b, t, 1])))
            .add(&self.energy_emb.forward(ctx, &energy_in));
        let decoder_input = cond.repeat_interleave(1, self.cfg.upsample);
        let mut x = decoder_input.clone();
        if self.cfg.decoder_speaker {
            let spk = self.speaker_embedding(ctx, speakers)?;
            x = x.add(&spk.reshape(&[b, 1, d]));
        }
        let mel_norm = self.mel_proj.forward(ctx, &self.decoder.forward(ctx, &x));
        let mel = mel_norm
            .mul(&ctx.param(self.stats.mel_std))
            .add(&ctx.param(self.stats.mel_mean));
        Ok(DecoderOutput {
            decoder_input,
            mel_norm,
            mel,
        })
    }

    /// Post-net conditioning; detached when the config says so.
    pub fn flow_condition<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        dec: &DecoderOutput<T>,
        speakers: &[usize],
    ) -> Result<FlowCondition<T>> {
        let c = FlowCondition {
            decoder_input: dec.decoder_input.clone(),
            decoder_output: dec.mel_norm.clone(),
            speaker: self.speaker_embedding(ctx, speakers)?,
        };
        Ok(if self.cfg.detach_postnet_cond { c.detach() } else { c })
    }

    /// The signal the flow models: the mel itself, or its residual over the
    /// coarse prediction.
    pub fn flow_target<T: Scalar>(&self, mel: &Var<T>, dec: &DecoderOutput<T>) -> Var<T> {
        if self.cfg.postnet_residual {
            mel.sub(&dec.mel.detach())
        } else {
            mel.clone()
        }
    }

    /// Inverse of [`flow_target`](Self::flow_target).
    pub fn from_flow_space<T: Scalar>(&self, x: &Var<T>, dec: &DecoderOutput<T>) -> Var<T> {
        if self.cfg.postnet_residual {
            x.add(&dec.mel.detach())
        } else {
            x.clone()
        }
    }
}

/// Index of the largest entry of each last-axis row; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(t: &Tensor<T>) -> Vec<usize> {
    let k = t.shape().last().copied().unwrap_or(1).max(1);
    t.data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
