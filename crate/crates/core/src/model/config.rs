use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Architecture hyper-parameters of the whole network, post-net included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Depthwise kernel of the conformer convolution module.
    pub conv_kernel: usize,
    pub ff_expansion: usize,
    /// Relative attention offsets are clipped to `±max_rel_pos`.
    pub max_rel_pos: usize,
    /// Linguistic cluster count `K`.
    pub n_clusters: usize,
    pub n_speakers: usize,
    pub mel_bands: usize,
    /// Video-to-mel frame ratio.
    pub upsample: usize,
    pub dropout: f64,

    /// Output channels of the 3-D convolution stem.
    pub frontend_channels: usize,
    /// Widths of the four residual stages.
    pub trunk_channels: [usize; 4],
    pub frame_size: usize,

    pub variance_hidden: usize,
    pub variance_kernel: usize,
    pub pitch_layers: usize,
    pub energy_layers: usize,
    pub linguistic_layers: usize,
    /// Feed the speaker embedding to the decoder as well as the encoder.
    pub decoder_speaker: bool,

    pub n_flow_steps: usize,
    pub flow_hidden: usize,
    pub flow_layers: usize,
    pub flow_kernel: usize,
    pub flow_cond_channels: usize,
    /// Bound of the smooth clamp applied to coupling log-scales; 0 disables.
    pub flow_scale_clamp: f64,
    /// Model the residual `mel - coarse` instead of the mel itself.
    pub postnet_residual: bool,
    /// Stop post-net gradients from reaching the decoder through its
    /// conditioning inputs.
    pub detach_postnet_cond: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::grid()
    }
}

impl ModelConfig {
    /// Constrained-vocabulary preset: 6 heads, width 384.
    pub fn grid() -> Self {
        Self {
            d_model: 384,
            n_heads: 6,
            enc_layers: 4,
            dec_layers: 4,
            conv_kernel: 15,
            ff_expansion: 4,
            max_rel_pos: 64,
            n_clusters: 200,
            n_speakers: 33,
            mel_bands: 80,
            upsample: 4,
            dropout: 0.1,
            frontend_channels: 64,
            trunk_channels: [64, 128, 256, 512],
            frame_size: 112,
            variance_hidden: 256,
            variance_kernel: 3,
            pitch_layers: 2,
            energy_layers: 2,
            linguistic_layers: 4,
            decoder_speaker: false,
            n_flow_steps: 8,
            flow_hidden: 192,
            flow_layers: 3,
            flow_kernel: 3,
            flow_cond_channels: 192,
            flow_scale_clamp: 5.0,
            postnet_residual: false,
            detach_postnet_cond: true,
        }
    }

    /// Unconstrained preset: 8 heads, width 512, two speakers.
    pub fn lip2wav() -> Self {
        Self {
            d_model: 512,
            n_heads: 8,
            n_speakers: 2,
            ..Self::grid()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "grid" => Ok(Self::grid()),
            "lip2wav" => Ok(Self::lip2wav()),
            "tiny" => Ok(Self::tiny()),
            other => Err(CoreError::Config(format!(
                "unknown model preset `{other}` (expected grid, lip2wav or tiny)"
            ))),
        }
    }

    /// Desk-scale network for tests and synthetic experiments.
    pub fn tiny() -> Self {
        Self {
            d_model: 48,
            n_heads: 4,
            enc_layers: 1,
            dec_layers: 1,
            conv_kernel: 7,
            ff_expansion: 2,
            max_rel_pos: 16,
            n_clusters: 16,
            n_speakers: 4,
            frontend_channels: 4,
            trunk_channels: [4, 8, 8, 16],
            variance_hidden: 32,
            flow_hidden: 16,
            flow_layers: 2,
            flow_cond_channels: 16,
            ..Self::grid()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CoreError::Config(m));
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return err(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.conv_kernel % 2 == 0 || self.variance_kernel % 2 == 0 || self.flow_kernel % 2 == 0 {
            return err("convolution kernels must be odd".into());
        }
        if self.mel_bands < 2 || self.mel_bands % 2 != 0 {
            return err(format!("mel_bands {} must be even", self.mel_bands));
        }
        if self.n_clusters == 0 || self.n_speakers == 0 || self.upsample == 0 {
            return err("n_clusters, n_speakers and upsample must be positive".into());
        }
        if self.frame_size < 32 {
            return err(format!("frame_size {} too small for the residual trunk", self.frame_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.n_flow_steps == 0 || self.flow_layers == 0 {
            return err("flow needs at least one step and one coupling layer".into());
        }
        if [self.pitch_layers, self.energy_layers, self.linguistic_layers].contains(&0) {
            return err("variance predictors need at least one convolution".into());
        }
        Ok(())
    }
}
