//! Experiment configuration: built-in presets, a TOML file and `key=value`
//! overrides, merged in that order.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use lipsynth_core::{AdamWConfig, LossWeights, ModelConfig};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            clip_norm: a.clip_norm.unwrap_or(0.0),
        }
    }
}

impl OptimConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    /// Window length in video frames.
    pub window: usize,
    /// One epoch draws one window from every training clip.
    pub epochs: usize,
    pub seed: u64,
    /// Stop early after this many steps; 0 means no limit.
    pub max_steps: u64,
    /// Numbered checkpoint every this many steps; other epochs only refresh
    /// `latest.safetensors`.
    pub checkpoint_every: u64,
    /// Validation interval in epochs.
    pub validate_every: usize,
    pub augment: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            batch_size: 64,
            window: 50,
            epochs: 400,
            seed: 0,
            max_steps: 0,
            checkpoint_every: 0,
            validate_every: 1,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub precision: Precision,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub loss: LossWeights,
    pub train: TrainSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset("grid").expect("built-in preset")
    }
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let model = ModelConfig::preset(name).map_err(|e| PipelineError::Config(e.to_string()))?;
        let train = match name.to_ascii_lowercase().as_str() {
            "lip2wav" => TrainSettings {
                window: 75,
                epochs: 900,
                ..TrainSettings::default()
            },
            "tiny" => TrainSettings {
                batch_size: 4,
                window: 20,
                epochs: 10,
                ..TrainSettings::default()
            },
            _ => TrainSettings::default(),
        };
        Ok(Self {
            preset: name.to_ascii_lowercase(),
            precision: Precision::F32,
            model,
            optim: OptimConfig::default(),
            loss: LossWeights::default(),
            train,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let o = &self.optim;
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            return Err(PipelineError::Config("optim.lr must be finite and non-negative".into()));
        }
        if !(o.eps > 0.0 && o.eps.is_finite()) {
            return Err(PipelineError::Config("optim.eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(PipelineError::Config("optimiser betas must lie in [0, 1)".into()));
        }
        if o.weight_decay < 0.0 || o.clip_norm < 0.0 {
            return Err(PipelineError::Config("weight decay and clip norm must be non-negative".into()));
        }
        if self.loss.lambda_var < 0.0 || self.loss.lambda_post < 0.0 {
            return Err(PipelineError::Config("loss weights must be non-negative".into()));
        }
        let t = &self.train;
        if t.batch_size == 0 || t.window == 0 || t.validate_every == 0 {
            return Err(PipelineError::Config(
                "train.batch_size, train.window and train.validate_every must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Merges the layers `preset < file < overrides`. The preset is taken
    /// from the highest layer that names one.
    pub fn resolve(file: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut user = Table::new();
        if let Some(text) = file {
            let t: Table = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
            merge(&mut user, t);
        }
        for o in overrides {
            merge(&mut user, parse_override(o)?);
        }
        let preset = match user.get("preset") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(PipelineError::Config("preset must be a string".into())),
            None => "grid".to_string(),
        };
        let base = Self::preset(&preset)?;
        let mut table = Table::try_from(&base).map_err(|e| PipelineError::Config(e.to_string()))?;
        merge(&mut table, user);
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge(into: &mut Table, from: Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(dst)), Value::Table(src)) => merge(dst, src),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

/// `train.epochs=3` becomes `{ train = { epochs = 3 } }`. Values are read
/// as TOML and fall back to bare strings.
pub fn parse_override(s: &str) -> Result<Table> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| PipelineError::Config(format!("override `{s}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(PipelineError::Config(format!("override `{s}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut table = Table::new();
    table.insert(last.to_string(), value);
    for p in parts.into_iter().rev() {
        let mut outer = Table::new();
        outer.insert(p.to_string(), Value::Table(table));
        table = outer;
    }
    Ok(table)
}
