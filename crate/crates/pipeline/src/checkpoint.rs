//! Training state on disk: one safetensors archive holding parameters,
//! optimiser moments and a JSON header with the resolved configuration.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;

use lipsynth_core::{DType, Scalar, Tensor};
use lipsynth_data::Archive;

use crate::config::ExperimentConfig;
use crate::error::{PipelineError, Result};

pub const CHECKPOINT_FORMAT: &str = "lipsynth-checkpoint";
pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub config: ExperimentConfig,
    /// Optimiser updates applied so far.
    pub step: u64,
    pub best_val: Option<f64>,
    pub codebook_hash: Option<String>,
    pub params: BTreeMap<String, Tensor<T>>,
    /// `m.<param>` / `v.<param>` moment tensors.
    pub optimiser: BTreeMap<String, Tensor<T>>,
}

fn put<T: Scalar>(a: &mut Archive, name: &str, t: &Tensor<T>) {
    match T::DTYPE {
        DType::F32 => a.put_f32(name, t.shape(), t.cast::<f32>().data()),
        DType::F64 => a.put_f64(name, t.shape(), t.cast::<f64>().data()),
    }
}

fn get<T: Scalar>(a: &Archive, name: &str) -> Result<Tensor<T>> {
    let (shape, values) = a
        .get_float(name)
        .ok_or_else(|| PipelineError::InvalidInput(format!("checkpoint tensor `{name}` is missing or not float")))?;
    Ok(Tensor::<f64>::from_vec(values, &shape)?.cast::<T>())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_archive(&self) -> Archive {
        let precision = match T::DTYPE {
            DType::F32 => "f32",
            DType::F64 => "f64",
        };
        let mut a = Archive::new(json!({
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "step": self.step,
            "best_val": self.best_val,
            "codebook_hash": self.codebook_hash,
            "dtype": precision,
            "config": self.config.to_toml(),
        }));
        for (k, t) in &self.params {
            put(&mut a, &format!("param.{k}"), t);
        }
        for (k, t) in &self.optimiser {
            put(&mut a, &format!("opt.{k}"), t);
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let m = &a.meta;
        if m["format"].as_str() != Some(CHECKPOINT_FORMAT) {
            return Err(PipelineError::InvalidInput("not a lipsynth checkpoint".into()));
        }
        if m["version"].as_u64() != Some(CHECKPOINT_VERSION) {
            return Err(PipelineError::InvalidInput(format!(
                "checkpoint version {} is not supported",
                m["version"]
            )));
        }
        let config = ExperimentConfig::from_toml(
            m["config"]
                .as_str()
                .ok_or_else(|| PipelineError::InvalidInput("checkpoint carries no configuration".into()))?,
        )?;
        let mut params = BTreeMap::new();
        let mut optimiser = BTreeMap::new();
        for name in a.names() {
            if let Some(k) = name.strip_prefix("param.") {
                params.insert(k.to_string(), get(a, name)?);
            } else if let Some(k) = name.strip_prefix("opt.") {
                optimiser.insert(k.to_string(), get(a, name)?);
            }
        }
        Ok(Self {
            config,
            step: m["step"].as_u64().unwrap_or(0),
            best_val: m["best_val"].as_f64(),
            codebook_hash: m["codebook_hash"].as_str().map(str::to_string),
            params,
            optimiser,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_archive().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

/// Reads only the header, to learn the stored precision and configuration.
pub fn peek(path: &Path) -> Result<(ExperimentConfig, DType)> {
    let a = Archive::load(path)?;
    let dtype = match a.meta["dtype"].as_str() {
        Some("f64") => DType::F64,
        _ => DType::F32,
    };
    let cfg = ExperimentConfig::from_toml(a.meta["config"].as_str().unwrap_or(""))?;
    Ok((cfg, dtype))
}

pub fn step_file_name(step: u64) -> String {
    format!("step-{step:08}.safetensors")
}
