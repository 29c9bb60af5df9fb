//! Speech recognisers used to score intelligibility.

use std::collections::BTreeMap;
use std::path::Path;

use lipsynth_data::{Manifest, SAMPLE_RATE};

use crate::error::{io_err, PipelineError, Result};

pub trait Asr {
    fn name(&self) -> &str;

    /// Transcript of `wave`, a clip identified by `id`.
    fn transcribe(&self, id: &str, wave: &[f64]) -> Result<String>;
}

/// Returns transcripts injected ahead of time, keyed by clip id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EchoAsr {
    pub transcripts: BTreeMap<String, String>,
}

impl EchoAsr {
    pub fn new(transcripts: BTreeMap<String, String>) -> Self {
        Self { transcripts }
    }

    /// Echoes each clip's reference transcript.
    pub fn from_manifest(m: &Manifest) -> Self {
        Self::new(
            m.records
                .iter()
                .filter_map(|r| r.text.clone().map(|t| (r.id.clone(), t)))
                .collect(),
        )
    }

    /// A JSON object mapping clip id to transcript.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let transcripts = serde_json::from_str(&text)
            .map_err(|e| PipelineError::InvalidInput(format!("{}: {e}", path.display())))?;
        Ok(Self::new(transcripts))
    }
}

impl Asr for EchoAsr {
    fn name(&self) -> &str {
        "echo"
    }

    fn transcribe(&self, id: &str, _wave: &[f64]) -> Result<String> {
        self.transcripts
            .get(id)
            .cloned()
            .ok_or_else(|| PipelineError::InvalidInput(format!("no transcript injected for clip `{id}`")))
    }
}

/// Runs `command <file.wav>` and reads the transcript from standard output.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalAsr {
    pub command: Vec<String>,
}

impl ExternalAsr {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.split_whitespace().map(str::to_string).collect(),
        }
    }
}

impl Asr for ExternalAsr {
    fn name(&self) -> &str {
        "external"
    }

    fn transcribe(&self, id: &str, wave: &[f64]) -> Result<String> {
        let dir = tempfile::tempdir().map_err(io_err(std::env::temp_dir()))?;
        let wav = dir.path().join(format!("{id}.wav"));
        lipsynth_data::clip::write_wav(&wav, wave, SAMPLE_RATE)?;
        let out = lipsynth_data::units::run_external(&self.command, "external ASR", &[wav.as_os_str()])?;
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    }
}
