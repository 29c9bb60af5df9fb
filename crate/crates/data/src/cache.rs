use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use lipsynth_signal::{MelSpectrogram, PitchStats};

use crate::archive::Archive;
use crate::clip::VideoClip;
use crate::error::{format_err, io_err, DataError, Result};
use crate::example::{Example, VarianceTargets};
use crate::manifest::{Manifest, Split};
use crate::units::SslFeatures;

pub const CACHE_VERSION: u32 = 1;

/// Corpus statistics measured on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub version: u32,
    pub pitch_mean: f64,
    pub pitch_std: f64,
    pub mel_mean: Vec<f64>,
    pub mel_std: Vec<f64>,
    pub energy_mean: f64,
    pub energy_std: f64,
    pub train_clips: usize,
    pub ratio: usize,
    pub log_floor: f64,
    pub ssl_backend: String,
    pub ssl_layer: usize,
    pub ssl_dim: usize,
}

impl CorpusStats {
    pub fn pitch(&self) -> PitchStats {
        PitchStats {
            mean: self.pitch_mean,
            std: self.pitch_std,
        }
    }
}

/// Everything extracted for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedClip {
    pub id: String,
    pub speaker: usize,
    pub split: Split,
    pub clip: VideoClip,
    pub mel: MelSpectrogram,
    /// Mel-rate F0 in Hz, `None` when unvoiced.
    pub pitch_hz: Vec<Option<f64>>,
    /// Video-rate standardised pitch, present after the statistics pass.
    pub pitch: Option<Vec<f64>>,
    pub all_unvoiced: bool,
    pub energy: Vec<f64>,
    pub ssl: Option<SslFeatures>,
    pub linguistic: Option<Vec<usize>>,
    pub codebook_hash: Option<String>,
    pub text: Option<String>,
    pub phones: Option<Vec<u8>>,
}

impl CachedClip {
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new(json!({
            "version": CACHE_VERSION,
            "id": self.id,
            "speaker": self.speaker,
            "split": self.split.to_string(),
            "all_unvoiced": self.all_unvoiced,
            "codebook_hash": self.codebook_hash,
            "text": self.text,
            "ssl_backend": self.ssl.as_ref().map(|s| s.backend.clone()),
            "ssl_layer": self.ssl.as_ref().map(|s| s.layer),
        }));
        let (t, s) = (self.clip.len(), self.clip.size());
        a.put_f32("frames", &[t, s, s], self.clip.pixels());
        let mel: Vec<f32> = self.mel.values.iter().map(|&v| v as f32).collect();
        a.put_f32("mel", &[self.mel.frames, self.mel.bands], &mel);
        let hz: Vec<f32> = self.pitch_hz.iter().map(|f| f.unwrap_or(0.0) as f32).collect();
        a.put_f32("pitch_hz", &[hz.len()], &hz);
        let voiced: Vec<u8> = self.pitch_hz.iter().map(|f| f.is_some() as u8).collect();
        a.put_u8("voiced", &[voiced.len()], &voiced);
        a.put_f64("energy", &[self.energy.len()], &self.energy);
        if let Some(p) = &self.pitch {
            a.put_f64("pitch", &[p.len()], p);
        }
        if let Some(f) = &self.ssl {
            let v: Vec<f32> = f.values.iter().map(|&v| v as f32).collect();
            a.put_f32("ssl", &[f.frames, f.dim], &v);
        }
        if let Some(l) = &self.linguistic {
            let v: Vec<i64> = l.iter().map(|&x| x as i64).collect();
            a.put_i64("linguistic", &[v.len()], &v);
        }
        if let Some(p) = &self.phones {
            a.put_u8("phones", &[p.len()], p);
        }
        a
    }

    pub fn from_archive(a: &Archive, origin: &Path) -> Result<Self> {
        let bad = |d: &str| format_err(origin, d);
        let m = &a.meta;
        let version = m["version"].as_u64().ok_or_else(|| bad("missing cache version"))?;
        if version != CACHE_VERSION as u64 {
            return Err(bad(&format!(
                "cache version {version} is not {CACHE_VERSION}; rerun `lipsynth preprocess`"
            )));
        }
        let id = m["id"].as_str().ok_or_else(|| bad("missing id"))?.to_string();
        let speaker = m["speaker"].as_u64().ok_or_else(|| bad("missing speaker"))? as usize;
        let split: Split = m["split"].as_str().ok_or_else(|| bad("missing split"))?.parse()?;
        let (fs, frames) = a.get_f32("frames").ok_or_else(|| bad("missing frames"))?;
        let [t, s, _] = fs[..] else {
            return Err(bad("frames must be (T, H, W)"));
        };
        let clip = VideoClip::new(frames, t, s, speaker)?;
        let (ms, mel) = a.get_float("mel").ok_or_else(|| bad("missing mel"))?;
        let mel = MelSpectrogram::new(mel, ms[0], ms[1])?;
        let (_, hz) = a.get_f32("pitch_hz").ok_or_else(|| bad("missing pitch_hz"))?;
        let (_, voiced) = a.get_u8("voiced").ok_or_else(|| bad("missing voiced mask"))?;
        let pitch_hz = hz
            .iter()
            .zip(&voiced)
            .map(|(&f, &v)| (v != 0).then_some(f as f64))
            .collect();
        let (_, energy) = a.get_f64("energy").ok_or_else(|| bad("missing energy"))?;
        let pitch = a.get_f64("pitch").map(|(_, p)| p);
        let ssl = match a.get_float("ssl") {
            Some((shape, values)) => Some(SslFeatures {
                values,
                frames: shape[0],
                dim: shape[1],
                layer: m["ssl_layer"].as_u64().unwrap_or(0) as usize,
                backend: m["ssl_backend"].as_str().unwrap_or("").to_string(),
            }),
            None => None,
        };
        let linguistic = a
            .get_i64("linguistic")
            .map(|(_, v)| v.into_iter().map(|x| x as usize).collect());
        Ok(Self {
            id,
            speaker,
            split,
            clip,
            mel,
            pitch_hz,
            pitch,
            all_unvoiced: m["all_unvoiced"].as_bool().unwrap_or(false),
            energy,
            ssl,
            linguistic,
            codebook_hash: m["codebook_hash"].as_str().map(str::to_string),
            text: m["text"].as_str().map(str::to_string),
            phones: a.get_u8("phones").map(|(_, p)| p),
        })
    }

    /// Training example; needs the pitch pass and quantised units.
    pub fn to_example(&self, ratio: usize) -> Result<Example> {
        let pitch = self.pitch.clone().ok_or_else(|| {
            DataError::NotPrepared(format!(
                "clip `{}` has no pitch targets; rerun `lipsynth preprocess`",
                self.id
            ))
        })?;
        let ling = self.linguistic.clone().ok_or_else(|| {
            DataError::NotPrepared(format!(
                "clip `{}` has no linguistic units; run `lipsynth fit-units` first",
                self.id
            ))
        })?;
        let targets = VarianceTargets::new(ling, pitch, self.energy.clone())?;
        Example::new(self.id.clone(), self.clip.clone(), self.mel.clone(), targets, ratio)
    }
}

/// Directory of per-clip archives plus `stats.json` and a manifest copy.
#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir.join("clips")).map_err(io_err(dir))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    /// Opens a cache written by the preprocessing step.
    pub fn open(dir: &Path) -> Result<Self> {
        let c = Self { dir: dir.to_path_buf() };
        if !c.manifest_path().is_file() || !c.stats_path().is_file() {
            return Err(DataError::NotPrepared(format!(
                "no feature cache at {}; run `lipsynth preprocess --manifest <manifest.jsonl> --cache {}`",
                dir.display(),
                dir.display()
            )));
        }
        Ok(c)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.jsonl")
    }

    pub fn stats_path(&self) -> PathBuf {
        self.dir.join("stats.json")
    }

    pub fn codebook_path(&self) -> PathBuf {
        self.dir.join("codebook.txt")
    }

    pub fn clip_path(&self, id: &str) -> PathBuf {
        self.dir.join("clips").join(format!("{id}.safetensors"))
    }

    pub fn manifest(&self) -> Result<Manifest> {
        Manifest::read(&self.manifest_path())
    }

    pub fn stats(&self) -> Result<CorpusStats> {
        let p = self.stats_path();
        let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
        serde_json::from_str(&text).map_err(|e| format_err(&p, e))
    }

    pub fn write_stats(&self, stats: &CorpusStats) -> Result<()> {
        let p = self.stats_path();
        let text = serde_json::to_string_pretty(stats).map_err(|e| format_err(&p, e))?;
        crate::archive::write_atomic(&p, text.as_bytes())
    }

    pub fn load(&self, id: &str) -> Result<CachedClip> {
        let p = self.clip_path(id);
        if !p.is_file() {
            return Err(DataError::NotPrepared(format!(
                "clip `{id}` is missing from the cache at {}; rerun `lipsynth preprocess`",
                self.dir.display()
            )));
        }
        CachedClip::from_archive(&Archive::load(&p)?, &p)
    }

    pub fn store(&self, clip: &CachedClip) -> Result<()> {
        clip.to_archive().save(&self.clip_path(&clip.id))
    }

    /// Training examples of one split in manifest order.
    pub fn examples(&self, split: Split) -> Result<Vec<(CachedClip, Example)>> {
        let stats = self.stats()?;
        self.manifest()?
            .split(split)
            .map(|r| {
                let c = self.load(&r.id)?;
                let ex = c.to_example(stats.ratio)?;
                Ok((c, ex))
            })
            .collect()
    }
}
