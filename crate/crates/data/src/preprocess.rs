use std::path::Path;

use lipsynth_signal::{
    standardise_pitch, video_rate_energy, MelConfig, MelExtractor, PitchStats, Pyin, PyinConfig,
};

use crate::cache::{Cache, CachedClip, CorpusStats, CACHE_VERSION};
use crate::clip::{center_crop, read_landmarks, read_video_npy, read_wav, VideoClip, FRAME_SIZE};
use crate::error::{DataError, Result};
use crate::manifest::{Manifest, ManifestRecord, Split};
use crate::units::{fit_codebook, length_match, Codebook, KMeansFit, SslSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub mel: MelConfig,
    pub pyin: PyinConfig,
    pub ssl: SslSpec,
    /// Mel frames per video frame.
    pub ratio: usize,
    pub frame_size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            mel: MelConfig::default(),
            pyin: PyinConfig::default(),
            ssl: SslSpec::default(),
            ratio: 4,
            frame_size: FRAME_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessReport {
    pub clips: usize,
    pub all_unvoiced: Vec<String>,
    pub stats: CorpusStats,
}

/// Reads a manifest entry's frames, cropping around landmarks when given.
pub fn load_clip(manifest: &Manifest, rec: &ManifestRecord, frame_size: usize) -> Result<VideoClip> {
    let raw = read_video_npy(&manifest.resolve(&rec.video))?;
    let pixels = match &rec.landmarks {
        Some(p) => center_crop(&raw, &read_landmarks(&manifest.resolve(p))?, frame_size)?,
        None if raw.height == frame_size && raw.width == frame_size => raw.frames,
        None => {
            return Err(DataError::InvalidInput(format!(
                "clip `{}`: frames are {}x{} and no landmark file is given",
                rec.id, raw.height, raw.width
            )))
        }
    };
    VideoClip::new(pixels, raw.n_frames, frame_size, rec.speaker)
}

/// Extracts frames, mel, pitch, energy and speech features for every
/// manifest entry, measures corpus statistics on the training split and
/// writes standardised pitch targets.
pub fn preprocess(manifest_path: &Path, cache_dir: &Path, cfg: &PreprocessConfig) -> Result<PreprocessReport> {
    let manifest = Manifest::read(manifest_path)?;
    if manifest.records.is_empty() {
        return Err(DataError::InvalidInput(format!("{} lists no clips", manifest_path.display())));
    }
    let cache = Cache::create(cache_dir)?;
    let mel_x = MelExtractor::new(cfg.mel.clone());
    let pyin = Pyin::new(cfg.pyin.clone())?;
    let ssl = cfg.ssl.build()?;
    let floor = cfg.mel.log_floor();

    let mut clips = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        log::info!("extracting {}", rec.id);
        let clip = load_clip(&manifest, rec, cfg.frame_size)?;
        let (wave, sr) = read_wav(&manifest.resolve(&rec.audio))?;
        let t_m = cfg.ratio * clip.len();
        let mut mel = mel_x.extract(&wave, sr)?;
        mel.fit_frames(t_m, floor);
        let mut track = pyin.track(&wave, sr)?;
        track.f0.resize(t_m, None);
        track.voiced_prob.resize(t_m, 0.0);
        let energy = video_rate_energy(&mel, cfg.ratio)?;
        let feats = ssl.extract(&wave, sr)?;
        clips.push(CachedClip {
            id: rec.id.clone(),
            speaker: rec.speaker,
            split: rec.split,
            clip,
            mel,
            all_unvoiced: track.f0.iter().all(Option::is_none),
            pitch_hz: track.f0,
            pitch: None,
            energy,
            ssl: Some(feats),
            linguistic: None,
            codebook_hash: None,
            text: rec.text.clone(),
            phones: rec.phones.clone(),
        });
    }

    let train: Vec<&CachedClip> = {
        let t: Vec<_> = clips.iter().filter(|c| c.split == Split::Train).collect();
        if t.is_empty() {
            clips.iter().collect()
        } else {
            t
        }
    };
    let pitch = PitchStats::from_values(train.iter().flat_map(|c| c.pitch_hz.iter().flatten().copied()))?;
    let bands = cfg.mel.n_mels;
    let mut sum = vec![0.0; bands];
    let mut sq = vec![0.0; bands];
    let mut n = 0.0;
    for c in &train {
        for t in 0..c.mel.frames {
            for (b, v) in c.mel.frame(t).iter().enumerate() {
                sum[b] += v;
                sq[b] += v * v;
            }
            n += 1.0;
        }
    }
    let mel_mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mel_std: Vec<f64> = sq
        .iter()
        .zip(&mel_mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt())
        .collect();
    let energies: Vec<f64> = train.iter().flat_map(|c| c.energy.iter().copied()).collect();
    let e_mean = energies.iter().sum::<f64>() / energies.len() as f64;
    let e_std = (energies.iter().map(|e| (e - e_mean).powi(2)).sum::<f64>() / energies.len() as f64).sqrt();
    let first_ssl = clips[0].ssl.as_ref().expect("extracted above");
    let stats = CorpusStats {
        version: CACHE_VERSION,
        pitch_mean: pitch.mean,
        pitch_std: pitch.std,
        mel_mean,
        mel_std,
        energy_mean: e_mean,
        energy_std: e_std,
        train_clips: train.len(),
        ratio: cfg.ratio,
        log_floor: floor,
        ssl_backend: first_ssl.backend.clone(),
        ssl_layer: first_ssl.layer,
        ssl_dim: first_ssl.dim,
    };

    let mut unvoiced = Vec::new();
    for c in &mut clips {
        let track = lipsynth_signal::PitchTrack {
            f0: c.pitch_hz.clone(),
            voiced_prob: vec![],
        };
        let z = standardise_pitch(&track, &pitch, cfg.ratio)?;
        if z.all_unvoiced {
            log::warn!("clip {} has no voiced frames", c.id);
            unvoiced.push(c.id.clone());
        }
        c.pitch = Some(z.values);
        cache.store(c)?;
    }
    cache.write_stats(&stats)?;
    manifest_copy(&manifest, &cache)?;
    Ok(PreprocessReport {
        clips: clips.len(),
        all_unvoiced: unvoiced,
        stats,
    })
}

/// The cache keeps a manifest with absolute media paths.
fn manifest_copy(m: &Manifest, cache: &Cache) -> Result<()> {
    let mut copy = m.clone();
    for r in &mut copy.records {
        r.video = absolute(&m.resolve(&r.video));
        r.audio = absolute(&m.resolve(&r.audio));
        r.landmarks = r.landmarks.as_ref().map(|p| absolute(&m.resolve(p)));
    }
    copy.write(&cache.manifest_path())
}

fn absolute(p: &Path) -> std::path::PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Recomputes speech features for `layer` when the cache holds another one.
fn features_for_layer(cache: &Cache, clip: &CachedClip, spec: &SslSpec) -> Result<crate::units::SslFeatures> {
    if let Some(f) = &clip.ssl {
        if f.layer == spec.layer && f.backend == spec.backend {
            return Ok(f.clone());
        }
    }
    let manifest = cache.manifest()?;
    let rec = manifest
        .records
        .iter()
        .find(|r| r.id == clip.id)
        .ok_or_else(|| DataError::NotPrepared(format!("clip `{}` missing from cache manifest", clip.id)))?;
    let (wave, sr) = read_wav(&manifest.resolve(&rec.audio))?;
    spec.build()?.extract(&wave, sr)
}

/// Fits a codebook on the training clips' features at `spec.layer` and
/// quantises every clip, leaving the cache untouched.
pub fn quantise_corpus(cache: &Cache, k: usize, spec: &SslSpec, seed: u64) -> Result<QuantisedCorpus> {
    let manifest = cache.manifest()?;
    let mut clips = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let mut c = cache.load(&r.id)?;
        c.ssl = Some(features_for_layer(cache, &c, spec)?);
        clips.push(c);
    }
    let train: Vec<_> = {
        let t: Vec<_> = clips
            .iter()
            .filter(|c| c.split == Split::Train)
            .filter_map(|c| c.ssl.clone())
            .collect();
        if t.is_empty() {
            clips.iter().filter_map(|c| c.ssl.clone()).collect()
        } else {
            t
        }
    };
    let (codebook, fit) = fit_codebook(&train, k, seed)?;
    let mut units = Vec::with_capacity(clips.len());
    for c in &clips {
        let feats = c.ssl.as_ref().expect("features attached above");
        units.push(codebook.quantise(&length_match(feats, c.clip.len()))?);
    }
    Ok(QuantisedCorpus {
        codebook,
        fit,
        clips,
        units,
    })
}

#[derive(Debug, Clone)]
pub struct QuantisedCorpus {
    pub codebook: Codebook,
    pub fit: KMeansFit,
    /// Cached clips in manifest order, with the features used.
    pub clips: Vec<CachedClip>,
    /// Video-rate unit ids per clip.
    pub units: Vec<Vec<usize>>,
}

/// Fits the unit codebook on training clips and writes quantised targets
/// into every archive.
pub fn fit_units(cache: &Cache, k: usize, spec: &SslSpec, seed: u64) -> Result<(Codebook, KMeansFit)> {
    let q = quantise_corpus(cache, k, spec, seed)?;
    let hash = q.codebook.hash();
    for (mut c, u) in q.clips.into_iter().zip(q.units) {
        c.linguistic = Some(u);
        c.codebook_hash = Some(hash.clone());
        cache.store(&c)?;
    }
    q.codebook.save(&cache.codebook_path())?;
    Ok((q.codebook, q.fit))
}
