//! Toy audio-visual corpus: an ellipse "mouth" whose aperture follows a
//! hidden phone sequence, paired with harmonic audio whose pitch, loudness
//! and spectral peak depend on the same phones.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clip::{write_video_npy, write_wav, FRAME_SIZE, SAMPLE_RATE};
use crate::error::{DataError, Result};
use crate::manifest::{Manifest, ManifestRecord, Split};

/// Samples per video frame at 25 fps and 16 kHz.
pub const SAMPLES_PER_FRAME: usize = 640;

#[derive(Debug, Clone, Copy)]
struct Phone {
    letter: char,
    aperture: f64,
    width: f64,
    pitch: f64,
    formant: f64,
    loudness: f64,
}

/// Index 0 is silence.
const PHONES: [Phone; 8] = [
    Phone { letter: ' ', aperture: 0.05, width: 1.0, pitch: 1.0, formant: 0.0, loudness: 0.0 },
    Phone { letter: 'a', aperture: 1.0, width: 1.0, pitch: 1.0, formant: 750.0, loudness: 1.0 },
    Phone { letter: 'e', aperture: 0.6, width: 1.1, pitch: 1.08, formant: 520.0, loudness: 0.8 },
    Phone { letter: 'i', aperture: 0.3, width: 1.25, pitch: 1.18, formant: 2300.0, loudness: 0.7 },
    Phone { letter: 'o', aperture: 0.8, width: 0.7, pitch: 0.94, formant: 480.0, loudness: 0.9 },
    Phone { letter: 'u', aperture: 0.4, width: 0.55, pitch: 0.9, formant: 330.0, loudness: 0.6 },
    Phone { letter: 'm', aperture: 0.0, width: 0.95, pitch: 0.85, formant: 260.0, loudness: 0.4 },
    Phone { letter: 's', aperture: 0.2, width: 1.15, pitch: 1.0, formant: 4500.0, loudness: 0.35 },
];

pub const N_PHONES: usize = PHONES.len();

pub fn phone_letter(p: u8) -> char {
    PHONES[p as usize].letter
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub clips: usize,
    pub seed: u64,
    pub frames: usize,
    pub speakers: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            clips: 8,
            seed: 0,
            frames: 50,
            speakers: 4,
        }
    }
}

/// One generated clip before it is written out.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    pub id: String,
    pub speaker: usize,
    pub phones: Vec<u8>,
    pub text: String,
    pub frames: Vec<u8>,
    pub audio: Vec<f64>,
}

fn speaker_f0(speaker: usize) -> f64 {
    [110.0, 165.0, 220.0, 135.0, 190.0, 250.0][speaker % 6]
}

/// Phone sequence of `frames` video frames made of whole words separated
/// by silence, and its transcript.
fn phone_sequence(frames: usize, rng: &mut ChaCha8Rng) -> (Vec<u8>, String) {
    let mut seq = vec![0u8; rng.random_range(1..=3)];
    let mut words = Vec::new();
    loop {
        let n = rng.random_range(2..=4);
        let word: Vec<u8> = (0..n).map(|_| rng.random_range(1..N_PHONES as u8)).collect();
        let durs: Vec<usize> = (0..n).map(|_| rng.random_range(2..=4)).collect();
        let gap = rng.random_range(1..=3);
        if seq.len() + durs.iter().sum::<usize>() > frames {
            break;
        }
        for (p, d) in word.iter().zip(&durs) {
            seq.extend(std::iter::repeat_n(*p, *d));
        }
        words.push(word.iter().map(|&p| phone_letter(p)).collect::<String>());
        seq.extend(std::iter::repeat_n(0, gap));
    }
    seq.resize(frames, 0);
    (seq, words.join(" "))
}

fn render_frame(phone: Phone, prev: Phone, speaker: usize, out: &mut [u8]) {
    let s = FRAME_SIZE as f64;
    let aperture = 0.7 * phone.aperture + 0.3 * prev.aperture;
    let width = 0.7 * phone.width + 0.3 * prev.width;
    let cx = s / 2.0 + [0.0, 3.0, -3.0, 1.5][speaker % 4];
    let cy = s * 0.6 + [0.0, -2.0, 2.0, 3.0][speaker % 4];
    let rx = 24.0 * width;
    let ry = 2.5 + 16.0 * aperture;
    let skin = 0.55 + 0.06 * (speaker % 3) as f64;
    for r in 0..FRAME_SIZE {
        for c in 0..FRAME_SIZE {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let d = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
            let shade = skin + 0.08 * (y / s - 0.5);
            let v = if d < 1.0 {
                0.08
            } else if d < 1.0 + 6.0 / ry.max(6.0) {
                0.32
            } else {
                shade
            };
            out[r * FRAME_SIZE + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
}

fn synthesise_audio(phones: &[u8], speaker: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = phones.len() * SAMPLES_PER_FRAME;
    let sr = SAMPLE_RATE as f64;
    let base = speaker_f0(speaker);
    let mut out = Vec::with_capacity(n);
    let (mut amp, mut f0, mut formant) = (0.0f64, base, 500.0f64);
    let mut phase = 0.0f64;
    // one-pole smoothing with a ~5 ms time constant
    let alpha = 1.0 - (-1.0 / (0.005 * sr)).exp();
    for i in 0..n {
        let p = PHONES[phones[i / SAMPLES_PER_FRAME] as usize];
        let voiced = p.loudness > 0.0;
        amp += alpha * (p.loudness - amp);
        if voiced {
            f0 += alpha * (base * p.pitch - f0);
            formant += alpha * (p.formant - formant);
        }
        phase += std::f64::consts::TAU * f0 / sr;
        if phase > std::f64::consts::TAU * 1e3 {
            phase -= std::f64::consts::TAU * 1e3;
        }
        let mut s = 0.0;
        let mut k = 1;
        while k as f64 * f0 < 7000.0 {
            let f = k as f64 * f0;
            let g = (-((f - formant) / 400.0).powi(2)).exp() + 0.6 / k as f64;
            s += g * (k as f64 * phase).sin();
            k += 1;
        }
        let noise = if p.letter == 's' { rng.random_range(-0.5..0.5) } else { 0.0 };
        out.push(0.12 * amp * (s + noise));
    }
    out
}

fn split_for(i: usize, clips: usize) -> Split {
    if clips < 5 {
        return Split::Train;
    }
    match i % 10 {
        4 => Split::Val,
        9 => Split::Test,
        _ => Split::Train,
    }
}

pub fn generate_clip(i: usize, cfg: &SyntheticConfig) -> SyntheticClip {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i as u64);
    let speaker = i % cfg.speakers.max(1);
    let (phones, text) = phone_sequence(cfg.frames, &mut rng);
    let plane = FRAME_SIZE * FRAME_SIZE;
    let mut frames = vec![0u8; cfg.frames * plane];
    for t in 0..cfg.frames {
        let prev = PHONES[phones[t.saturating_sub(1)] as usize];
        render_frame(PHONES[phones[t] as usize], prev, speaker, &mut frames[t * plane..(t + 1) * plane]);
    }
    let audio = synthesise_audio(&phones, speaker, &mut rng);
    SyntheticClip {
        id: format!("clip{i:04}"),
        speaker,
        phones,
        text,
        frames,
        audio,
    }
}

/// Writes `video/`, `audio/` and `manifest.jsonl` under `dir`.
pub fn generate(dir: &Path, cfg: &SyntheticConfig) -> Result<Manifest> {
    if cfg.clips == 0 || cfg.frames == 0 {
        return Err(DataError::InvalidInput("need at least one clip of one frame".into()));
    }
    let mut records = Vec::with_capacity(cfg.clips);
    for i in 0..cfg.clips {
        let clip = generate_clip(i, cfg);
        let video = Path::new("video").join(format!("{}.npy", clip.id));
        let audio = Path::new("audio").join(format!("{}.wav", clip.id));
        write_video_npy(&dir.join(&video), &clip.frames, cfg.frames, FRAME_SIZE, FRAME_SIZE)?;
        write_wav(&dir.join(&audio), &clip.audio, SAMPLE_RATE)?;
        records.push(ManifestRecord {
            id: clip.id,
            video,
            audio,
            speaker: clip.speaker,
            split: split_for(i, cfg.clips),
            landmarks: None,
            text: Some(clip.text),
            phones: Some(clip.phones),
        });
    }
    let manifest = Manifest {
        root: dir.to_path_buf(),
        records,
    };
    manifest.write(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
