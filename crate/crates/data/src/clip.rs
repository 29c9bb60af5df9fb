use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use npyz::WriterBuilder;

use crate::error::{format_err, io_err, DataError, Result};

pub const FRAME_SIZE: usize = 112;
pub const FRAME_RATE: f64 = 25.0;
pub const SAMPLE_RATE: u32 = 16_000;

/// Grayscale lip-region frames in `[0, 1]`, row-major `(T, size, size)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<f32>,
    n_frames: usize,
    size: usize,
    pub speaker: usize,
}

impl VideoClip {
    pub fn new(frames: Vec<f32>, n_frames: usize, size: usize, speaker: usize) -> Result<Self> {
        if n_frames == 0 || size == 0 {
            return Err(DataError::InvalidInput("a clip needs at least one non-empty frame".into()));
        }
        if frames.len() != n_frames * size * size {
            return Err(DataError::InvalidInput(format!(
                "{} pixel values do not form {n_frames} frames of {size}x{size}",
                frames.len()
            )));
        }
        if let Some(v) = frames.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::InvalidInput(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            frames,
            n_frames,
            size,
            speaker,
        })
    }

    pub fn len(&self) -> usize {
        self.n_frames
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames == 0
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.frames[t * n..(t + 1) * n]
    }

    pub(crate) fn frames_mut(&mut self) -> &mut [f32] {
        &mut self.frames
    }

    /// Frames `[start, start + len)`; positions past the end are black.
    pub fn window(&self, start: usize, len: usize) -> Self {
        let n = self.size * self.size;
        let mut out = vec![0.0; len * n];
        let avail = self.n_frames.saturating_sub(start).min(len);
        out[..avail * n].copy_from_slice(&self.frames[start * n..(start + avail) * n]);
        Self {
            frames: out,
            n_frames: len,
            size: self.size,
            speaker: self.speaker,
        }
    }
}

/// Raw frames of any square or rectangular size, `(T, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVideo {
    pub frames: Vec<f32>,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
}

/// Reads `(T, H, W)` or `(T, 1, H, W)` arrays of `u8` (scaled by 1/255),
/// `f32` or `f64`.
pub fn read_video_npy(path: &Path) -> Result<RawVideo> {
    let file = File::open(path).map_err(io_err(path))?;
    let npy = npyz::NpyFile::new(BufReader::new(file)).map_err(io_err(path))?;
    let shape: Vec<usize> = npy.shape().iter().map(|&d| d as usize).collect();
    let (t, h, w) = match shape.as_slice() {
        [t, h, w] => (*t, *h, *w),
        [t, 1, h, w] => (*t, *h, *w),
        other => return Err(format_err(path, format!("expected (T, H, W) frames, found {other:?}"))),
    };
    let frames: Vec<f32> = match type_code(&npy.dtype()).as_str() {
        "u1" => npy
            .into_vec::<u8>()
            .map_err(io_err(path))?
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect(),
        "f4" => npy.into_vec::<f32>().map_err(io_err(path))?,
        "f8" => npy
            .into_vec::<f64>()
            .map_err(io_err(path))?
            .into_iter()
            .map(|v| v as f32)
            .collect(),
        other => return Err(format_err(path, format!("unsupported frame dtype `{other}`"))),
    };
    if frames.len() != t * h * w {
        return Err(format_err(path, "truncated frame array"));
    }
    Ok(RawVideo {
        frames,
        n_frames: t,
        height: h,
        width: w,
    })
}

/// Little-endian or byte-order-free type code such as `u1` or `f4`.
fn type_code(dtype: &npyz::DType) -> String {
    match dtype {
        npyz::DType::Plain(ts) => ts.to_string().trim_start_matches(['<', '|', '=']).to_string(),
        other => other.descr(),
    }
}

/// Writes frames as `u8` `(T, H, W)`.
pub fn write_video_npy(path: &Path, frames: &[u8], n_frames: usize, height: usize, width: usize) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = npyz::WriteOptions::new()
            .default_dtype()
            .shape(&[n_frames as u64, height as u64, width as u64])
            .writer(&mut buf)
            .begin_nd()
            .map_err(io_err(path))?;
        w.extend(frames.iter().copied()).map_err(io_err(path))?;
        w.finish().map_err(io_err(path))?;
    }
    crate::archive::write_atomic(path, &buf)
}

/// Reads a 2-D float array `(rows, cols)` from `.npy`.
pub fn read_matrix_npy(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let file = File::open(path).map_err(io_err(path))?;
    let npy = npyz::NpyFile::new(BufReader::new(file)).map_err(io_err(path))?;
    let shape: Vec<usize> = npy.shape().iter().map(|&d| d as usize).collect();
    let [r, c] = shape.as_slice() else {
        return Err(format_err(path, format!("expected a 2-D array, found {shape:?}")));
    };
    let (r, c) = (*r, *c);
    let v: Vec<f64> = match type_code(&npy.dtype()).as_str() {
        "f4" => npy
            .into_vec::<f32>()
            .map_err(io_err(path))?
            .into_iter()
            .map(f64::from)
            .collect(),
        "f8" => npy.into_vec::<f64>().map_err(io_err(path))?,
        other => return Err(format_err(path, format!("unsupported dtype `{other}`"))),
    };
    Ok((v, r, c))
}

/// Writes a 2-D `f32` array.
pub fn write_matrix_npy(path: &Path, values: &[f64], rows: usize, cols: usize) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = npyz::WriteOptions::new()
            .default_dtype()
            .shape(&[rows as u64, cols as u64])
            .writer(&mut buf)
            .begin_nd()
            .map_err(io_err(path))?;
        w.extend(values.iter().map(|&v| v as f32)).map_err(io_err(path))?;
        w.finish().map_err(io_err(path))?;
    }
    crate::archive::write_atomic(path, &buf)
}

/// Mono waveform in `[-1, 1]` and its sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| format_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(format_err(path, format!("expected mono audio, found {} channels", spec.channels)));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(path, e))?,
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format_err(path, e))?
        }
    };
    Ok((samples, spec.sample_rate))
}

/// Writes 16-bit PCM, clipping to `[-1, 1]`.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec).map_err(|e| format_err(path, e))?;
        for &s in samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            w.write_sample(v).map_err(|e| format_err(path, e))?;
        }
        w.finalize().map_err(|e| format_err(path, e))?;
    }
    crate::archive::write_atomic(path, &cursor.into_inner())
}

/// Crops `size x size` windows centred on per-frame mouth landmarks; the
/// centre of each frame is the mean of its points. Out-of-image pixels are 0.
pub fn center_crop(raw: &RawVideo, landmarks: &[Vec<(f64, f64)>], size: usize) -> Result<Vec<f32>> {
    if landmarks.len() != raw.n_frames {
        return Err(DataError::InvalidInput(format!(
            "{} landmark frames for {} video frames",
            landmarks.len(),
            raw.n_frames
        )));
    }
    let mut out = vec![0.0; raw.n_frames * size * size];
    let plane = raw.height * raw.width;
    for (t, pts) in landmarks.iter().enumerate() {
        if pts.is_empty() {
            return Err(DataError::InvalidInput(format!("frame {t} has no landmarks")));
        }
        let cx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let cy = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let x0 = cx.round() as i64 - (size / 2) as i64;
        let y0 = cy.round() as i64 - (size / 2) as i64;
        let src = &raw.frames[t * plane..(t + 1) * plane];
        let dst = &mut out[t * size * size..(t + 1) * size * size];
        for r in 0..size {
            let y = y0 + r as i64;
            if y < 0 || y >= raw.height as i64 {
                continue;
            }
            for c in 0..size {
                let x = x0 + c as i64;
                if x >= 0 && x < raw.width as i64 {
                    dst[r * size + c] = src[y as usize * raw.width + x as usize];
                }
            }
        }
    }
    Ok(out)
}

/// Landmark files are JSON: one list of `[x, y]` points per frame.
pub fn read_landmarks(path: &Path) -> Result<Vec<Vec<(f64, f64)>>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str::<Vec<Vec<(f64, f64)>>>(&text).map_err(|e| format_err(path, e))
}
