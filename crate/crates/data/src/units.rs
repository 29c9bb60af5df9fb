//! Discrete linguistic units: continuous speech features from a pluggable
//! backend, nearest-neighbour length matching to the video rate and K-means
//! quantisation.

use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use lipsynth_signal::{MelConfig, MelExtractor};

use crate::error::{format_err, io_err, DataError, Result};

/// Row-major `(frames, dim)` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SslFeatures {
    pub values: Vec<f64>,
    pub frames: usize,
    pub dim: usize,
    pub layer: usize,
    pub backend: String,
}

impl SslFeatures {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

pub trait SslBackend {
    fn id(&self) -> &str;
    fn layer(&self) -> usize;
    fn extract(&self, wave: &[f64], sample_rate: u32) -> Result<SslFeatures>;
}

/// Deterministic stand-in for a pre-trained speech model: a log filterbank
/// at a 20 ms stride, smoothed over a layer-dependent context and passed
/// through a fixed random projection with a `tanh`.
#[derive(Debug)]
pub struct SyntheticSsl {
    layer: usize,
    dim: usize,
    fbank: MelExtractor,
    projection: Vec<f64>,
}

pub const SYNTHETIC_STRIDE: usize = 320;
const SYNTHETIC_BANDS: usize = 40;

impl SyntheticSsl {
    pub fn new(layer: usize, dim: usize) -> Self {
        let fbank = MelExtractor::new(MelConfig {
            n_fft: 512,
            win_length: 400,
            hop: SYNTHETIC_STRIDE,
            n_mels: SYNTHETIC_BANDS,
            ..MelConfig::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0x5353_4c00 ^ layer as u64);
        let scale = 1.0 / (SYNTHETIC_BANDS as f64).sqrt();
        let projection = (0..dim * SYNTHETIC_BANDS)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v * scale
            })
            .collect();
        Self {
            layer,
            dim,
            fbank,
            projection,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Context radius in frames grows with depth.
    fn radius(&self) -> usize {
        self.layer / 8
    }
}

impl SslBackend for SyntheticSsl {
    fn id(&self) -> &str {
        "synthetic"
    }

    fn layer(&self) -> usize {
        self.layer
    }

    fn extract(&self, wave: &[f64], sample_rate: u32) -> Result<SslFeatures> {
        let mel = self.fbank.extract(wave, sample_rate)?;
        let (t, b) = (mel.frames, mel.bands);
        let floor = self.fbank.config().log_floor();
        let r = self.radius();
        let mut ctx = vec![0.0; t * b];
        for i in 0..t {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(t - 1);
            for j in lo..=hi {
                for k in 0..b {
                    ctx[i * b + k] += mel.frame(j)[k] - floor;
                }
            }
            let n = (hi - lo + 1) as f64;
            ctx[i * b..(i + 1) * b].iter_mut().for_each(|v| *v /= n);
        }
        let mut values = Vec::with_capacity(t * self.dim);
        for i in 0..t {
            let x = &ctx[i * b..(i + 1) * b];
            let mean = x.iter().sum::<f64>() / b as f64;
            for d in 0..self.dim {
                let w = &self.projection[d * b..(d + 1) * b];
                let s: f64 = w.iter().zip(x).map(|(w, v)| w * (v - mean)).sum();
                values.push((0.25 * s).tanh());
            }
        }
        Ok(SslFeatures {
            values,
            frames: t,
            dim: self.dim,
            layer: self.layer,
            backend: self.id().to_string(),
        })
    }
}

/// Runs `program [args..] <wav> <layer> <out.npy>` and reads a `(T, D)`
/// array from `out.npy`.
#[derive(Debug, Clone)]
pub struct ExternalSsl {
    pub command: Vec<String>,
    pub layer: usize,
}

impl ExternalSsl {
    pub fn new(command: &str, layer: usize) -> Result<Self> {
        let command: Vec<String> = command.split_whitespace().map(str::to_string).collect();
        if command.is_empty() {
            return Err(DataError::MissingDependency {
                name: "ssl backend `external`".into(),
                detail: "no command configured".into(),
            });
        }
        Ok(Self { command, layer })
    }
}

impl SslBackend for ExternalSsl {
    fn id(&self) -> &str {
        "external"
    }

    fn layer(&self) -> usize {
        self.layer
    }

    fn extract(&self, wave: &[f64], sample_rate: u32) -> Result<SslFeatures> {
        let dir = tempfile::tempdir().map_err(io_err(std::env::temp_dir()))?;
        let wav = dir.path().join("input.wav");
        let out = dir.path().join("features.npy");
        crate::clip::write_wav(&wav, wave, sample_rate)?;
        run_external(&self.command, "ssl backend `external`", &[
            wav.as_os_str(),
            self.layer.to_string().as_ref(),
            out.as_os_str(),
        ])?;
        let (values, frames, dim) = crate::clip::read_matrix_npy(&out)?;
        if frames == 0 {
            return Err(format_err(&out, "external backend returned no frames"));
        }
        Ok(SslFeatures {
            values,
            frames,
            dim,
            layer: self.layer,
            backend: self.id().to_string(),
        })
    }
}

/// Spawns an external helper; a missing program is a dependency error.
pub fn run_external(command: &[String], name: &str, extra: &[&std::ffi::OsStr]) -> Result<std::process::Output> {
    let missing = |detail: String| DataError::MissingDependency {
        name: name.to_string(),
        detail,
    };
    let (program, args) = command.split_first().ok_or_else(|| missing("no command configured".into()))?;
    let output = Command::new(program)
        .args(args)
        .args(extra)
        .output()
        .map_err(|e| missing(format!("cannot run `{program}`: {e}")))?;
    if !output.status.success() {
        return Err(missing(format!(
            "`{program}` exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    Ok(output)
}

/// Source row for output row `i` when resampling `t_f` rows to `t_v`:
/// `round(i * t_f / t_v)` clamped to the last row.
pub fn match_index(i: usize, t_f: usize, t_v: usize) -> usize {
    ((2 * i * t_f + t_v) / (2 * t_v)).min(t_f - 1)
}

/// Nearest-neighbour resampling along time to `t_v` rows.
pub fn length_match(f: &SslFeatures, t_v: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(t_v * f.dim);
    for i in 0..t_v {
        out.extend_from_slice(f.row(match_index(i, f.frames, t_v)));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// Row-major `(k, dim)`.
    pub centroids: Vec<f64>,
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    pub backend: String,
    pub layer: usize,
}

const CODEBOOK_MAGIC: &str = "lipsynth-codebook";
const CODEBOOK_VERSION: u32 = 1;

impl Codebook {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for c in 0..self.k {
            let d = sq_dist(x, self.centroid(c));
            if d < best {
                best = d;
                arg = c;
            }
        }
        arg
    }

    /// Cluster index of every row of a `(T, dim)` matrix.
    pub fn quantise(&self, rows: &[f64]) -> Result<Vec<usize>> {
        if self.dim == 0 || rows.len() % self.dim != 0 {
            return Err(DataError::InvalidInput(format!(
                "feature width does not match codebook dimension {}",
                self.dim
            )));
        }
        Ok(rows.chunks_exact(self.dim).map(|r| self.nearest(r)).collect())
    }

    /// Text format: a header line, then one centroid per line.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{CODEBOOK_MAGIC} v{CODEBOOK_VERSION} k={} dim={} seed={} backend={} layer={}\n",
            self.k, self.dim, self.seed, self.backend, self.layer
        );
        for c in 0..self.k {
            let row: Vec<String> = self.centroid(c).iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let bad = |d: &str| format_err(origin, d);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty codebook"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CODEBOOK_MAGIC) {
            return Err(bad("not a codebook file"));
        }
        if parts.next() != Some(&format!("v{CODEBOOK_VERSION}")) {
            return Err(bad("unsupported codebook version"));
        }
        let mut field = |key: &str| -> Result<String> {
            let p = parts.next().ok_or_else(|| bad("truncated header"))?;
            p.strip_prefix(&format!("{key}="))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{key}=` in header")))
        };
        let num = |s: String| s.parse::<u64>().map_err(|_| bad("malformed header number"));
        let k = num(field("k")?)? as usize;
        let dim = num(field("dim")?)? as usize;
        let seed = num(field("seed")?)?;
        let backend = field("backend")?;
        let layer = num(field("layer")?)? as usize;
        let mut centroids = Vec::with_capacity(k * dim);
        for line in lines.take(k) {
            for tok in line.split_whitespace() {
                centroids.push(tok.parse::<f64>().map_err(|_| bad("malformed centroid value"))?);
            }
        }
        if centroids.len() != k * dim || k == 0 {
            return Err(bad("centroid matrix does not match header"));
        }
        Ok(Self {
            centroids,
            k,
            dim,
            seed,
            backend,
            layer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::archive::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_text(&text, path)
    }

    /// Content hash recorded next to targets quantised with this codebook.
    pub fn hash(&self) -> String {
        crate::archive::sha256_hex(self.to_text().as_bytes())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop when inertia improves by less than this fraction.
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: 100,
            tol: 1e-4,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Inertia after every assignment step.
    pub inertia: Vec<f64>,
}

/// Lloyd iterations from a k-means++ start over `(n, dim)` points.
pub fn kmeans(points: &[f64], dim: usize, cfg: &KMeansConfig) -> Result<KMeansFit> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(DataError::InvalidInput("point matrix width mismatch".into()));
    }
    let n = points.len() / dim;
    let k = cfg.k;
    if k == 0 {
        return Err(DataError::InvalidInput("k must be positive".into()));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let distinct = {
        let mut keys: Vec<Vec<u64>> = (0..n).map(|i| row(i).iter().map(|v| v.to_bits()).collect()).collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    };
    if distinct < k {
        return Err(DataError::InvalidInput(format!(
            "{distinct} distinct points cannot form {k} clusters"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            pick = Some(i);
            if u < d {
                break;
            }
            u -= d;
        }
        let pick = pick.expect("a point away from every centroid exists");
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &centroids[start..start + dim]));
        }
    }

    let mut assignments = vec![0usize; n];
    let mut inertia = Vec::new();
    let mut book = Codebook {
        centroids,
        k,
        dim,
        seed: cfg.seed,
        backend: String::new(),
        layer: 0,
    };
    for _ in 0..cfg.max_iter.max(1) {
        let mut total = 0.0;
        for (i, a) in assignments.iter_mut().enumerate() {
            *a = book.nearest(row(i));
            total += sq_dist(row(i), book.centroid(*a));
        }
        let prev = inertia.last().copied();
        inertia.push(total);
        if let Some(p) = prev {
            if p - total <= cfg.tol * p {
                break;
            }
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    book.centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
    }
    Ok(KMeansFit {
        centroids: book.centroids,
        assignments,
        inertia,
    })
}

/// Fits a codebook on the rows of several feature sequences.
pub fn fit_codebook(features: &[SslFeatures], k: usize, seed: u64) -> Result<(Codebook, KMeansFit)> {
    let first = features
        .first()
        .ok_or_else(|| DataError::InvalidInput("no feature sequences to cluster".into()))?;
    let dim = first.dim;
    if features.iter().any(|f| f.dim != dim) {
        return Err(DataError::InvalidInput("feature sequences differ in width".into()));
    }
    let total: usize = features.iter().map(|f| f.frames).sum();
    if total < k {
        return Err(DataError::InvalidInput(format!("{total} frames cannot form {k} clusters")));
    }
    let mut points = Vec::with_capacity(total * dim);
    for f in features {
        points.extend_from_slice(&f.values);
    }
    let fit = kmeans(&points, dim, &KMeansConfig::new(k, seed))?;
    let book = Codebook {
        centroids: fit.centroids.clone(),
        k,
        dim,
        seed,
        backend: first.backend.clone(),
        layer: first.layer,
    };
    Ok((book, fit))
}

/// Backend selection as written in configs: `synthetic` or `external`.
#[derive(Debug, Clone, PartialEq)]
pub struct SslSpec {
    pub backend: String,
    pub layer: usize,
    pub dim: usize,
    pub command: Option<String>,
}

impl Default for SslSpec {
    fn default() -> Self {
        Self {
            backend: "synthetic".into(),
            layer: 12,
            dim: 64,
            command: None,
        }
    }
}

impl SslSpec {
    pub fn build(&self) -> Result<Box<dyn SslBackend>> {
        match self.backend.as_str() {
            "synthetic" => Ok(Box::new(SyntheticSsl::new(self.layer, self.dim))),
            "external" => {
                let cmd = self.command.as_deref().ok_or_else(|| DataError::MissingDependency {
                    name: "ssl backend `external`".into(),
                    detail: "set a command for the external backend".into(),
                })?;
                Ok(Box::new(ExternalSsl::new(cmd, self.layer)?))
            }
            other => Err(DataError::MissingDependency {
                name: format!("ssl backend `{other}`"),
                detail: "known backends are `synthetic` and `external`".into(),
            }),
        }
    }
}
