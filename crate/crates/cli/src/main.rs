use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lipsynth_core::{CoreError, DType, Scalar};
use lipsynth_data::clip::{center_crop, read_landmarks, read_video_npy, write_matrix_npy, write_wav};
use lipsynth_data::{
    fit_units, generate, preprocess, Cache, DataError, Manifest, PreprocessConfig, Split, SslSpec, SyntheticConfig,
    VideoClip, SAMPLE_RATE,
};
use lipsynth_pipeline::checkpoint::peek;
use lipsynth_pipeline::{
    evaluate, format_moments_row, format_sweep_table, plot_mel_comparison, run_experiment, sweep_units, Asr,
    EchoAsr, ErrorClass, EvalOptions, ExperimentConfig, ExternalAsr, ExternalG2p, G2p, LetterG2p, PipelineError,
    Pooling, SweepConfig, Synthesizer, TrainData, Vocoder, DEFAULT_TEMPERATURE,
};
use lipsynth_signal::{MelConfig, SignalError};

#[derive(Parser)]
#[command(name = "lipsynth", version, about = "Speech synthesis from silent lip video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the feature cache from a manifest.
    Preprocess(PreprocessArgs),
    /// Fit the speech-unit codebook and write unit targets into the cache.
    FitUnits(FitUnitsArgs),
    /// Train a model on the cache.
    Train(TrainArgs),
    /// Synthesise a waveform from a silent clip.
    Synth(SynthArgs),
    /// Synthesise, transcribe and score a manifest split.
    Eval(EvalArgs),
    /// Score every (clusters, layer) unit configuration.
    SweepUnits(SweepArgs),
    /// Write the synthetic audio-visual corpus.
    GenSynthetic(GenArgs),
}

#[derive(Args, Clone)]
struct CacheArg {
    /// Feature cache directory.
    #[arg(long, env = "LIPSYNTH_CACHE")]
    cache: PathBuf,
}

#[derive(Args, Clone)]
struct SslArgs {
    /// Speech feature backend: `synthetic` or `external`.
    #[arg(long, default_value = "synthetic")]
    ssl_backend: String,
    /// Feature width of the synthetic backend.
    #[arg(long, default_value_t = 64)]
    ssl_dim: usize,
    /// Command for the external backend, called as `<cmd> <wav> <layer> <out.npy>`.
    #[arg(long)]
    ssl_command: Option<String>,
}

impl SslArgs {
    fn spec(&self, layer: usize) -> SslSpec {
        SslSpec {
            backend: self.ssl_backend.clone(),
            layer,
            dim: self.ssl_dim,
            command: self.ssl_command.clone(),
        }
    }
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    cache: CacheArg,
    #[command(flatten)]
    ssl: SslArgs,
    #[arg(long, default_value_t = 12)]
    layer: usize,
}

#[derive(Args)]
struct FitUnitsArgs {
    #[command(flatten)]
    cache: CacheArg,
    #[arg(long, default_value_t = 200)]
    clusters: usize,
    #[arg(long, default_value_t = 12)]
    layer: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    ssl: SslArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cache: CacheArg,
    /// Run directory for checkpoints and metrics.
    #[arg(long)]
    out: PathBuf,
    /// TOML configuration layered over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key.path=value` overrides layered over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VocoderArg {
    Griffinlim,
    External,
}

#[derive(Args, Clone)]
struct VocoderArgs {
    #[arg(long, value_enum, default_value = "griffinlim")]
    vocoder: VocoderArg,
    /// Called as `<cmd> <mel.npy> <out.wav>`.
    #[arg(long)]
    vocoder_command: Option<String>,
    /// Fail instead of falling back to Griffin-Lim when the external vocoder fails.
    #[arg(long)]
    no_fallback: bool,
    #[arg(long, default_value_t = 60)]
    griffin_lim_iters: usize,
}

impl VocoderArgs {
    fn build(&self) -> Result<Vocoder> {
        Ok(match self.vocoder {
            VocoderArg::Griffinlim => Vocoder::GriffinLim {
                iterations: self.griffin_lim_iters,
                seed: 0,
            },
            VocoderArg::External => Vocoder::External {
                command: self
                    .vocoder_command
                    .clone()
                    .ok_or_else(|| usage("--vocoder external needs --vocoder-command"))?,
                fallback: !self.no_fallback,
            },
        })
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// `(T, H, W)` uint8 frames.
    #[arg(long)]
    video: PathBuf,
    /// Per-frame mouth landmarks, needed unless frames are already cropped.
    #[arg(long)]
    landmarks: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    speaker: usize,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    vocoder: VocoderArgs,
    /// Output waveform.
    #[arg(long)]
    out: PathBuf,
    /// Also write the refined log-mel as a `(frames, bands)` array.
    #[arg(long)]
    dump_mel: Option<PathBuf>,
    /// Coarse and refined mel side by side.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AsrArg {
    Echo,
    External,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum G2pArg {
    Letters,
    External,
    None,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the cache's manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, env = "LIPSYNTH_CACHE")]
    cache: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_enum, default_value = "echo")]
    asr: AsrArg,
    /// Called as `<cmd> <wav>`, transcript on standard output.
    #[arg(long)]
    asr_command: Option<String>,
    /// JSON object of clip id to transcript for the echo backend;
    /// without it the references are echoed.
    #[arg(long)]
    transcripts: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "letters")]
    g2p: G2pArg,
    /// Called as `<cmd> <text>`, phonemes on standard output.
    #[arg(long)]
    g2p_command: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "global")]
    pooling: String,
    #[command(flatten)]
    vocoder: VocoderArgs,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Evaluate at most this many clips; 0 means all.
    #[arg(long, default_value_t = 0)]
    limit: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cache: CacheArg,
    #[arg(long, value_delimiter = ',', default_values_t = [100, 200])]
    clusters: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 12, 24])]
    layers: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    ssl: SslArgs,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    clips: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Video frames per clip.
    #[arg(long, default_value_t = 50)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    speakers: usize,
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn class_code(c: ErrorClass) -> u8 {
    match c {
        ErrorClass::Usage => 2,
        ErrorClass::MissingDependency => 3,
        ErrorClass::Data => 4,
        ErrorClass::Numerical => 5,
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return class_code(p.class());
        }
        if let Some(d) = cause.downcast_ref::<DataError>() {
            return match d {
                DataError::MissingDependency { .. } => 3,
                DataError::Signal(SignalError::Degenerate(_)) => 5,
                _ => 4,
            };
        }
        if let Some(c) = cause.downcast_ref::<CoreError>() {
            return match c {
                CoreError::NonFinite { .. } => 5,
                CoreError::Config(_) => 2,
                _ => 4,
            };
        }
        if let Some(SignalError::Degenerate(_)) = cause.downcast_ref::<SignalError>() {
            return 5;
        }
    }
    4
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::FitUnits(a) => cmd_fit_units(a),
        Command::Train(a) => cmd_train(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::SweepUnits(a) => cmd_sweep(a),
        Command::GenSynthetic(a) => cmd_gen(a),
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let m = generate(
        &a.out,
        &SyntheticConfig {
            clips: a.clips,
            seed: a.seed,
            frames: a.frames,
            speakers: a.speakers,
        },
    )?;
    println!("wrote {} clips to {}", m.records.len(), a.out.join("manifest.jsonl").display());
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    let cfg = PreprocessConfig {
        ssl: a.ssl.spec(a.layer),
        ..PreprocessConfig::default()
    };
    let r = preprocess(&a.manifest, &a.cache.cache, &cfg)?;
    println!(
        "cached {} clips in {}; pitch mean {:.2} Hz, std {:.2} Hz",
        r.clips,
        a.cache.cache.display(),
        r.stats.pitch_mean,
        r.stats.pitch_std
    );
    if !r.all_unvoiced.is_empty() {
        println!("no voiced frames in: {}", r.all_unvoiced.join(", "));
    }
    Ok(())
}

fn cmd_fit_units(a: FitUnitsArgs) -> Result<()> {
    let cache = Cache::open(&a.cache.cache)?;
    let (codebook, fit) = fit_units(&cache, a.clusters, &a.ssl.spec(a.layer), a.seed)?;
    println!(
        "{} clusters at layer {}: inertia {:.4} after {} iterations; codebook {}",
        a.clusters,
        a.layer,
        fit.inertia.last().copied().unwrap_or(f64::NAN),
        fit.inertia.len(),
        codebook.hash()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cache = Cache::open(&a.cache.cache)?;
    let file = match &a.config {
        Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let mut overrides = a.set.clone();
    if let Some(p) = a.precision {
        overrides.push(format!("precision={}", precision_name(p)));
    }
    let cfg = ExperimentConfig::resolve(file.as_deref(), &overrides)?;
    let dtype = match &a.resume {
        Some(r) => peek(r)?.1,
        None => match cfg.precision {
            lipsynth_pipeline::Precision::F32 => DType::F32,
            lipsynth_pipeline::Precision::F64 => DType::F64,
        },
    };
    let data = TrainData::from_cache(&cache)?;
    let s = match dtype {
        DType::F32 => run_experiment::<f32>(&data, &cfg, &a.out, a.resume.as_deref())?,
        DType::F64 => run_experiment::<f64>(&data, &cfg, &a.out, a.resume.as_deref())?,
    };
    println!(
        "trained {} steps; best validation mel L1 {}; last checkpoint {}",
        s.steps,
        s.best_val.map_or("n/a".into(), |v| format!("{v:.4}")),
        s.last_checkpoint.display()
    );
    Ok(())
}

fn precision_name(p: PrecisionArg) -> &'static str {
    match p {
        PrecisionArg::F32 => "f32",
        PrecisionArg::F64 => "f64",
    }
}

fn read_clip(video: &Path, landmarks: Option<&Path>, size: usize, speaker: usize) -> Result<VideoClip> {
    let raw = read_video_npy(video)?;
    let pixels = match landmarks {
        Some(l) => center_crop(&raw, &read_landmarks(l)?, size)?,
        None if raw.height == size && raw.width == size => raw.frames,
        None => bail!(
            "{}: frames are {}x{}; pass --landmarks to crop them to {size}x{size}",
            video.display(),
            raw.height,
            raw.width
        ),
    };
    Ok(VideoClip::new(pixels, raw.n_frames, size, speaker)?)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    match peek(&a.checkpoint)?.1 {
        DType::F32 => synth_with::<f32>(&a),
        DType::F64 => synth_with::<f64>(&a),
    }
}

fn synth_with<T: Scalar>(a: &SynthArgs) -> Result<()> {
    let s = Synthesizer::<T>::load(&a.checkpoint)?;
    let clip = read_clip(&a.video, a.landmarks.as_deref(), s.cfg.model.frame_size, a.speaker)?;
    let out = s.synthesise(&clip, a.speaker, a.temperature, a.seed)?;
    let wave = a.vocoder.build()?.vocode(&out.refined, &MelConfig::default())?;
    write_wav(&a.out, &wave, SAMPLE_RATE)?;
    if let Some(p) = &a.dump_mel {
        write_matrix_npy(p, &out.refined.values, out.refined.frames, out.refined.bands)?;
    }
    if let Some(p) = &a.plot {
        plot_mel_comparison(&[&out.coarse, &out.refined], p)?;
    }
    println!(
        "wrote {:.2} s of audio to {}",
        wave.len() as f64 / SAMPLE_RATE as f64,
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    match peek(&a.checkpoint)?.1 {
        DType::F32 => eval_with::<f32>(&a),
        DType::F64 => eval_with::<f64>(&a),
    }
}

fn eval_with<T: Scalar>(a: &EvalArgs) -> Result<()> {
    let manifest_path = match (&a.manifest, &a.cache) {
        (Some(m), _) => m.clone(),
        (None, Some(c)) => Cache::open(c)?.manifest_path(),
        (None, None) => return Err(usage("pass --manifest or --cache (or set LIPSYNTH_CACHE)")),
    };
    let manifest = Manifest::read(&manifest_path)?;
    let split: Split = a.split.parse().map_err(|e: DataError| usage(e.to_string()))?;
    let pooling = match a.pooling.as_str() {
        "global" => Pooling::Global,
        "per-utterance" => Pooling::PerUtterance,
        other => return Err(usage(format!("unknown pooling `{other}`; use global or per-utterance"))),
    };
    let asr: Box<dyn Asr> = match a.asr {
        AsrArg::Echo => match &a.transcripts {
            Some(p) => Box::new(EchoAsr::from_json_file(p)?),
            None => {
                log::warn!("echo ASR without --transcripts returns the references; error rates will be zero");
                Box::new(EchoAsr::from_manifest(&manifest))
            }
        },
        AsrArg::External => Box::new(ExternalAsr::new(
            a.asr_command
                .as_deref()
                .ok_or_else(|| usage("--asr external needs --asr-command"))?,
        )),
    };
    let external_g2p;
    let g2p: Option<&dyn G2p> = match a.g2p {
        G2pArg::Letters => Some(&LetterG2p),
        G2pArg::None => None,
        G2pArg::External => {
            let cmd = a
                .g2p_command
                .as_deref()
                .ok_or_else(|| usage("--g2p external needs --g2p-command"))?;
            external_g2p = ExternalG2p {
                command: cmd.split_whitespace().map(str::to_string).collect(),
            };
            Some(&external_g2p)
        }
    };
    let synth = Synthesizer::<T>::load(&a.checkpoint)?;
    let opts = EvalOptions {
        split,
        temperature: a.temperature,
        seed: a.seed,
        pooling,
        vocoder: a.vocoder.build()?,
        plot: a.plot.clone(),
        limit: a.limit,
        ..EvalOptions::default()
    };
    let r = evaluate(&synth, &manifest, asr.as_ref(), g2p, &opts)?;
    println!("{} clips, {} ASR", r.n_samples, r.asr);
    println!("WER {:.2}  CER {:.2}  PER {}", r.wer, r.cer, r.per.map_or("n/a".into(), |p| format!("{p:.2}")));
    println!("energy MAE {:.4}", r.energy_mae);
    println!("pitch | mean | std | skewness | excess kurtosis");
    for (label, m) in [("Ground Truth", &r.pitch_reference), ("Generated", &r.pitch_generated)] {
        match m {
            Some(m) => println!("{}", format_moments_row(label, m)),
            None => println!("{label} | n/a"),
        }
    }
    if let Some(p) = &a.report {
        r.write(p)?;
        println!("report written to {}", p.display());
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let cache = Cache::open(&a.cache.cache)?;
    let cfg = SweepConfig {
        clusters: a.clusters.clone(),
        layers: a.layers.clone(),
        ssl: a.ssl.spec(0),
        seed: a.seed,
    };
    let rows = sweep_units(&cache, &cfg)?;
    print!("{}", format_sweep_table(&rows));
    if let Some(p) = &a.report {
        let report = serde_json::json!({
            "columns": ["#clusters", "layer", "WER", "PER", "CER"],
            "rows": rows,
        });
        let text = serde_json::to_string_pretty(&report)?;
        lipsynth_data::write_atomic(p, text.as_bytes())?;
        println!("report written to {}", p.display());
    }
    Ok(())
}
