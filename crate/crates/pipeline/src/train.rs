//! The optimisation loop: teacher-forced forward pass, the combined
//! objective, AdamW updates, validation and checkpoints.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use lipsynth_core::loss::{mel_loss, total_loss_var, variance_losses};
use lipsynth_core::{
    AdamW, Ctx, DataStats, Graph, LipToSpeech, LossComponents, ModelRng, NllReduction, ParamStore, Reduction,
    Scalar, Tensor, VarianceSource,
};
use lipsynth_data::{
    augment, sample_window, window_at, AugmentConfig, Cache, CorpusStats, Example, Split, Window, WindowMode,
};

use crate::checkpoint::{step_file_name, Checkpoint};
use crate::config::ExperimentConfig;
use crate::error::{io_err, PipelineError, Result};

/// Mixes two integers into a well-spread seed.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Clips and statistics a run trains on.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub stats: CorpusStats,
    pub codebook_hash: Option<String>,
}

impl TrainData {
    /// Training and validation examples from a prepared cache. An empty
    /// validation split falls back to the training clips.
    pub fn from_cache(cache: &Cache) -> Result<Self> {
        let stats = cache.stats()?;
        let train: Vec<(_, Example)> = cache.examples(Split::Train)?;
        if train.is_empty() {
            return Err(PipelineError::InvalidInput("the cache has no training clips".into()));
        }
        let hash = train[0].0.codebook_hash.clone();
        let mut val: Vec<Example> = cache.examples(Split::Val)?.into_iter().map(|(_, e)| e).collect();
        let train: Vec<Example> = train.into_iter().map(|(_, e)| e).collect();
        if val.is_empty() {
            val = train.clone();
        }
        Ok(Self {
            train,
            val,
            stats,
            codebook_hash: hash,
        })
    }

    pub fn data_stats(&self) -> DataStats {
        DataStats {
            mel_mean: self.stats.mel_mean.clone(),
            mel_std: self.stats.mel_std.clone(),
            energy_mean: self.stats.energy_mean,
            energy_std: self.stats.energy_std,
        }
    }
}

/// Stacked windows ready for the network.
#[derive(Debug, Clone)]
pub struct Batch<T: Scalar> {
    /// `(B, L, S, S, 1)`
    pub frames: Tensor<T>,
    pub speakers: Vec<usize>,
    /// `B * L`
    pub linguistic: Vec<usize>,
    /// `(B, L)`
    pub pitch: Tensor<T>,
    /// `(B, L)`
    pub energy: Tensor<T>,
    /// `(B, ratio * L, bands)`
    pub mel: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_windows(windows: &[Window]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| PipelineError::InvalidInput("empty batch".into()))?;
        let (b, l, s) = (windows.len(), first.clip.len(), first.clip.size());
        let (tm, bands) = (first.mel.frames, first.mel.bands);
        let mut frames = Vec::with_capacity(b * l * s * s);
        let mut mel = Vec::with_capacity(b * tm * bands);
        let mut ling = Vec::with_capacity(b * l);
        let mut pitch = Vec::with_capacity(b * l);
        let mut energy = Vec::with_capacity(b * l);
        for w in windows {
            if w.clip.len() != l || w.clip.size() != s || w.mel.frames != tm || w.mel.bands != bands {
                return Err(PipelineError::InvalidInput("batch windows differ in shape".into()));
            }
            frames.extend(w.clip.pixels().iter().map(|&p| T::lit(p as f64)));
            mel.extend(w.mel.values.iter().map(|&v| T::lit(v)));
            ling.extend_from_slice(&w.targets.linguistic);
            pitch.extend(w.targets.pitch.iter().map(|&v| T::lit(v)));
            energy.extend(w.targets.energy.iter().map(|&v| T::lit(v)));
        }
        Ok(Self {
            frames: Tensor::from_vec(frames, &[b, l, s, s, 1])?,
            speakers: windows.iter().map(|w| w.clip.speaker).collect(),
            linguistic: ling,
            pitch: Tensor::from_vec(pitch, &[b, l])?,
            energy: Tensor::from_vec(energy, &[b, l])?,
            mel: Tensor::from_vec(mel, &[b, tm, bands])?,
        })
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// `train` or `val`.
    pub kind: String,
    /// Updates applied before this record was measured.
    pub step: u64,
    pub epoch: usize,
    pub total: f64,
    pub mel: f64,
    pub linguistic: f64,
    pub pitch: f64,
    pub energy: f64,
    pub post: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    pub wall_time: f64,
}

impl MetricRecord {
    fn new(kind: &str, step: u64, epoch: usize, c: &LossComponents, total: f64) -> Self {
        Self {
            kind: kind.into(),
            step,
            epoch,
            total,
            mel: c.mel,
            linguistic: c.linguistic,
            pitch: c.pitch,
            energy: c.energy,
            post: c.post,
            grad_norm: None,
            wall_time: 0.0,
        }
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| PipelineError::InvalidInput(format!("{}: {e}", path.display()))))
        .collect()
}

/// Model, parameters and optimiser of one run.
pub struct Trainer<T: Scalar> {
    pub cfg: ExperimentConfig,
    pub model: LipToSpeech,
    pub store: ParamStore<T>,
    pub opt: AdamW<T>,
    pub step: u64,
    pub best_val: Option<f64>,
    pub codebook_hash: Option<String>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: ExperimentConfig, stats: &DataStats, codebook_hash: Option<String>) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ModelRng::seed_from_u64(mix_seed(cfg.train.seed, 0x1417));
        let model = LipToSpeech::new(cfg.model.clone(), &mut store, &mut rng)?;
        model.set_data_stats(&mut store, stats)?;
        Ok(Self {
            opt: AdamW::new(cfg.optim.adamw()),
            cfg,
            model,
            store,
            step: 0,
            best_val: None,
            codebook_hash,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ModelRng::seed_from_u64(0);
        let model = LipToSpeech::new(ck.config.model.clone(), &mut store, &mut rng)?;
        store.load_named(&ck.params)?;
        let mut opt = AdamW::new(ck.config.optim.adamw());
        opt.load_state(&store, ck.step, &ck.optimiser)?;
        Ok(Self {
            cfg: ck.config.clone(),
            model,
            store,
            opt,
            step: ck.step,
            best_val: ck.best_val,
            codebook_hash: ck.codebook_hash.clone(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.cfg.clone(),
            step: self.step,
            best_val: self.best_val,
            codebook_hash: self.codebook_hash.clone(),
            params: self.store.named(),
            optimiser: self.opt.state_tensors(&self.store),
        }
    }

    fn check_batch(&self, batch: &Batch<T>) -> Result<()> {
        let m = &self.cfg.model;
        if let Some(&k) = batch.linguistic.iter().find(|&&k| k >= m.n_clusters) {
            return Err(PipelineError::Config(format!(
                "linguistic unit {k} does not fit model.n_clusters = {}; set it to the codebook size",
                m.n_clusters
            )));
        }
        if let Some(&s) = batch.speakers.iter().find(|&&s| s >= m.n_speakers) {
            return Err(PipelineError::Config(format!(
                "speaker {s} does not fit model.n_speakers = {}",
                m.n_speakers
            )));
        }
        Ok(())
    }

    /// Teacher-forced forward pass returning the differentiable total and
    /// its components.
    fn losses<'a>(
        &'a self,
        ctx: &Ctx<'a, T>,
        batch: &Batch<T>,
    ) -> Result<(lipsynth_core::Var<T>, LossComponents)> {
        let m = &self.model;
        let spk = &batch.speakers;
        let h = m.encode_video(ctx, &ctx.constant(batch.frames.clone()), spk)?;
        let pred = m.predict_variances(ctx, &h);
        let (ll, lp, le) = variance_losses(
            &pred.linguistic_logits,
            &pred.pitch,
            &pred.energy,
            &batch.linguistic,
            &batch.pitch,
            &batch.energy,
            Reduction::Sum,
        )?;
        let src = VarianceSource::Targets {
            linguistic: &batch.linguistic,
            pitch: &batch.pitch,
            energy: &batch.energy,
        };
        let dec = m.condition_and_decode(ctx, &h, src, spk)?;
        let mel = ctx.constant(batch.mel.clone());
        let lm = mel_loss(&dec.mel, &mel)?;
        let cond = m.flow_condition(ctx, &dec, spk)?;
        let post = m
            .postnet()
            .nll(ctx, &m.flow_target(&mel, &dec), &cond, NllReduction::PerElement)?;
        let total = total_loss_var(&lm, &ll, &lp, &le, &post, &self.cfg.loss);
        let v = |x: &lipsynth_core::Var<T>| x.value().item().as_f64();
        let c = LossComponents {
            mel: v(&lm),
            linguistic: v(&ll),
            pitch: v(&lp),
            energy: v(&le),
            post: v(&post),
        };
        Ok((total, c))
    }

    /// Data-dependent post-net initialisation on `batch`; no-op afterwards.
    pub fn initialise_postnet(&mut self, batch: &Batch<T>) -> Result<bool> {
        if self.model.postnet().is_initialised(&self.store) {
            return Ok(false);
        }
        let m = &self.model;
        let (x, di, dout, spk) = {
            let ctx = Ctx::new(&self.store, Graph::inference(), true, 0);
            let h = m.encode_video(&ctx, &ctx.constant(batch.frames.clone()), &batch.speakers)?;
            let src = VarianceSource::Targets {
                linguistic: &batch.linguistic,
                pitch: &batch.pitch,
                energy: &batch.energy,
            };
            let dec = m.condition_and_decode(&ctx, &h, src, &batch.speakers)?;
            let mel = ctx.constant(batch.mel.clone());
            let cond = m.flow_condition(&ctx, &dec, &batch.speakers)?;
            (
                m.flow_target(&mel, &dec).value().clone(),
                cond.decoder_input.value().clone(),
                cond.decoder_output.value().clone(),
                cond.speaker.value().clone(),
            )
        };
        Ok(m.postnet().initialise(&mut self.store, &x, &di, &dout, &spk)?)
    }

    /// One AdamW update; returns the metrics measured before it.
    pub fn train_step(&mut self, batch: &Batch<T>, dropout_seed: u64) -> Result<MetricRecord> {
        self.check_batch(batch)?;
        let (grads, updates, c, total) = {
            let ctx = Ctx::train(&self.store, dropout_seed);
            let (total_var, c) = self.losses(&ctx, batch)?;
            let total = total_var.value().item().as_f64();
            for (name, v) in c.named().into_iter().chain([("total", total)]) {
                if !v.is_finite() {
                    return Err(PipelineError::NonFinite {
                        what: format!("{name} loss"),
                        step: self.step,
                    });
                }
            }
            let grads = ctx.graph().backward(&total_var).into_params();
            (grads, ctx.take_buffer_updates(), c, total)
        };
        let norm = match self.opt.step(&mut self.store, &grads) {
            Err(lipsynth_core::CoreError::NonFinite { stage }) => {
                return Err(PipelineError::NonFinite { what: stage, step: self.step })
            }
            r => r?,
        };
        for (id, v) in updates {
            self.store.set(id, v);
        }
        let mut rec = MetricRecord::new("train", self.step, 0, &c, total);
        rec.grad_norm = Some(norm);
        self.step += 1;
        Ok(rec)
    }

    /// Teacher-forced losses on whole clips in evaluation mode, averaged
    /// over clips.
    pub fn validate(&self, examples: &[Example], mel_fill: f64) -> Result<LossComponents> {
        if examples.is_empty() {
            return Err(PipelineError::InvalidInput("no validation clips".into()));
        }
        let mut sum = LossComponents::default();
        for ex in examples {
            let batch = Batch::<T>::from_windows(&[window_at(ex, 0, ex.clip.len(), mel_fill)])?;
            self.check_batch(&batch)?;
            let ctx = Ctx::eval(&self.store);
            let (_, c) = self.losses(&ctx, &batch)?;
            sum.mel += c.mel;
            sum.linguistic += c.linguistic;
            sum.pitch += c.pitch;
            sum.energy += c.energy;
            sum.post += c.post;
        }
        let n = examples.len() as f64;
        Ok(LossComponents {
            mel: sum.mel / n,
            linguistic: sum.linguistic / n,
            pitch: sum.pitch / n,
            energy: sum.energy / n,
            post: sum.post / n,
        })
    }
}

pub fn steps_per_epoch(n_clips: usize, batch_size: usize) -> u64 {
    n_clips.div_ceil(batch_size.max(1)) as u64
}

/// Clip indices of the given step: a fresh shuffle every epoch, cut into
/// consecutive batches.
pub fn batch_indices(seed: u64, step: u64, n_clips: usize, batch_size: usize) -> Vec<usize> {
    let spe = steps_per_epoch(n_clips, batch_size);
    let (epoch, pos) = (step / spe, (step % spe) as usize);
    let mut order: Vec<usize> = (0..n_clips).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch ^ 0xE90C)));
    let start = pos * batch_size;
    order[start..(start + batch_size).min(n_clips)].to_vec()
}

/// Windows, augmentation and dropout seed of one step, a pure function of
/// `(seed, step)`.
pub fn step_inputs(
    cfg: &ExperimentConfig,
    data: &TrainData,
    step: u64,
) -> Result<(Vec<Window>, u64)> {
    let t = &cfg.train;
    let idx = batch_indices(t.seed, step, data.train.len(), t.batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(t.seed, step));
    let aug = AugmentConfig::default();
    let mut windows = Vec::with_capacity(idx.len());
    for i in idx {
        let mut w = sample_window(&data.train[i], t.window, WindowMode::Train, data.stats.log_floor, &mut rng)?;
        if t.augment {
            w.clip = augment(&w.clip, rng.next_u64(), &aug);
        }
        windows.push(w);
    }
    Ok((windows, rng.next_u64()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub best_val: Option<f64>,
    pub last_checkpoint: PathBuf,
    pub metrics: PathBuf,
}

struct MetricLog {
    path: PathBuf,
    start: Instant,
    offset: f64,
}

impl MetricLog {
    /// Keeps records that precede `step` so a resumed run continues the
    /// trace of an uninterrupted one.
    fn open(path: &Path, step: u64) -> Result<Self> {
        let mut offset = 0.0;
        if step == 0 {
            crate::write_atomic(path, b"")?;
        } else {
            let kept: Vec<MetricRecord> = if path.is_file() {
                read_metrics(path)?
                    .into_iter()
                    .filter(|r| if r.kind == "train" { r.step < step } else { r.step <= step })
                    .collect()
            } else {
                Vec::new()
            };
            offset = kept.last().map_or(0.0, |r| r.wall_time);
            let mut text = String::new();
            for r in &kept {
                text.push_str(&serde_json::to_string(r).expect("record serialises"));
                text.push('\n');
            }
            crate::write_atomic(path, text.as_bytes())?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            start: Instant::now(),
            offset,
        })
    }

    fn push(&self, mut r: MetricRecord) -> Result<MetricRecord> {
        r.wall_time = self.offset + self.start.elapsed().as_secs_f64();
        let mut f = OpenOptions::new().append(true).open(&self.path).map_err(io_err(&self.path))?;
        writeln!(f, "{}", serde_json::to_string(&r).expect("record serialises")).map_err(io_err(&self.path))?;
        Ok(r)
    }
}

/// Overwritten at every epoch end that has no step checkpoint.
pub const LATEST: &str = "latest.safetensors";

/// Runs the epoch loop, writing `metrics.jsonl`, `config.toml`,
/// `step-*.safetensors` (initial, every `checkpoint_every` steps and final),
/// `latest.safetensors` and `best.safetensors` under `out_dir`.
pub fn run_experiment<T: Scalar>(
    data: &TrainData,
    cfg: &ExperimentConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::<T>::load(p)?;
            let mut t = Trainer::from_checkpoint(&ck)?;
            // the schedule may be extended on resume; the architecture may not
            if t.cfg.model != cfg.model {
                return Err(PipelineError::Config("resumed checkpoint has a different model configuration".into()));
            }
            t.cfg.train = cfg.train.clone();
            t
        }
        None => Trainer::<T>::new(cfg.clone(), &data.data_stats(), data.codebook_hash.clone())?,
    };
    if trainer.codebook_hash != data.codebook_hash {
        return Err(PipelineError::InvalidInput(
            "the cache was quantised with a different codebook than this checkpoint".into(),
        ));
    }
    crate::write_atomic(&out_dir.join("config.toml"), trainer.cfg.to_toml().as_bytes())?;
    let metrics = out_dir.join("metrics.jsonl");
    let log = MetricLog::open(&metrics, trainer.step)?;
    let t = trainer.cfg.train.clone();
    let spe = steps_per_epoch(data.train.len(), t.batch_size);
    let mut total = spe * t.epochs as u64;
    if t.max_steps > 0 {
        total = total.min(t.max_steps);
    }
    let fill = data.stats.log_floor;
    let mut last = out_dir.join(step_file_name(trainer.step));

    if trainer.step == 0 {
        if total > 0 {
            let v = trainer.validate(&data.val, fill)?;
            let rec = MetricRecord::new("val", 0, 0, &v, lipsynth_core::loss::total_loss(&v, &trainer.cfg.loss)?);
            log.push(rec)?;
        }
        trainer.checkpoint().save(&last)?;
    }

    while trainer.step < total {
        let step = trainer.step;
        let (windows, dropout_seed) = step_inputs(&trainer.cfg, data, step)?;
        let batch = Batch::<T>::from_windows(&windows)?;
        if step == 0 {
            trainer.initialise_postnet(&batch)?;
        }
        let mut rec = trainer.train_step(&batch, dropout_seed)?;
        rec.epoch = (step / spe) as usize;
        let rec = log.push(rec)?;
        log::debug!("step {} total {:.4} mel {:.3}", rec.step, rec.total, rec.mel);

        let done = trainer.step;
        let epoch_end = done % spe == 0 || done == total;
        if epoch_end {
            let epoch = done.div_ceil(spe) as usize;
            if epoch % t.validate_every == 0 || done == total {
                let v = trainer.validate(&data.val, fill)?;
                let tot = lipsynth_core::loss::total_loss(&v, &trainer.cfg.loss)
                    .map_err(|_| PipelineError::NonFinite { what: "validation loss".into(), step: done })?;
                log.push(MetricRecord::new("val", done, epoch, &v, tot))?;
                log::info!("epoch {epoch} step {done}: validation mel L1 {:.4}", v.mel);
                if trainer.best_val.is_none_or(|b| v.mel < b) {
                    trainer.best_val = Some(v.mel);
                    trainer.checkpoint().save(&out_dir.join("best.safetensors"))?;
                }
            }
        }
        if done == total || (t.checkpoint_every > 0 && done % t.checkpoint_every == 0) {
            last = out_dir.join(step_file_name(done));
            trainer.checkpoint().save(&last)?;
        } else if epoch_end {
            last = out_dir.join(LATEST);
            trainer.checkpoint().save(&last)?;
        }
    }
    Ok(TrainSummary {
        steps: trainer.step,
        best_val: trainer.best_val,
        last_checkpoint: last,
        metrics,
    })
}
