use std::path::Path;

use lipsynth_data::{fit_units, generate, preprocess, Cache, Manifest, PreprocessConfig, SslSpec, SyntheticConfig};
use lipsynth_pipeline::checkpoint::{peek, step_file_name};
use lipsynth_pipeline::train::{read_metrics, step_inputs, LATEST};
use lipsynth_pipeline::*;

fn prepare(dir: &Path, clips: usize, frames: usize) -> Cache {
    let corpus = dir.join("corpus");
    generate(
        &corpus,
        &SyntheticConfig {
            clips,
            seed: 1,
            frames,
            speakers: 2,
        },
    )
    .unwrap();
    let cache_dir = dir.join("cache");
    preprocess(&corpus.join("manifest.jsonl"), &cache_dir, &PreprocessConfig::default()).unwrap();
    let cache = Cache::open(&cache_dir).unwrap();
    fit_units(&cache, 8, &SslSpec::default(), 0).unwrap();
    cache
}

fn tiny(extra: &[&str]) -> ExperimentConfig {
    let mut o: Vec<String> = [
        "preset=tiny",
        "model.n_clusters=8",
        "train.batch_size=2",
        "train.window=8",
        "train.epochs=2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    o.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::resolve(None, &o).unwrap()
}

fn strip_time(mut v: Vec<MetricRecord>) -> Vec<MetricRecord> {
    for r in &mut v {
        r.wall_time = 0.0;
    }
    v
}

#[test]
fn interrupted_and_resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepare(dir.path(), 3, 24);
    let data = TrainData::from_cache(&cache).unwrap();

    let full = run_experiment::<f32>(&data, &tiny(&[]), &dir.path().join("full"), None).unwrap();
    assert_eq!(full.steps, 4);

    let part_dir = dir.path().join("part");
    let part = run_experiment::<f32>(&data, &tiny(&["train.epochs=1"]), &part_dir, None).unwrap();
    assert_eq!(part.steps, 2);
    assert_eq!(part.last_checkpoint, part_dir.join(step_file_name(2)));
    let resumed = run_experiment::<f32>(&data, &tiny(&[]), &part_dir, Some(&part.last_checkpoint)).unwrap();
    assert_eq!(resumed.steps, 4);

    let a = Checkpoint::<f32>::load(&full.last_checkpoint).unwrap();
    let b = Checkpoint::<f32>::load(&resumed.last_checkpoint).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.optimiser, b.optimiser);
    assert_eq!(a.best_val, b.best_val);
    assert_eq!(
        strip_time(read_metrics(&full.metrics).unwrap()),
        strip_time(read_metrics(&resumed.metrics).unwrap())
    );
}

#[test]
fn zero_epochs_writes_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepare(dir.path(), 2, 16);
    let data = TrainData::from_cache(&cache).unwrap();
    let out = dir.path().join("run");
    let s = run_experiment::<f32>(&data, &tiny(&["train.epochs=0"]), &out, None).unwrap();
    assert_eq!(s.steps, 0);
    assert!(read_metrics(&s.metrics).unwrap().is_empty());
    let mut files: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, ["config.toml", "metrics.jsonl", "step-00000000.safetensors"]);
    let ck = Checkpoint::<f32>::load(&s.last_checkpoint).unwrap();
    assert_eq!(ck.step, 0);
    assert!(ck.optimiser.is_empty());
}

#[test]
fn run_layout_and_metric_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepare(dir.path(), 3, 24);
    let data = TrainData::from_cache(&cache).unwrap();
    let out = dir.path().join("run");
    let s = run_experiment::<f32>(&data, &tiny(&["train.epochs=3"]), &out, None).unwrap();
    assert_eq!(s.steps, 6);
    for f in ["config.toml", "best.safetensors", LATEST, "step-00000000.safetensors", "step-00000006.safetensors"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let recs = read_metrics(&s.metrics).unwrap();
    let train: Vec<_> = recs.iter().filter(|r| r.kind == "train").map(|r| (r.step, r.epoch)).collect();
    assert_eq!(train, [(0, 0), (1, 0), (2, 1), (3, 1), (4, 2), (5, 2)]);
    let val: Vec<_> = recs.iter().filter(|r| r.kind == "val").map(|r| r.step).collect();
    assert_eq!(val, [0, 2, 4, 6]);
    assert!(recs.iter().filter(|r| r.kind == "train").all(|r| r.grad_norm.is_some()));
    let best = recs
        .iter()
        .filter(|r| r.kind == "val" && r.step > 0)
        .map(|r| r.mel)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(s.best_val, Some(best));
    let (cfg, dtype) = peek(&out.join("best.safetensors")).unwrap();
    assert_eq!(cfg.model.n_clusters, 8);
    assert_eq!(dtype, lipsynth_core::DType::F32);
}

#[test]
fn zero_learning_rate_leaves_trainable_weights_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepare(dir.path(), 2, 16);
    let data = TrainData::from_cache(&cache).unwrap();
    let cfg = tiny(&["optim.lr=0.0"]);
    let mut t = Trainer::<f64>::new(cfg.clone(), &data.data_stats(), data.codebook_hash.clone()).unwrap();
    let (windows, seed) = step_inputs(&cfg, &data, 0).unwrap();
    let batch = Batch::<f64>::from_windows(&windows).unwrap();
    assert!(t.initialise_postnet(&batch).unwrap());
    assert!(!t.initialise_postnet(&batch).unwrap());
    let before: Vec<_> = t.store.trainable().map(|id| t.store.get(id).clone()).collect();
    t.train_step(&batch, seed).unwrap();
    t.train_step(&batch, seed).unwrap();
    let after: Vec<_> = t.store.trainable().map(|id| t.store.get(id).clone()).collect();
    assert_eq!(before, after);
    assert_eq!(t.step, 2);
}

#[test]
fn checkpoints_round_trip_byte_identically_in_both_precisions() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepare(dir.path(), 2, 16);
    let data = TrainData::from_cache(&cache).unwrap();
    let cfg = tiny(&[]);
    let mut t = Trainer::<f64>::new(cfg.clone(), &data.data_stats(), data.codebook_hash.clone()).unwrap();
    let (windows, seed) = step_inputs(&cfg, &data, 0).unwrap();
    let batch = Batch::<f64>::from_windows(&windows).unwrap();
    t.initialise_postnet(&batch).unwrap();
    t.train_step(&batch, seed).unwrap();
    let ck = t.checkpoint();
    let (a, b) = (dir.path().join("a.safetensors"), dir.path().join("b.safetensors"));
    ck.save(&a).unwrap();
    let back = Checkpoint::<f64>::load(&a).unwrap();
    assert_eq!(back, ck);
    back.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(peek(&a).unwrap().1, lipsynth_core::DType::F64);

    let t32 = Trainer::<f32>::new(cfg, &data.data_stats(), None).unwrap();
    let c32 = t32.checkpoint();
    c32.save(&a).unwrap();
    Checkpoint::<f32>::load(&a).unwrap().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn mismatched_codebook_and_cluster_count_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepare(dir.path(), 2, 16);
    let mut data = TrainData::from_cache(&cache).unwrap();
    let small = tiny(&["model.n_clusters=2", "train.epochs=1"]);
    let e = run_experiment::<f32>(&data, &small, &dir.path().join("small"), None).unwrap_err();
    assert_eq!(e.class(), ErrorClass::Usage, "{e}");

    let ok = run_experiment::<f32>(&data, &tiny(&["train.epochs=1"]), &dir.path().join("ok"), None).unwrap();
    data.codebook_hash = Some("other".into());
    let e = run_experiment::<f32>(&data, &tiny(&[]), &dir.path().join("ok"), Some(&ok.last_checkpoint)).unwrap_err();
    assert!(e.to_string().contains("different codebook"), "{e}");
}

#[test]
fn divergent_learning_rate_aborts_with_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepare(dir.path(), 2, 16);
    let data = TrainData::from_cache(&cache).unwrap();
    let cfg = tiny(&["optim.lr=1e30", "train.epochs=20"]);
    let out = dir.path().join("run");
    let e = run_experiment::<f32>(&data, &cfg, &out, None).unwrap_err();
    assert_eq!(e.class(), ErrorClass::Numerical, "{e}");
    let ck = Checkpoint::<f32>::load(&out.join(step_file_name(0))).unwrap();
    assert!(ck.params.values().all(|t| t.all_finite()));
}

#[test]
fn synthesis_is_seeded_and_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepare(dir.path(), 2, 16);
    let data = TrainData::from_cache(&cache).unwrap();
    let s = run_experiment::<f32>(&data, &tiny(&["train.epochs=1"]), &dir.path().join("run"), None).unwrap();
    let synth = Synthesizer::<f32>::load(&s.last_checkpoint).unwrap();
    let m = Manifest::read(&cache.manifest_path()).unwrap();
    let clip = lipsynth_data::load_clip(&m, &m.records[0], 112).unwrap();
    let a = synth.synthesise(&clip, 0, 0.667, 3).unwrap();
    assert_eq!((a.refined.frames, a.refined.bands), (64, 80));
    assert_eq!((a.coarse.frames, a.coarse.bands), (64, 80));
    assert_eq!(a.units.len(), 16);
    assert!(a.units.iter().all(|&u| u < 8));
    assert_eq!((a.pitch.len(), a.energy.len()), (16, 16));
    assert_eq!(a, synth.synthesise(&clip, 0, 0.667, 3).unwrap());
    assert_ne!(a.refined, synth.synthesise(&clip, 0, 0.667, 4).unwrap().refined);
    let cold = synth.synthesise(&clip, 0, 0.0, 1).unwrap();
    assert_eq!(cold, synth.synthesise(&clip, 0, 0.0, 2).unwrap());
    assert!(synth.synthesise(&clip, 0, f64::NAN, 1).is_err());
    assert!(synth.synthesise(&clip, 0, -1.0, 1).is_err());
    assert!(synth.synthesise(&clip, 9, 0.5, 1).is_err());

    let wave = Vocoder::GriffinLim { iterations: 4, seed: 0 }
        .vocode(&a.refined, &lipsynth_signal::MelConfig::default())
        .unwrap();
    assert!(!wave.is_empty() && wave.iter().all(|v| v.is_finite()));
}

#[test]
fn external_vocoder_failure_falls_back_only_when_allowed() {
    let mel = lipsynth_signal::MelSpectrogram::new(vec![-4.0; 8 * 80], 8, 80).unwrap();
    let cfg = lipsynth_signal::MelConfig::default();
    let strict = Vocoder::External {
        command: "/nonexistent/vocoder".into(),
        fallback: false,
    };
    assert_eq!(strict.vocode(&mel, &cfg).unwrap_err().class(), ErrorClass::MissingDependency);
    let lenient = Vocoder::External {
        command: "/nonexistent/vocoder".into(),
        fallback: true,
    };
    assert_eq!(lenient.vocode(&mel, &cfg).unwrap(), Vocoder::default().vocode(&mel, &cfg).unwrap());
}

#[test]
fn evaluation_with_echoed_references_scores_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepare(dir.path(), 2, 16);
    let data = TrainData::from_cache(&cache).unwrap();
    let s = run_experiment::<f32>(&data, &tiny(&["train.epochs=1"]), &dir.path().join("run"), None).unwrap();
    let synth = Synthesizer::<f32>::load(&s.last_checkpoint).unwrap();
    let m = Manifest::read(&cache.manifest_path()).unwrap();
    let asr = EchoAsr::from_manifest(&m);
    let plot = dir.path().join("fig").join("mels.png");
    let opts = EvalOptions {
        split: lipsynth_data::Split::Train,
        vocoder: Vocoder::GriffinLim { iterations: 4, seed: 0 },
        plot: Some(plot.clone()),
        ..EvalOptions::default()
    };
    let r = evaluate(&synth, &m, &asr, Some(&LetterG2p), &opts).unwrap();
    assert_eq!(r.n_samples, 2);
    assert_eq!((r.wer, r.cer, r.per), (0.0, 0.0, Some(0.0)));
    assert!(r.energy_mae.is_finite() && r.energy_mae >= 0.0);
    assert!(r.pitch_reference.is_some());
    assert!(plot.is_file());
    let path = dir.path().join("report.json");
    r.write(&path).unwrap();
    let back: EvalReport = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, r);

    let none = EvalOptions {
        split: lipsynth_data::Split::Test,
        ..opts
    };
    assert!(evaluate(&synth, &m, &asr, None, &none).is_err());
}

#[test]
fn unit_sweep_reports_every_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepare(dir.path(), 10, 30);
    let cfg = SweepConfig {
        clusters: vec![8, 16],
        layers: vec![1, 12],
        ssl: SslSpec { dim: 16, ..SslSpec::default() },
        seed: 0,
    };
    let rows = sweep_units(&cache, &cfg).unwrap();
    let keys: Vec<_> = rows.iter().map(|r| (r.clusters, r.layer)).collect();
    assert_eq!(keys, [(8, 1), (8, 12), (16, 1), (16, 12)]);
    for r in &rows {
        assert!(r.wer >= 0.0 && r.per >= 0.0 && r.cer >= 0.0);
        assert!(r.per < 100.0, "{r:?}");
    }
    let table = format_sweep_table(&rows);
    assert!(table.starts_with("#clusters | layer | WER | PER | CER\n"));
    assert_eq!(table.lines().count(), 5);
    // the cache keeps the units written by fit-units
    let before = cache.load("clip0000").map(|c| c.codebook_hash);
    assert_eq!(before.unwrap(), TrainData::from_cache(&cache).unwrap().codebook_hash);
}
