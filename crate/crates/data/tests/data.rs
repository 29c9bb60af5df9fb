use std::path::PathBuf;

use lipsynth_data::clip::{read_video_npy, read_wav, write_wav};
use lipsynth_data::{
    augment, fit_units, generate, generate_clip, preprocess, sample_window, window_at, Archive, AugmentConfig,
    AugmentPlan, Cache, DataError, Example, Manifest, ManifestRecord, PreprocessConfig, Split, SslSpec,
    SyntheticConfig, VarianceTargets, VideoClip, WindowMode,
};
use lipsynth_signal::MelSpectrogram;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ramp_clip(t: usize, s: usize) -> VideoClip {
    let px: Vec<f32> = (0..t * s * s).map(|i| (i % (s * s)) as f32 / (s * s) as f32).collect();
    VideoClip::new(px, t, s, 0).unwrap()
}

fn example(t: usize) -> Example {
    let clip = ramp_clip(t, 4);
    let mel = MelSpectrogram::new((0..4 * t * 2).map(|v| v as f64).collect(), 4 * t, 2).unwrap();
    let targets = VarianceTargets::new(
        (0..t).collect(),
        (0..t).map(|v| v as f64).collect(),
        vec![1.0; t],
    )
    .unwrap();
    Example::new("x".into(), clip, mel, targets, 4).unwrap()
}

#[test]
fn augment_flip_only() {
    let clip = ramp_clip(2, 4);
    let plan = AugmentPlan { flip: true, mask: None };
    let out = plan.apply(&clip, 0.0);
    for t in 0..2 {
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(out.frame(t)[r * 4 + c], clip.frame(t)[r * 4 + 3 - c]);
            }
        }
    }
}

#[test]
fn augment_mask_only_same_region_every_frame() {
    let clip = VideoClip::new(vec![1.0; 3 * 64], 3, 8, 0).unwrap();
    let plan = AugmentPlan {
        flip: false,
        mask: Some(lipsynth_data::MaskRect { top: 1, left: 2, height: 3, width: 4 }),
    };
    let out = plan.apply(&clip, 0.0);
    for t in 0..3 {
        let zeros: Vec<usize> = (0..64).filter(|&i| out.frame(t)[i] == 0.0).collect();
        let expect: Vec<usize> = (1..4).flat_map(|r| (2..6).map(move |c| r * 8 + c)).collect();
        assert_eq!(zeros, expect);
    }
}

#[test]
fn augment_forced_branches_and_determinism() {
    let clip = ramp_clip(2, 16);
    let never = AugmentConfig { flip_prob: 0.0, mask_min: 20, mask_max: 30, fill: 0.0 };
    assert_eq!(augment(&clip, 7, &never), clip);
    let always = AugmentConfig { flip_prob: 1.0, mask_min: 1, mask_max: 30, fill: 0.0 };
    let plan = AugmentPlan::sample(7, 16, &always);
    assert!(plan.flip);
    let m = plan.mask.unwrap();
    assert!(m.height >= 1 && m.height <= 16 && m.top + m.height <= 16 && m.left + m.width <= 16);
    assert_eq!(augment(&clip, 7, &always), augment(&clip, 7, &always));
}

#[test]
fn augment_flip_rate_is_about_half() {
    let cfg = AugmentConfig::default();
    let flips = (0..2000).filter(|&s| AugmentPlan::sample(s, 112, &cfg).flip).count();
    assert!((900..1100).contains(&flips), "{flips}");
}

#[test]
fn window_arithmetic() {
    let ex = example(10);
    let w = window_at(&ex, 3, 4, -9.0);
    assert_eq!(w.valid, 4);
    assert_eq!(w.mel.frames, 16);
    assert_eq!(w.mel.frame(0), ex.mel.frame(12));
    assert_eq!(w.targets.linguistic, vec![3, 4, 5, 6]);
    assert_eq!(w.clip.frame(0), ex.clip.frame(3));
}

#[test]
fn short_clip_pads_in_eval_and_fails_in_train() {
    let ex = example(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(sample_window(&ex, 5, WindowMode::Train, -9.0, &mut rng).is_err());
    let w = sample_window(&ex, 5, WindowMode::Eval, -9.0, &mut rng).unwrap();
    assert_eq!(w.valid, 3);
    assert_eq!(w.mel.frames, 20);
    assert!(w.mel.frame(19).iter().all(|&v| v == -9.0));
    assert_eq!(w.targets.pitch[4], 0.0);
    assert!(w.clip.frame(4).iter().all(|&v| v == 0.0));
}

#[test]
fn window_starts_are_uniform() {
    // 16 possible starts; chi-square with 15 degrees of freedom, 0.1% critical value
    let ex = example(20);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0usize; 16];
    let n = 16_000;
    for _ in 0..n {
        counts[sample_window(&ex, 5, WindowMode::Train, 0.0, &mut rng).unwrap().start] += 1;
    }
    let e = n as f64 / 16.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(chi2 < 37.70, "chi2 = {chi2}");
}

#[test]
fn example_rejects_wrong_ratio() {
    let clip = ramp_clip(3, 4);
    let mel = MelSpectrogram::new(vec![0.0; 22], 11, 2).unwrap();
    let t = VarianceTargets::new(vec![0; 3], vec![0.0; 3], vec![0.0; 3]).unwrap();
    assert!(Example::new("x".into(), clip, mel, t, 4).is_err());
}

#[test]
fn archive_round_trip_is_byte_identical() {
    let mut a = Archive::new(serde_json::json!({"k": 1, "name": "x"}));
    a.put_f32("b", &[2, 2], &[1.0, 2.0, 3.0, 4.5]);
    a.put_f64("a", &[3], &[0.1, 0.2, 0.3]);
    a.put_i64("c", &[2], &[-1, 7]);
    let bytes = a.to_bytes().unwrap();
    let back = Archive::from_bytes(&bytes, std::path::Path::new("mem")).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.get_f64("a").unwrap().1, vec![0.1, 0.2, 0.3]);
    assert_eq!(back.get_i64("c").unwrap(), (vec![2], vec![-1, 7]));
    assert_eq!(back.meta, a.meta);
}

#[test]
fn manifest_round_trip_and_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let rec = ManifestRecord {
        id: "a".into(),
        video: PathBuf::from("v/a.npy"),
        audio: PathBuf::from("a/a.wav"),
        speaker: 1,
        split: Split::Val,
        landmarks: None,
        text: Some("hi".into()),
        phones: None,
    };
    let m = Manifest { root: dir.path().into(), records: vec![rec.clone()] };
    let p = dir.path().join("m.jsonl");
    m.write(&p).unwrap();
    assert_eq!(Manifest::read(&p).unwrap(), m);
    let dup = Manifest { root: dir.path().into(), records: vec![rec.clone(), rec] };
    dup.write(&p).unwrap();
    assert!(Manifest::read(&p).is_err());
    std::fs::write(&p, "{\"id\":\"a\",\"bogus\":1}\n").unwrap();
    assert!(Manifest::read(&p).is_err());
}

#[test]
fn wav_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.wav");
    let s: Vec<f64> = (0..100).map(|i| (i as f64 / 50.0) - 1.0).collect();
    write_wav(&p, &s, 16_000).unwrap();
    let (back, sr) = read_wav(&p).unwrap();
    assert_eq!(sr, 16_000);
    for (a, b) in s.iter().zip(&back) {
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn synthetic_corpus_is_deterministic() {
    let cfg = SyntheticConfig { clips: 3, seed: 5, frames: 20, speakers: 2 };
    assert_eq!(generate_clip(1, &cfg), generate_clip(1, &cfg));
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(a.path(), &cfg).unwrap();
    generate(b.path(), &cfg).unwrap();
    for f in ["manifest.jsonl", "video/clip0001.npy", "audio/clip0002.wav"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    let v = read_video_npy(&a.path().join("video/clip0000.npy")).unwrap();
    assert_eq!((v.n_frames, v.height, v.width), (20, 112, 112));
    let (w, _) = read_wav(&a.path().join("audio/clip0000.wav")).unwrap();
    assert_eq!(w.len(), 20 * 640);
}

#[test]
fn missing_cache_names_the_preprocess_command() {
    let dir = tempfile::tempdir().unwrap();
    let err = Cache::open(&dir.path().join("nothing")).unwrap_err();
    assert!(matches!(err, DataError::NotPrepared(_)));
    assert!(err.to_string().contains("lipsynth preprocess"));
}

#[test]
fn preprocess_and_units_end_to_end() {
    let corpus = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig { clips: 3, seed: 1, frames: 20, speakers: 2 };
    generate(corpus.path(), &cfg).unwrap();
    let manifest = corpus.path().join("manifest.jsonl");
    let pcfg = PreprocessConfig {
        ssl: SslSpec { dim: 16, ..SslSpec::default() },
        ..PreprocessConfig::default()
    };
    let c1 = tempfile::tempdir().unwrap();
    let c2 = tempfile::tempdir().unwrap();
    let report = preprocess(&manifest, c1.path(), &pcfg).unwrap();
    preprocess(&manifest, c2.path(), &pcfg).unwrap();
    assert_eq!(report.clips, 3);
    assert!(report.stats.pitch_mean > 80.0 && report.stats.pitch_mean < 300.0);
    let bytes = |d: &std::path::Path| std::fs::read(d.join("clips/clip0001.safetensors")).unwrap();
    assert_eq!(bytes(c1.path()), bytes(c2.path()));

    let cache = Cache::open(c1.path()).unwrap();
    let err = cache.load("clip0000").unwrap().to_example(4).unwrap_err();
    assert!(err.to_string().contains("fit-units"));

    let (book, _) = fit_units(&cache, 6, &pcfg.ssl, 0).unwrap();
    let ex = cache.examples(Split::Train).unwrap();
    assert_eq!(ex.len(), 3);
    for (c, e) in &ex {
        assert_eq!(e.mel.frames, 4 * e.clip.len());
        assert_eq!(e.targets.len(), 20);
        assert!(e.targets.linguistic.iter().all(|&u| u < 6));
        assert_eq!(c.codebook_hash.as_deref(), Some(book.hash().as_str()));
    }
    let stored = cache.load("clip0002").unwrap();
    let again = lipsynth_data::CachedClip::from_archive(
        &Archive::from_bytes(&stored.to_archive().to_bytes().unwrap(), std::path::Path::new("m")).unwrap(),
        std::path::Path::new("m"),
    )
    .unwrap();
    assert_eq!(again, stored);
}

proptest! {
    #[test]
    fn windows_always_have_requested_length(t in 1usize..30, len in 1usize..40, seed in 0u64..1000) {
        let ex = example(t);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = sample_window(&ex, len, WindowMode::Eval, 0.0, &mut rng).unwrap();
        prop_assert_eq!(w.clip.len(), len);
        prop_assert_eq!(w.mel.frames, 4 * len);
        prop_assert_eq!(w.targets.len(), len);
        prop_assert!(w.start + w.valid <= t);
    }

    #[test]
    fn augment_keeps_pixel_range(seed in 0u64..500) {
        let clip = ramp_clip(1, 32);
        let out = augment(&clip, seed, &AugmentConfig::default());
        prop_assert!(out.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}
