use lipsynth_signal::mel::{band_centers, hz_to_mel, mel_to_hz};
use lipsynth_signal::*;
use proptest::prelude::*;

fn tone(freq: f64, seconds: f64, amp: f64) -> Vec<f64> {
    let n = (16000.0 * seconds) as usize;
    (0..n)
        .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
        .collect()
}

/// Peak of a direct DFT, independent of the crate's FFT path.
fn dominant_hz(wave: &[f64]) -> f64 {
    let n = wave.len();
    let mag = |k: usize| {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, x) in wave.iter().enumerate() {
            let a = -std::f64::consts::TAU * ((k * t) % n) as f64 / n as f64;
            re += x * a.cos();
            im += x * a.sin();
        }
        re.hypot(im)
    };
    let k = (1..n / 2).max_by(|&a, &b| mag(a).total_cmp(&mag(b))).unwrap();
    k as f64 * 16000.0 / n as f64
}

#[test]
fn one_second_gives_one_hundred_frames() {
    let m = MelExtractor::new(MelConfig::default());
    let mel = m.extract(&tone(300.0, 1.0, 0.5), 16000).unwrap();
    assert_eq!((mel.frames, mel.bands), (100, 80));
}

#[test]
fn empty_or_resampled_input_is_rejected() {
    let m = MelExtractor::new(MelConfig::default());
    assert!(matches!(m.extract(&[], 16000), Err(SignalError::InvalidInput(_))));
    assert!(matches!(
        m.extract(&vec![0.0; 22050], 22050),
        Err(SignalError::InvalidInput(_))
    ));
}

#[test]
fn silence_sits_on_the_log_floor() {
    let cfg = MelConfig::default();
    let m = MelExtractor::new(cfg.clone());
    let mel = m.extract(&vec![0.0; 8000], 16000).unwrap();
    assert!(mel.values.iter().all(|&v| v == cfg.log_floor()));
}

#[test]
fn tone_peaks_in_nearest_band() {
    let cfg = MelConfig::default();
    let m = MelExtractor::new(cfg.clone());
    let mel = m.extract(&tone(440.0, 1.0, 0.5), 16000).unwrap();
    let mean: Vec<f64> = (0..80)
        .map(|b| (0..mel.frames).map(|t| mel.frame(t)[b].exp()).sum::<f64>())
        .collect();
    let peak = (0..80).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
    let centers = band_centers(&cfg);
    let nearest = (0..80)
        .min_by(|&a, &b| (centers[a] - 440.0).abs().total_cmp(&(centers[b] - 440.0).abs()))
        .unwrap();
    assert_eq!(peak, nearest);
    // analytic centre check
    let step = hz_to_mel(8000.0) / 81.0;
    assert!((centers[nearest] - mel_to_hz(step * (nearest + 1) as f64)).abs() < 1e-9);
}

#[test]
fn energy_three_four_five() {
    let mut v = vec![0.0; 80];
    v[0] = 3.0;
    v[1] = 4.0;
    let mel = MelSpectrogram::new(v, 1, 80).unwrap();
    assert_eq!(frame_energy(&mel), vec![5.0]);
    let zero = MelSpectrogram::new(vec![0.0; 8 * 80], 8, 80).unwrap();
    assert_eq!(video_rate_energy(&zero, 4).unwrap(), vec![0.0, 0.0]);
    let odd = MelSpectrogram::new(vec![0.0; 6 * 80], 6, 80).unwrap();
    assert!(video_rate_energy(&odd, 4).is_err());
}

#[test]
fn pooled_energy_matches_loop_oracle() {
    let vals: Vec<f64> = (0..4 * 80).map(|i| ((i * 7919) % 113) as f64 / 11.0 - 5.0).collect();
    let mel = MelSpectrogram::new(vals.clone(), 4, 80).unwrap();
    let mut acc = 0.0;
    for t in 0..4 {
        let mut s = 0.0;
        for b in 0..80 {
            s += vals[t * 80 + b] * vals[t * 80 + b];
        }
        acc += s.sqrt();
    }
    let got = video_rate_energy(&mel, 4).unwrap()[0];
    assert!((got - acc / 4.0).abs() <= 1e-12 * acc);
}

#[test]
fn standardisation_closed_form() {
    let stats = PitchStats::from_values([100.0, 200.0, 300.0]).unwrap();
    assert!((stats.mean - 200.0).abs() < 1e-12);
    assert!((stats.std - 81.649_658).abs() < 1e-5);
    let track = PitchTrack {
        f0: vec![Some(100.0), Some(200.0), Some(300.0)],
        voiced_prob: vec![1.0; 3],
    };
    let z = standardise_pitch(&track, &stats, 1).unwrap();
    for (a, b) in z.values.iter().zip([-1.224_744_9, 0.0, 1.224_744_9]) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(!z.all_unvoiced);
}

#[test]
fn constant_pitch_and_block_pooling() {
    let stats = PitchStats { mean: 200.0, std: 30.0 };
    let track = PitchTrack {
        f0: vec![Some(200.0); 8],
        voiced_prob: vec![1.0; 8],
    };
    assert!(standardise_pitch(&track, &stats, 4).unwrap().values.iter().all(|&v| v == 0.0));
    assert_eq!(mean_pool(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0], 4), vec![0.0, 1.0]);
}

#[test]
fn unvoiced_and_degenerate_pitch() {
    let stats = PitchStats { mean: 150.0, std: 20.0 };
    let track = PitchTrack {
        f0: vec![None; 8],
        voiced_prob: vec![0.0; 8],
    };
    let z = standardise_pitch(&track, &stats, 4).unwrap();
    assert!(z.all_unvoiced);
    assert_eq!(z.values, vec![0.0, 0.0]);
    let flat = PitchStats { mean: 150.0, std: 0.0 };
    assert!(matches!(standardise_pitch(&track, &flat, 4), Err(SignalError::Degenerate(_))));
    assert!(PitchStats::from_values([120.0, 120.0]).is_err());
}

#[test]
fn pyin_tracks_a_steady_tone() {
    let p = Pyin::new(PyinConfig::default()).unwrap();
    assert_eq!(p.transition_width(), 41);
    let wave = tone(200.0, 0.6, 0.5);
    let track = p.track(&wave, 16000).unwrap();
    assert_eq!(track.len(), 60);
    let interior: Vec<f64> = track.f0[10..50].iter().map(|f| f.expect("voiced")).collect();
    for f in interior {
        // one pitch bin is a tenth of a semitone
        assert!((f / 200.0).log2().abs() * 1200.0 < 15.0, "{f}");
    }
}

#[test]
fn pyin_marks_silence_unvoiced() {
    let p = Pyin::new(PyinConfig::default()).unwrap();
    let track = p.track(&vec![0.0; 4800], 16000).unwrap();
    assert!(track.f0.iter().all(Option::is_none));
}

#[test]
fn pyin_follows_a_pitch_step() {
    let p = Pyin::new(PyinConfig::default()).unwrap();
    let mut wave = tone(160.0, 0.5, 0.5);
    let tail = tone(200.0, 0.5, 0.5);
    wave.extend(tail);
    let track = p.track(&wave, 16000).unwrap();
    let early = track.f0[15].unwrap();
    let late = track.f0[85].unwrap();
    assert!((early - 160.0).abs() < 3.0 && (late - 200.0).abs() < 3.0, "{early} {late}");
}

#[test]
fn griffin_lim_recovers_tone_frequency() {
    let gl = GriffinLim::new(MelConfig::default(), 60, 0).unwrap();
    let mel = gl.extractor().extract(&tone(440.0, 0.5, 0.5), 16000).unwrap();
    let wave = gl.reconstruct(&mel).unwrap();
    assert_eq!(wave.len(), mel.frames * 160);
    let f = dominant_hz(&wave[640..wave.len() - 640]);
    let centers = band_centers(&MelConfig::default());
    let width = centers[16] - centers[15];
    assert!((f - 440.0).abs() <= width, "dominant {f} Hz");
}

#[test]
fn griffin_lim_of_floor_is_silent() {
    let cfg = MelConfig::default();
    let gl = GriffinLim::new(cfg.clone(), 10, 0).unwrap();
    let mel = MelSpectrogram::new(vec![cfg.log_floor(); 20 * 80], 20, 80).unwrap();
    let wave = gl.reconstruct(&mel).unwrap();
    let rms = (wave.iter().map(|x| x * x).sum::<f64>() / wave.len() as f64).sqrt();
    assert!(rms < 1e-6);
}

#[test]
fn griffin_lim_is_deterministic_per_seed() {
    let gl = GriffinLim::new(MelConfig::default(), 5, 3).unwrap();
    let mel = gl.extractor().extract(&tone(300.0, 0.2, 0.3), 16000).unwrap();
    assert_eq!(gl.reconstruct(&mel).unwrap(), gl.reconstruct(&mel).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frame_count_is_floor_of_hops(len in 160usize..4000) {
        let m = MelExtractor::new(MelConfig::default());
        let wave: Vec<f64> = (0..len).map(|i| (i as f64 * 0.01).sin()).collect();
        prop_assert_eq!(m.extract(&wave, 16000).unwrap().frames, len / 160);
    }

    #[test]
    fn energy_is_non_negative(vals in proptest::collection::vec(-20.0f64..5.0, 8 * 80)) {
        let mel = MelSpectrogram::new(vals, 8, 80).unwrap();
        prop_assert!(video_rate_energy(&mel, 4).unwrap().iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn standardised_corpus_is_unit(vals in proptest::collection::vec(60.0f64..500.0, 2..200)) {
        prop_assume!(vals.iter().any(|&v| (v - vals[0]).abs() > 1e-3));
        let stats = PitchStats::from_values(vals.iter().copied()).unwrap();
        let track = PitchTrack { f0: vals.iter().map(|&v| Some(v)).collect(), voiced_prob: vec![1.0; vals.len()] };
        let z = standardise_pitch(&track, &stats, 1).unwrap().values;
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let std = (z.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);
    }
}
