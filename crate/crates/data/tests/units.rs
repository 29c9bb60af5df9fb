use std::path::Path;

use lipsynth_data::units::{SslBackend, SyntheticSsl};
use lipsynth_data::{fit_codebook, kmeans, length_match, match_index, Codebook, KMeansConfig, SslFeatures};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn feats(values: Vec<f64>, dim: usize) -> SslFeatures {
    SslFeatures {
        frames: values.len() / dim,
        values,
        dim,
        layer: 12,
        backend: "test".into(),
    }
}

/// Scalar loop oracle for the rounded index formula.
fn match_oracle(i: usize, t_f: usize, t_v: usize) -> usize {
    let x = i as f64 * t_f as f64 / t_v as f64;
    (x.round() as usize).min(t_f - 1)
}

#[test]
fn length_match_two_to_one() {
    let f = feats((0..10).map(|v| v as f64).collect(), 1);
    assert_eq!(length_match(&f, 5), vec![0.0, 2.0, 4.0, 6.0, 8.0]);
}

#[test]
fn length_match_identity() {
    let f = feats((0..14).map(|v| v as f64).collect(), 2);
    assert_eq!(length_match(&f, 7), f.values);
}

#[test]
fn length_match_oracle_grid() {
    for t_v in 1..40 {
        for t_f in 1..90 {
            for i in 0..t_v {
                assert_eq!(match_index(i, t_f, t_v), match_oracle(i, t_f, t_v), "i={i} t_f={t_f} t_v={t_v}");
            }
        }
    }
}

#[test]
fn kmeans_single_cluster_is_mean() {
    let pts = vec![0.0, 0.0, 2.0, 0.0, 0.0, 4.0, 2.0, 4.0];
    let fit = kmeans(&pts, 2, &KMeansConfig::new(1, 3)).unwrap();
    assert_eq!(fit.centroids, vec![1.0, 2.0]);
}

#[test]
fn kmeans_separates_two_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pts = Vec::new();
    for i in 0..100 {
        let c = if i < 50 { -5.0 } else { 5.0 };
        pts.push(c + rng.random_range(-0.5..0.5));
        pts.push(rng.random_range(-0.5..0.5));
    }
    let fit = kmeans(&pts, 2, &KMeansConfig::new(2, 0)).unwrap();
    let a = fit.assignments[0];
    assert!(fit.assignments[..50].iter().all(|&x| x == a));
    assert!(fit.assignments[50..].iter().all(|&x| x != a));
}

#[test]
fn kmeans_assignments_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let dim = 3;
    let pts: Vec<f64> = (0..64 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fit = kmeans(&pts, dim, &KMeansConfig::new(5, 9)).unwrap();
    let book = Codebook {
        centroids: fit.centroids.clone(),
        k: 5,
        dim,
        seed: 9,
        backend: "test".into(),
        layer: 0,
    };
    let q = book.quantise(&pts).unwrap();
    for i in 0..64 {
        let p = &pts[i * dim..(i + 1) * dim];
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..5 {
            let d: f64 = p.iter().zip(book.centroid(c)).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        assert_eq!(q[i], best);
    }
}

#[test]
fn kmeans_inertia_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut cfg = KMeansConfig::new(8, 2);
    cfg.tol = 0.0;
    let fit = kmeans(&pts, 2, &cfg).unwrap();
    assert!(fit.inertia.len() > 1);
    for w in fit.inertia.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{:?}", fit.inertia);
    }
}

#[test]
fn kmeans_rejects_too_few_distinct_points() {
    let pts = vec![1.0, 1.0, 1.0, 2.0];
    assert!(kmeans(&pts, 1, &KMeansConfig::new(3, 0)).is_err());
    assert!(kmeans(&pts, 1, &KMeansConfig::new(2, 0)).is_ok());
}

#[test]
fn centroids_quantise_to_their_own_index() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = feats((0..300).map(|_| rng.random_range(-1.0..1.0)).collect(), 3);
    let (book, _) = fit_codebook(&[f], 6, 4).unwrap();
    let q = book.quantise(&book.centroids).unwrap();
    assert_eq!(q, (0..6).collect::<Vec<_>>());
}

#[test]
fn codebook_text_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("codebook.txt");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = feats((0..200).map(|_| rng.random_range(-1.0..1.0) / 3.0).collect(), 4);
    let (book, _) = fit_codebook(&[f], 5, 1).unwrap();
    book.save(&path).unwrap();
    let back = Codebook::load(&path).unwrap();
    assert_eq!(back, book);
    assert_eq!(back.hash(), book.hash());
    assert!(Codebook::from_text("not a codebook", Path::new("x")).is_err());
}

#[test]
fn synthetic_ssl_rate_and_layers() {
    let wave: Vec<f64> = (0..16_000).map(|i| (i as f64 * 0.07).sin() * 0.3).collect();
    let a = SyntheticSsl::new(12, 16).extract(&wave, 16_000).unwrap();
    assert_eq!(a.frames, 50);
    assert_eq!(a.dim, 16);
    assert!(a.values.iter().all(|v| v.abs() <= 1.0));
    let b = SyntheticSsl::new(12, 16).extract(&wave, 16_000).unwrap();
    assert_eq!(a, b);
    let c = SyntheticSsl::new(1, 16).extract(&wave, 16_000).unwrap();
    assert_ne!(a.values, c.values);
}

proptest! {
    #[test]
    fn length_match_stays_in_range(t_f in 1usize..500, t_v in 1usize..200) {
        for i in 0..t_v {
            prop_assert!(match_index(i, t_f, t_v) < t_f);
        }
        if t_f >= t_v {
            for i in 1..t_v {
                prop_assert!(match_index(i, t_f, t_v) > match_index(i - 1, t_f, t_v));
            }
        }
    }
}
