//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without a test harness so the lines always reach stdout.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};

use lipsynth_core::autograd::lu_logabsdet;
use lipsynth_core::flow::{FlowCondition, FlowConfig, FlowPostNet, NllReduction};
use lipsynth_core::gradcheck::{numeric_grad, relative_error};
use lipsynth_core::loss::{linguistic_loss, mel_loss, total_loss, variance_losses};
use lipsynth_core::{
    Builder, Ctx, Graph, LipToSpeech, LossComponents, LossWeights, ModelConfig, ModelRng, ParamKind, ParamStore,
    Reduction, Scalar, Tensor, Var,
};
use lipsynth_data::units::{length_match, match_index, Codebook, SslFeatures};
use lipsynth_data::{
    fit_units, generate, kmeans, preprocess, Cache, KMeansConfig, Manifest, PreprocessConfig, SslSpec,
    SyntheticConfig,
};
use lipsynth_pipeline::train::{read_metrics, step_inputs};
use lipsynth_pipeline::{
    edit_distance, energy_mae, error_rate, pitch_moments, run_experiment, Checkpoint, ExperimentConfig,
    MetricRecord, Synthesizer, TrainData, Vocoder,
};
use lipsynth_signal::{video_rate_energy, MelConfig, MelExtractor};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    if took > limit {
        Err(format!("took {took:.1?}, over the {limit:?} budget"))
    } else {
        Ok(took)
    }
}

fn flow_inputs<T: Scalar>(
    ctx: &Ctx<'_, T>,
    cfg: &FlowConfig,
    t: usize,
    rng: &mut ModelRng,
) -> (Var<T>, FlowCondition<T>) {
    let x = ctx.constant(Tensor::randn(&[1, t, cfg.bands], 1.0, rng));
    let c = FlowCondition {
        decoder_input: ctx.constant(Tensor::randn(&[1, t, cfg.input_dim], 1.0, rng)),
        decoder_output: ctx.constant(Tensor::randn(&[1, t, cfg.bands], 1.0, rng)),
        speaker: ctx.constant(Tensor::randn(&[1, cfg.input_dim], 1.0, rng)),
    };
    (x, c)
}

fn random_flow<T: Scalar>(cfg: &FlowConfig, seed: u64, noise: f64) -> (FlowPostNet, ParamStore<T>) {
    let mut rng = ModelRng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let flow = FlowPostNet::new(&mut Builder::new(&mut store, &mut rng), cfg.clone()).unwrap();
    store.perturb(noise, &mut rng);
    (flow, store)
}

/// Returns the worst round-trip error and the largest `|z|` seen.
fn worst_round_trip<T: Scalar>(cfg: &FlowConfig) -> (f64, f64) {
    let (mut worst, mut z_max) = (0.0f64, 0.0f64);
    for seed in 0..10 {
        let (flow, store) = random_flow::<T>(cfg, seed, 0.02);
        let ctx = Ctx::eval(&store);
        let mut rng = ModelRng::seed_from_u64(1000 + seed);
        for _ in 0..10 {
            let (x, c) = flow_inputs(&ctx, cfg, 32, &mut rng);
            let z = flow.forward(&ctx, &x, &c).unwrap().z;
            let back = flow.inverse(&ctx, &z, &c).unwrap();
            worst = worst.max(back.value().max_abs_diff(x.value()).as_f64());
            z_max = z.value().data().iter().fold(z_max, |m, v| m.max(v.as_f64().abs()));
        }
    }
    (worst, z_max)
}

fn c1_flow_invertibility() -> Outcome {
    let t0 = Instant::now();
    let cfg = FlowConfig::from_model(&ModelConfig::grid());
    let (e32, z32) = worst_round_trip::<f32>(&cfg);
    let (e64, _) = worst_round_trip::<f64>(&cfg);
    let took = within(Duration::from_secs(60), t0)?;
    ensure!(e32 < 1e-4, "32-bit round-trip error {e32:e}");
    ensure!(e64 < 1e-8, "64-bit round-trip error {e64:e}");
    Ok(format!(
        "100 pairs at 32x80: max error {e32:.1e} (f32), {e64:.1e} (f64), max |z| {z32:.1} in {took:.1?}"
    ))
}

fn toy_flow(bands: usize) -> FlowConfig {
    FlowConfig {
        bands,
        steps: 8,
        hidden: 8,
        layers: 2,
        kernel: 3,
        cond_channels: 6,
        input_dim: 5,
        scale_clamp: 5.0,
    }
}

fn c2_log_det() -> Outcome {
    let t0 = Instant::now();
    let cfg = toy_flow(4);
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (flow, store) = random_flow::<f64>(&cfg, seed, 0.1);
        let ctx = Ctx::eval(&store);
        let mut rng = ModelRng::seed_from_u64(seed + 77);
        let (x, c) = flow_inputs(&ctx, &cfg, 2, &mut rng);
        let analytic = flow.forward(&ctx, &x, &c).unwrap().log_det.value().data()[0];
        // assemble the 8x8 Jacobian column by column with central differences
        let h = 1e-6;
        let x0 = x.value().reshape(&[8]).unwrap();
        let eval = |v: &Tensor<f64>| {
            let xi = ctx.constant(v.reshape(&[1, 2, 4]).unwrap());
            flow.forward(&ctx, &xi, &c).unwrap().z.value().reshape(&[8]).unwrap()
        };
        let mut jac = vec![0.0; 64];
        for j in 0..8 {
            let (mut plus, mut minus) = (x0.clone(), x0.clone());
            plus.data_mut()[j] += h;
            minus.data_mut()[j] -= h;
            let (fp, fm) = (eval(&plus), eval(&minus));
            for i in 0..8 {
                jac[i * 8 + j] = (fp.data()[i] - fm.data()[i]) / (2.0 * h);
            }
        }
        let numeric = lu_logabsdet(&Tensor::from_vec(jac, &[8, 8]).unwrap());
        let rel = (analytic - numeric).abs() / numeric.abs().max(1e-12);
        worst = worst.max(rel);
    }
    let took = within(Duration::from_secs(60), t0)?;
    ensure!(worst < 1e-4, "worst relative log-det error {worst:e}");
    Ok(format!("20 seeds, worst relative error {worst:.1e} in {took:.1?}"))
}

fn gradcheck(x: &Tensor<f64>, f: impl Fn(&Var<f64>) -> Var<f64>) -> f64 {
    let g = Graph::new();
    let v = g.leaf(x.clone());
    let grads = g.backward(&f(&v));
    let numeric = numeric_grad(
        |t| {
            let g = Graph::inference();
            f(&g.constant(t.clone())).value().item()
        },
        x,
        1e-6,
    );
    relative_error(grads.wrt(&v).unwrap(), &numeric, 1e-8)
}

fn c3_gradients() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ModelRng::seed_from_u64(5);
    let mut errs: BTreeMap<&str, f64> = BTreeMap::new();

    // predictions offset from targets so no coordinate sits on the L1 kink
    let target = Tensor::<f64>::randn(&[2, 6, 80], 1.0, &mut rng);
    let shift = Tensor::<f64>::uniform(&[2, 6, 80], 1.0, &mut rng);
    let pred = target.zip_map(&shift, |a, s| a + 0.2 * s.signum() + 0.3 * s);
    errs.insert("L_mel", gradcheck(&pred, |v| mel_loss(v, &v.graph().constant(target.clone())).unwrap()));

    let (b, t, k) = (2, 5, 12);
    let ids: Vec<usize> = (0..b * t).map(|_| rng.random_range(0..k)).collect();
    let logits = Tensor::<f64>::randn(&[b, t, k], 1.0, &mut rng);
    let p_t = Tensor::<f64>::randn(&[b, t], 1.0, &mut rng);
    let e_t = Tensor::<f64>::uniform(&[b, t], 2.0, &mut rng);
    let p_hat = p_t.map(|v| v + 0.4);
    let e_hat = e_t.map(|v| v - 0.6);
    let component = |which: usize, l: &Var<f64>, p: &Var<f64>, e: &Var<f64>| {
        let (ll, lp, le) = variance_losses(l, p, e, &ids, &p_t, &e_t, Reduction::Sum).unwrap();
        [ll, lp, le][which].clone()
    };
    errs.insert(
        "L_l",
        gradcheck(&logits, |v| {
            let g = v.graph();
            component(0, v, &g.constant(p_hat.clone()), &g.constant(e_hat.clone()))
        }),
    );
    errs.insert(
        "L_p",
        gradcheck(&p_hat, |v| {
            let g = v.graph();
            component(1, &g.constant(logits.clone()), v, &g.constant(e_hat.clone()))
        }),
    );
    errs.insert(
        "L_e",
        gradcheck(&e_hat, |v| {
            let g = v.graph();
            component(2, &g.constant(logits.clone()), &g.constant(p_hat.clone()), v)
        }),
    );

    let cfg = toy_flow(4);
    let (flow, store) = random_flow::<f64>(&cfg, 11, 0.3);
    let mut frng = ModelRng::seed_from_u64(3);
    let x = Tensor::<f64>::randn(&[2, 3, 4], 1.0, &mut frng);
    let di = Tensor::<f64>::randn(&[2, 3, 5], 1.0, &mut frng);
    let d_o = Tensor::<f64>::randn(&[2, 3, 4], 1.0, &mut frng);
    let spk = Tensor::<f64>::randn(&[2, 5], 1.0, &mut frng);
    let cond = |ctx: &Ctx<'_, f64>| FlowCondition {
        decoder_input: ctx.constant(di.clone()),
        decoder_output: ctx.constant(d_o.clone()),
        speaker: ctx.constant(spk.clone()),
    };
    let nll_at = |store: &ParamStore<f64>, x: &Tensor<f64>| {
        let ctx = Ctx::eval(store);
        flow.nll(&ctx, &ctx.constant(x.clone()), &cond(&ctx), NllReduction::PerElement)
            .unwrap()
            .value()
            .item()
    };
    let ctx = Ctx::train(&store, 0);
    let xv = ctx.graph().leaf(x.clone());
    let nll = flow.nll(&ctx, &xv, &cond(&ctx), NllReduction::PerElement).unwrap();
    let grads = ctx.graph().backward(&nll);
    let mut flow_err = relative_error(grads.wrt(&xv).unwrap(), &numeric_grad(|v| nll_at(&store, v), &x, 1e-5), 1e-8);
    for (id, entry) in store.iter().filter(|(_, e)| e.kind == ParamKind::Trainable) {
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(entry.value.shape()));
        let numeric = numeric_grad(
            |v| {
                let mut st = store.clone();
                st.set(id, v.clone());
                nll_at(&st, &x)
            },
            &entry.value,
            1e-5,
        );
        flow_err = flow_err.max(relative_error(&analytic, &numeric, 1e-8));
    }
    errs.insert("flow NLL", flow_err);

    let took = within(Duration::from_secs(120), t0)?;
    let summary = errs
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure!(errs.values().all(|&e| e < 1e-4), "relative errors: {summary}");
    Ok(format!("{summary} in {took:.1?}"))
}

fn c4_loss_arithmetic() -> Outcome {
    let c = LossComponents {
        mel: 1.0,
        linguistic: 1.0,
        pitch: 0.5,
        energy: 0.5,
        post: 3.0,
    };
    let w = LossWeights::default();
    ensure!(w.lambda_var == 0.1 && w.lambda_post == 0.1, "default weights {w:?}");
    let total = total_loss(&c, &w).map_err(|e| e.to_string())?;
    ensure!(total == 1.5, "total {total}");
    let g = Graph::<f64>::inference();
    let mut worst = 0.0f64;
    for k in [2usize, 16, 100, 200] {
        let logits = g.constant(Tensor::zeros(&[1, 7, k]));
        let ids: Vec<usize> = (0..7).map(|i| (i * 31) % k).collect();
        let ce = linguistic_loss(&logits, &ids, Reduction::Sum).unwrap().value().item() / 7.0;
        worst = worst.max((ce - (k as f64).ln()).abs());
    }
    ensure!(worst < 1e-6, "uniform cross-entropy off by {worst:e}");
    Ok(format!("(1, 1, 0.5, 0.5, 3) -> {total}; uniform CE = ln K within {worst:.1e}"))
}

fn c5_alignment(cache: &Cache) -> Outcome {
    let m = cache.manifest().map_err(|e| e.to_string())?;
    let mut clips = 0;
    for r in &m.records {
        let c = cache.load(&r.id).map_err(|e| e.to_string())?;
        ensure!(c.mel.frames == 4 * c.clip.len(), "{}: {} mel frames for {} video frames", r.id, c.mel.frames, c.clip.len());
        clips += 1;
    }
    let data = TrainData::from_cache(cache).map_err(|e| e.to_string())?;
    let mut windows = 0;
    for ex in data.train.iter().chain(&data.val) {
        ensure!(ex.mel.frames == 4 * ex.clip.len(), "example {}", ex.id);
        for len in [1, 7, ex.clip.len()] {
            for start in 0..ex.clip.len() {
                let w = lipsynth_data::window_at(ex, start, len, data.stats.log_floor);
                ensure!(w.mel.frames == 4 * w.clip.len(), "{} window at {start}+{len}", ex.id);
                windows += 1;
            }
        }
    }
    for window in [8, 20, 50] {
        let cfg = ExperimentConfig::resolve(
            None,
            &["preset=tiny".into(), format!("train.window={window}"), "train.batch_size=3".into()],
        )
        .map_err(|e| e.to_string())?;
        for step in 0..50 {
            let (ws, _) = step_inputs(&cfg, &data, step).map_err(|e| e.to_string())?;
            for w in ws {
                ensure!(w.mel.frames == 4 * w.clip.len(), "sampled window at step {step}");
                windows += 1;
            }
        }
    }
    Ok(format!("{clips} clips and {windows} windows, zero violations"))
}

fn c6_extraction(corpus: &Path) -> Outcome {
    let m = Manifest::read(&corpus.join("manifest.jsonl")).map_err(|e| e.to_string())?;
    let (wave, sr) = lipsynth_data::clip::read_wav(&m.resolve(&m.records[0].audio)).map_err(|e| e.to_string())?;
    let mel = MelExtractor::new(MelConfig::default()).extract(&wave, sr).map_err(|e| e.to_string())?;
    let usable = mel.frames - mel.frames % 4;
    let mel = mel.slice(0, usable);
    let got = video_rate_energy(&mel, 4).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (i, g) in got.iter().enumerate() {
        let mut acc = 0.0;
        for t in 4 * i..4 * i + 4 {
            let mut sq = 0.0;
            for b in 0..mel.bands {
                let v = mel.values[t * mel.bands + b];
                sq += v * v;
            }
            acc += sq.sqrt();
        }
        let want = acc / 4.0;
        worst = worst.max((g - want).abs() / want.abs().max(1e-300));
    }
    ensure!(worst < 1e-6, "energy relative error {worst:e}");

    let mut rng = rand_chacha_rng(6);
    let dim = 3;
    let pts: Vec<f64> = (0..64 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fit = kmeans(&pts, dim, &KMeansConfig::new(5, 1)).map_err(|e| e.to_string())?;
    let mut mismatches = 0;
    for i in 0..64 {
        let p = &pts[i * dim..(i + 1) * dim];
        let mut best = (f64::INFINITY, 0);
        for c in 0..5 {
            let d: f64 = (0..dim).map(|j| (p[j] - fit.centroids[c * dim + j]).powi(2)).sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        mismatches += usize::from(best.1 != fit.assignments[i]);
    }
    let codebook = Codebook {
        centroids: fit.centroids.clone(),
        k: 5,
        dim,
        seed: 1,
        backend: "points".into(),
        layer: 0,
    };
    let quantised = codebook.quantise(&pts).map_err(|e| e.to_string())?;
    ensure!(mismatches == 0 && quantised == fit.assignments, "{mismatches} k-means assignments differ");

    let mut len_bad = 0;
    let mut cases = 0;
    for t_f in 1..60usize {
        for t_v in 1..40usize {
            let f = SslFeatures {
                values: (0..t_f).map(|i| i as f64).collect(),
                frames: t_f,
                dim: 1,
                layer: 0,
                backend: "index".into(),
            };
            let got = length_match(&f, t_v);
            for (i, g) in got.iter().enumerate() {
                let want = ((i as f64 * t_f as f64 / t_v as f64 + 0.5).floor() as usize).min(t_f - 1);
                len_bad += usize::from(*g as usize != want || match_index(i, t_f, t_v) != want);
                cases += 1;
            }
        }
    }
    ensure!(len_bad == 0, "{len_bad} length-matching indices differ");
    Ok(format!(
        "energy rel. error {worst:.1e}; 64/64 k-means assignments; {cases} length-match indices exact"
    ))
}

fn rand_chacha_rng(seed: u64) -> ModelRng {
    ModelRng::seed_from_u64(seed)
}

fn smoke_overrides(steps: u64) -> Vec<String> {
    [
        "preset=grid",
        "model.d_model=96",
        "model.enc_layers=2",
        "model.dec_layers=2",
        "model.n_clusters=16",
        "model.frontend_channels=16",
        "model.trunk_channels=[16,32,64,96]",
        "model.variance_hidden=128",
        "model.flow_hidden=64",
        "model.flow_cond_channels=64",
        "model.dropout=0.0",
        "train.batch_size=2",
        "train.window=50",
        "train.augment=false",
        "train.epochs=100000",
        "train.validate_every=500",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([format!("train.max_steps={steps}")])
    .collect()
}

fn c7_overfit(root: &Path) -> Outcome {
    let t0 = Instant::now();
    let corpus = root.join("smoke-corpus");
    generate(
        &corpus,
        &SyntheticConfig {
            clips: 2,
            seed: 0,
            frames: 50,
            speakers: 2,
        },
    )
    .map_err(|e| e.to_string())?;
    let cache_dir = root.join("smoke-cache");
    preprocess(&corpus.join("manifest.jsonl"), &cache_dir, &PreprocessConfig::default()).map_err(|e| e.to_string())?;
    let cache = Cache::open(&cache_dir).map_err(|e| e.to_string())?;
    fit_units(&cache, 16, &SslSpec::default(), 0).map_err(|e| e.to_string())?;
    let data = TrainData::from_cache(&cache).map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig::resolve(None, &smoke_overrides(2000)).map_err(|e| e.to_string())?;
    let s = run_experiment::<f32>(&data, &cfg, &root.join("smoke-run"), None).map_err(|e| e.to_string())?;
    let train: Vec<MetricRecord> = read_metrics(&s.metrics)
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|r| r.kind == "train")
        .collect();
    ensure!(train.len() == 2000, "{} training steps recorded", train.len());
    let (first, last) = (train[0].mel, train[1999].mel);
    let ratio = last / first;
    let blocks: Vec<f64> = train
        .chunks(100)
        .map(|c| c.iter().map(|r| r.post).sum::<f64>() / c.len() as f64)
        .collect();
    let rises: Vec<usize> = (1..blocks.len()).filter(|&i| blocks[i] >= blocks[i - 1]).collect();
    let took = t0.elapsed();
    ensure!(
        ratio < 0.1,
        "training mel L1 {last:.1} is {:.1}% of step 0 ({first:.1})",
        100.0 * ratio
    );
    ensure!(
        rises.is_empty(),
        "post-net NLL 100-step means rise at blocks {rises:?}: {blocks:.3?}"
    );
    Ok(format!(
        "mel L1 {first:.0} -> {last:.0} ({:.2}%); NLL means {:.3} -> {:.3} over 20 falling blocks; {:.1} min",
        100.0 * ratio,
        blocks[0],
        blocks[19],
        took.as_secs_f64() / 60.0
    ))
}

fn encode_shape(cfg: ModelConfig, t: usize) -> (Vec<usize>, usize) {
    let mut store = ParamStore::<f32>::new();
    let model = LipToSpeech::new(cfg, &mut store, &mut ModelRng::seed_from_u64(0)).unwrap();
    let ctx = Ctx::eval(&store);
    let x = ctx.constant(Tensor::uniform(&[1, t, 112, 112, 1], 1.0, &mut ModelRng::seed_from_u64(1)));
    let h = model.encode_video(&ctx, &x, &[0]).unwrap();
    (h.shape()[1..].to_vec(), model.postnet().num_steps())
}

fn c8_shapes() -> Outcome {
    let (g, g_steps) = encode_shape(ModelConfig::grid(), 50);
    ensure!(g == [50, 384], "GRID encoding {g:?}");
    let (l, l_steps) = encode_shape(ModelConfig::lip2wav(), 75);
    ensure!(l == [75, 512], "Lip2Wav encoding {l:?}");
    ensure!(g_steps == 8 && l_steps == 8, "flow steps {g_steps}, {l_steps}");
    Ok("GRID 50x112x112 -> (50, 384); Lip2Wav 75x112x112 -> (75, 512); 8 flow steps".into())
}

/// Full-matrix Wagner-Fischer, kept deliberately separate from the
/// two-row implementation under test.
fn dp_oracle(a: &[u8], b: &[u8]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn c9_metrics() -> Outcome {
    let mut rng = rand_chacha_rng(9);
    let mut mismatches = 0;
    for _ in 0..200 {
        let la = rng.random_range(0..25);
        let lb = rng.random_range(1..25);
        let a: Vec<u8> = (0..la).map(|_| b"abcde "[rng.random_range(0..6)]).collect();
        let b: Vec<u8> = (0..lb).map(|_| b"abcde "[rng.random_range(0..6)]).collect();
        let want = dp_oracle(&a, &b);
        let rate = error_rate(&a, &b).map_err(|e| e.to_string())?;
        mismatches += usize::from(edit_distance(&a, &b) != want || rate != 100.0 * want as f64 / b.len() as f64);
    }
    ensure!(mismatches == 0, "{mismatches} of 200 pairs differ from the oracle");

    let normals: Vec<f64> = (0..50_000)
        .flat_map(|_| {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            let r = (-2.0 * u1.ln()).sqrt();
            let th = std::f64::consts::TAU * u2;
            [r * th.cos(), r * th.sin()]
        })
        .collect();
    let m = pitch_moments(&normals).map_err(|e| e.to_string())?;
    ensure!(
        m.skewness.abs() < 0.05 && m.excess_kurtosis.abs() < 0.05,
        "normal draws give skewness {:.4}, excess kurtosis {:.4}",
        m.skewness,
        m.excess_kurtosis
    );

    let g: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..50.0)).collect();
    let r: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..50.0)).collect();
    let mut acc = 0.0;
    for i in 0..1000 {
        acc += (g[i] - r[i]).abs();
    }
    let oracle = acc / 1000.0;
    let got = energy_mae(&g, &r).map_err(|e| e.to_string())?;
    ensure!((got - oracle).abs() < 1e-9, "energy MAE {got} vs {oracle}");
    Ok(format!(
        "200/200 edit distances exact; 1e5 normals: skewness {:.4}, excess kurtosis {:.4}; energy MAE exact",
        m.skewness, m.excess_kurtosis
    ))
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn c10_determinism(root: &Path, corpus: &Path) -> Outcome {
    let manifest = corpus.join("manifest.jsonl");
    let (a, b) = (root.join("det-cache-a"), root.join("det-cache-b"));
    for d in [&a, &b] {
        preprocess(&manifest, d, &PreprocessConfig::default()).map_err(|e| e.to_string())?;
        fit_units(&Cache::open(d).unwrap(), 16, &SslSpec::default(), 0).map_err(|e| e.to_string())?;
    }
    let (ta, tb) = (tree(&a), tree(&b));
    ensure!(ta == tb, "preprocessed caches differ");

    let cfg = ExperimentConfig::resolve(
        None,
        &[
            "preset=tiny".into(),
            "model.n_clusters=16".into(),
            "train.batch_size=4".into(),
            "train.window=16".into(),
            "train.epochs=2".into(),
        ],
    )
    .map_err(|e| e.to_string())?;
    let data = TrainData::from_cache(&Cache::open(&a).unwrap()).map_err(|e| e.to_string())?;
    let (ra, rb) = (root.join("det-run-a"), root.join("det-run-b"));
    let mut runs = Vec::new();
    for d in [&ra, &rb] {
        runs.push(run_experiment::<f32>(&data, &cfg, d, None).map_err(|e| e.to_string())?);
    }
    let strip = |p: &Path| {
        let mut v = read_metrics(p).unwrap();
        v.iter_mut().for_each(|r| r.wall_time = 0.0);
        v
    };
    ensure!(strip(&runs[0].metrics) == strip(&runs[1].metrics), "training metrics differ");
    let (ca, cb) = (tree(&ra), tree(&rb));
    let ckpts: Vec<&String> = ca.keys().filter(|k| k.ends_with(".safetensors")).collect();
    for k in &ckpts {
        ensure!(ca.get(*k) == cb.get(*k), "checkpoint {k} differs");
    }

    let synth = Synthesizer::<f32>::from_checkpoint(&Checkpoint::load(&runs[0].last_checkpoint).unwrap())
        .map_err(|e| e.to_string())?;
    let m = Manifest::read(&Cache::open(&a).unwrap().manifest_path()).unwrap();
    let clip = lipsynth_data::load_clip(&m, &m.records[0], 112).map_err(|e| e.to_string())?;
    let o1 = synth.synthesise(&clip, m.records[0].speaker, 0.0, 1).map_err(|e| e.to_string())?;
    let o2 = synth.synthesise(&clip, m.records[0].speaker, 0.0, 2).map_err(|e| e.to_string())?;
    ensure!(o1 == o2, "temperature-0 synthesis differs");
    let voc = Vocoder::default();
    let w1 = voc.vocode(&o1.refined, &MelConfig::default()).map_err(|e| e.to_string())?;
    let w2 = voc.vocode(&o2.refined, &MelConfig::default()).map_err(|e| e.to_string())?;
    ensure!(w1 == w2, "vocoded waveforms differ");
    Ok(format!(
        "{} cache files, {} checkpoints and metrics, temperature-0 mel and waveform identical",
        ta.len(),
        ckpts.len()
    ))
}

fn c11_sweep(root: &Path, corpus: &Path) -> Outcome {
    let bin = env!("CARGO_BIN_EXE_lipsynth");
    let cache = root.join("sweep-cache");
    let report = root.join("sweep.json");
    let run = |args: &[&str]| {
        let o = Command::new(bin)
            .args(args)
            .env("LIPSYNTH_CACHE", &cache)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()));
        }
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    };
    run(&["preprocess", "--manifest", corpus.join("manifest.jsonl").to_str().unwrap()])?;
    let table = run(&["sweep-units", "--report", report.to_str().unwrap()])?;
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure!(
        v["columns"] == serde_json::json!(["#clusters", "layer", "WER", "PER", "CER"]),
        "columns {}",
        v["columns"]
    );
    let rows = v["rows"].as_array().ok_or("no rows")?;
    let keys: Vec<(u64, u64)> = rows
        .iter()
        .map(|r| (r["clusters"].as_u64().unwrap_or(0), r["layer"].as_u64().unwrap_or(0)))
        .collect();
    ensure!(
        keys == [(100, 1), (100, 12), (100, 24), (200, 1), (200, 12), (200, 24)],
        "grid {keys:?}"
    );
    for r in rows {
        for c in ["wer", "per", "cer"] {
            ensure!(r[c].as_f64().is_some_and(|x| x.is_finite() && x >= 0.0), "bad {c} in {r}");
        }
    }
    let best = table.lines().skip(1).map(str::to_string).collect::<Vec<_>>().join("; ");
    Ok(format!("6 configurations: {best}"))
}

fn main() {
    let root = tempfile::tempdir().expect("temporary directory");
    let corpus = root.path().join("corpus");
    generate(
        &corpus,
        &SyntheticConfig {
            clips: 10,
            seed: 3,
            frames: 50,
            speakers: 4,
        },
    )
    .expect("synthetic corpus");
    let cache_dir = root.path().join("cache");
    preprocess(&corpus.join("manifest.jsonl"), &cache_dir, &PreprocessConfig::default()).expect("preprocess");
    let cache = Cache::open(&cache_dir).expect("cache");
    fit_units(&cache, 16, &SslSpec::default(), 0).expect("fit units");

    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("flow invertibility", Box::new(c1_flow_invertibility)),
        ("log-det exactness", Box::new(c2_log_det)),
        ("gradient checks", Box::new(c3_gradients)),
        ("loss arithmetic", Box::new(c4_loss_arithmetic)),
        ("alignment contract", Box::new(|| c5_alignment(&cache))),
        ("extraction oracles", Box::new(|| c6_extraction(&corpus))),
        ("overfit smoke", Box::new(|| c7_overfit(root.path()))),
        ("shape/config contracts", Box::new(c8_shapes)),
        ("evaluation metrics", Box::new(c9_metrics)),
        ("determinism", Box::new(|| c10_determinism(root.path(), &corpus))),
        ("unit sweep harness", Box::new(|| c11_sweep(root.path(), &corpus))),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            println!("SKIP {n:>2} {name}");
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
