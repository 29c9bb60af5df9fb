//! Post-net invertibility, exact log-determinant and likelihood.

use lipsynth_core::flow::{FlowCondition, FlowConfig, FlowPostNet, NllReduction};
use lipsynth_core::gradcheck::{numeric_grad, numeric_jacobian, relative_error};
use lipsynth_core::{autograd::lu_logabsdet, Builder, Ctx, ModelRng, ParamStore, Scalar, Tensor};
use rand::SeedableRng;

fn toy_cfg(bands: usize) -> FlowConfig {
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

struct Setup<T: Scalar> {
    flow: FlowPostNet,
    store: ParamStore<T>,
    di: Tensor<T>,
    d_o: Tensor<T>,
    spk: Tensor<T>,
}

fn setup<T: Scalar>(cfg: FlowConfig, b: usize, t: usize, seed: u64, noise: f64) -> Setup<T> {
    let mut rng = ModelRng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let flow = FlowPostNet::new(&mut Builder::new(&mut store, &mut rng), cfg.clone()).unwrap();
    store.perturb(noise, &mut rng);
    Setup {
        flow,
        store,
        di: Tensor::randn(&[b, t, cfg.input_dim], 1.0, &mut rng),
        d_o: Tensor::randn(&[b, t, cfg.bands], 1.0, &mut rng),
        spk: Tensor::randn(&[b, cfg.input_dim], 1.0, &mut rng),
    }
}

fn cond<T: Scalar>(ctx: &Ctx<'_, T>, s: &Setup<T>) -> FlowCondition<T> {
    FlowCondition {
        decoder_input: ctx.constant(s.di.clone()),
        decoder_output: ctx.constant(s.d_o.clone()),
        speaker: ctx.constant(s.spk.clone()),
    }
}

fn round_trip<T: Scalar>(seed: u64) -> f64 {
    let s = setup::<T>(toy_cfg(80), 1, 32, seed, 0.05);
    let ctx = Ctx::eval(&s.store);
    let c = cond(&ctx, &s);
    let mut rng = ModelRng::seed_from_u64(seed + 1000);
    let x = ctx.constant(Tensor::randn(&[1, 32, 80], 1.0, &mut rng));
    let z = s.flow.forward(&ctx, &x, &c).unwrap().z;
    let back = s.flow.inverse(&ctx, &z, &c).unwrap();
    back.value().max_abs_diff(x.value()).as_f64()
}

#[test]
fn inverse_undoes_forward() {
    for seed in 0..5 {
        assert!(round_trip::<f32>(seed) < 1e-4);
        assert!(round_trip::<f64>(seed) < 1e-8);
    }
}

#[test]
fn log_det_matches_numerical_jacobian() {
    for seed in 0..5 {
        let s = setup::<f64>(toy_cfg(4), 1, 2, seed, 0.05);
        let f = |x: &Tensor<f64>| {
            let ctx = Ctx::eval(&s.store);
            let c = cond(&ctx, &s);
            s.flow.forward(&ctx, &ctx.constant(x.clone()), &c).unwrap().z.value().reshape(&[8]).unwrap()
        };
        let mut rng = ModelRng::seed_from_u64(seed);
        let x = Tensor::randn(&[1, 2, 4], 1.0, &mut rng);
        let jac = numeric_jacobian(|v| f(&v.reshape(&[1, 2, 4]).unwrap()), &x.reshape(&[8]).unwrap(), 1e-6);
        let numeric = lu_logabsdet(&jac);
        let ctx = Ctx::eval(&s.store);
        let c = cond(&ctx, &s);
        let analytic = s.flow.forward(&ctx, &ctx.constant(x), &c).unwrap().log_det.value().data()[0];
        let rel = (analytic - numeric).abs() / numeric.abs().max(1.0);
        assert!(rel < 1e-4, "seed {seed}: {analytic} vs {numeric}");
    }
}

#[test]
fn identity_flow_nll_at_origin() {
    let mut s = setup::<f64>(toy_cfg(4), 2, 3, 7, 0.0);
    // replace the random rotations with identities
    let names: Vec<String> = s
        .store
        .iter()
        .filter(|(_, e)| e.name.ends_with("invconv.weight"))
        .map(|(_, e)| e.name.clone())
        .collect();
    for n in names {
        let id = s.store.id(&n).unwrap();
        s.store.set(id, Tensor::eye(4));
    }
    let ctx = Ctx::eval(&s.store);
    let c = cond(&ctx, &s);
    let x = ctx.constant(Tensor::zeros(&[2, 3, 4]));
    let out = s.flow.forward(&ctx, &x, &c).unwrap();
    assert!(out.z.value().max_abs() == 0.0);
    assert!(out.log_det.value().max_abs() == 0.0);
    let nll = s.flow.nll(&ctx, &x, &c, NllReduction::PerElement).unwrap();
    assert!((nll.value().item() - 0.918_938_533_204_672_7).abs() < 1e-12);
    let z0 = s.flow.sample(&ctx, &c, 0.0, &mut ModelRng::seed_from_u64(1)).unwrap();
    assert_eq!(z0.value().max_abs(), 0.0);
}

#[test]
fn nll_gradients_match_finite_differences() {
    let s = setup::<f64>(toy_cfg(4), 2, 3, 11, 0.3);
    let mut rng = ModelRng::seed_from_u64(3);
    let x = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
    let ctx = Ctx::train(&s.store, 0);
    let xv = ctx.graph().leaf(x.clone());
    let c = cond(&ctx, &s);
    let nll = s.flow.nll(&ctx, &xv, &c, NllReduction::PerElement).unwrap();
    let grads = ctx.graph().backward(&nll);
    let eval = |store: &ParamStore<f64>, x: &Tensor<f64>| {
        let ctx = Ctx::eval(store);
        let c = cond(&ctx, &s);
        s.flow.nll(&ctx, &ctx.constant(x.clone()), &c, NllReduction::PerElement).unwrap().value().item()
    };
    let num_x = numeric_grad(|t| eval(&s.store, t), &x, 1e-5);
    assert!(relative_error(grads.wrt(&xv).unwrap(), &num_x, 1e-6) < 1e-6);
    for (id, entry) in s.store.iter().filter(|(_, e)| e.kind == lipsynth_core::ParamKind::Trainable) {
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(entry.value.shape()));
        let numeric = numeric_grad(
            |t| {
                let mut st = s.store.clone();
                st.set(id, t.clone());
                eval(&st, &x)
            },
            &entry.value,
            1e-5,
        );
        let err = relative_error(&analytic, &numeric, 1e-6);
        assert!(err < 1e-5, "{}: {err:e}", entry.name);
    }
}

#[test]
fn data_dependent_init_standardises_outputs() {
    let s0 = setup::<f64>(toy_cfg(6), 2, 20, 5, 0.0);
    let mut store = s0.store.clone();
    let mut rng = ModelRng::seed_from_u64(9);
    let x = Tensor::randn(&[2, 20, 6], 3.0, &mut rng).map(|v| v - 7.0);
    assert!(s0.flow.initialise(&mut store, &x, &s0.di, &s0.d_o, &s0.spk).unwrap());
    assert!(!s0.flow.initialise(&mut store, &x, &s0.di, &s0.d_o, &s0.spk).unwrap());
    let ctx = Ctx::eval(&store);
    let c = cond(&ctx, &s0);
    let z = s0.flow.forward(&ctx, &ctx.constant(x), &c).unwrap().z;
    // identity couplings: each ActNorm standardises, each rotation keeps
    // the means at zero and the total variance at one per band
    let zd = z.value().data();
    let mut total_var = 0.0;
    for ch in 0..6 {
        let vals: Vec<f64> = zd.iter().skip(ch).step_by(6).copied().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        total_var += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-9, "band {ch}: mean {mean}");
    }
    assert!((total_var / 6.0 - 1.0).abs() < 1e-3, "{total_var}");
}

#[test]
fn conditioning_and_frame_order() {
    let s = setup::<f64>(toy_cfg(4), 2, 5, 21, 0.3);
    let ctx = Ctx::eval(&s.store);
    let mut rng = ModelRng::seed_from_u64(4);
    let x = Tensor::randn(&[2, 5, 4], 1.0, &mut rng);
    let c = cond(&ctx, &s);
    let z = s.flow.forward(&ctx, &ctx.constant(x.clone()), &c).unwrap().z;
    // swapping the speakers of the two items changes the latent
    let swapped = FlowCondition {
        speaker: c.speaker.index_select(0, &[1, 0]),
        ..c.clone()
    };
    let z2 = s.flow.forward(&ctx, &ctx.constant(x.clone()), &swapped).unwrap().z;
    assert!(z.value().max_abs_diff(z2.value()) > 1e-6);
    // log_det is additive across the batch and equals the per-item sum
    let per_item = s.flow.forward(&ctx, &ctx.constant(x.narrow(0, 1, 1)), &FlowCondition {
        decoder_input: c.decoder_input.narrow(0, 1, 1),
        decoder_output: c.decoder_output.narrow(0, 1, 1),
        speaker: c.speaker.narrow(0, 1, 1),
    });
    let full = s.flow.forward(&ctx, &ctx.constant(x), &c).unwrap();
    let single = per_item.unwrap().log_det.value().data()[0];
    assert!((full.log_det.value().data()[1] - single).abs() < 1e-10);
}

#[test]
fn mismatched_condition_is_rejected() {
    let s = setup::<f32>(toy_cfg(4), 1, 5, 1, 0.0);
    let ctx = Ctx::eval(&s.store);
    let c = cond(&ctx, &s);
    let x = ctx.constant(Tensor::zeros(&[1, 6, 4]));
    assert!(s.flow.forward(&ctx, &x, &c).is_err());
    assert!(FlowPostNet::new(
        &mut Builder::<f32>::new(&mut ParamStore::new(), &mut ModelRng::seed_from_u64(0)),
        toy_cfg(5)
    )
    .is_err());
}
