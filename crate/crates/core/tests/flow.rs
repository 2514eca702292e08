mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waveflow::flow::{Flow, FlowCond, FlowConfig, PositionMode};
use waveflow::numerics::{grad_check_params, Graph, ParamStore, Real, Tensor};

fn tiny() -> FlowConfig {
    FlowConfig { k: 8, l: 2, m: 2, n: 2, coupling_channels: 8, position_dim: 4, ..FlowConfig::default() }
}

fn build<T: Real>(cfg: &FlowConfig, cond_dim: usize, seed: u64, strength: f64) -> (ParamStore<T>, Flow) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let flow = Flow::new(&mut store, "flow", cfg, cond_dim, PositionMode::Sequence, &mut rng).unwrap();
    if strength > 0.0 {
        flow.randomize(&mut store, &mut rng, strength);
    }
    (store, flow)
}

fn random(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-std..std))
}

fn check_logdet(cfg: &FlowConfig, seeds: std::ops::Range<u64>) {
    let n = cfg.k;
    for seed in seeds {
        let (store, flow) = build::<f64>(cfg, 3, seed, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let y0 = random(&[1, n], 1.0, &mut rng);
        let c = random(&[1, 3], 1.0, &mut rng);
        let g = Graph::inference(&store);
        let cond = FlowCond::Global(g.constant(c.clone()));
        let (_, ld) = flow.analysis(&g, &g.constant(y0.clone()), &cond).unwrap();
        let numeric = common::numeric_log_det(|y| flow.analysis(&g, &g.constant(y.clone()), &cond).unwrap().0.value().clone(), &y0);
        let analytic = ld.item();
        let rel = (analytic - numeric).abs() / numeric.abs().max(1e-8);
        assert!(rel < 1e-5 || (analytic - numeric).abs() < 1e-9, "seed {seed}: {analytic} vs {numeric}");
    }
}

#[test]
fn logdet_matches_numerical_jacobian() {
    check_logdet(&tiny(), 0..20);
}

#[test]
fn logdet_with_odd_frame_length() {
    let cfg = FlowConfig { k: 12, l: 3, m: 2, n: 2, coupling_channels: 8, position_dim: 4, ..FlowConfig::default() };
    check_logdet(&cfg, 0..5);
}

#[test]
fn identity_parameters_give_closed_form_logdet() {
    let cfg = FlowConfig { k: 64, l: 4, m: 3, n: 2, coupling_channels: 16, position_dim: 0, ..FlowConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let flow = Flow::new(&mut store, "f", &cfg, 0, PositionMode::Sequence, &mut rng).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with("invconv.w") {
            let n = store.get(id).shape()[0];
            store.set(id, Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })).unwrap();
        }
    }
    let y = random(&[2, 64], 1.0, &mut rng);
    let g = Graph::inference(&store);
    let (z, ld) = flow.analysis(&g, &g.constant(y.clone()), &FlowCond::None).unwrap();
    let s = 1.0 / (1.0 + (-2.0f64).exp());
    let want: f64 = cfg.stage_shapes(16).iter().map(|&(t, c)| cfg.n as f64 * (t * c / 2) as f64 * s.ln()).sum();
    for b in 0..2 {
        assert!((ld.data()[b] - want).abs() < 1e-9);
    }
    // every sample is either passed through or scaled by a power of s
    for (zi, yi) in z.data().iter().zip(y.data()) {
        let r = zi / yi;
        let p = r.ln() / s.ln();
        assert!((p - p.round()).abs() < 1e-9, "{r}");
    }
}

#[test]
fn round_trip_64bit_many_configs() {
    let configs = [
        tiny(),
        FlowConfig { k: 64, l: 4, m: 3, n: 2, coupling_channels: 16, position_dim: 6, ..FlowConfig::default() },
        FlowConfig { k: 40, l: 10, m: 1, n: 3, coupling_channels: 8, position_dim: 0, ..FlowConfig::default() },
        FlowConfig { k: 60, l: 5, m: 2, n: 2, coupling_channels: 8, position_dim: 4, ..FlowConfig::default() },
    ];
    for (ci, cfg) in configs.iter().enumerate() {
        for seed in 0..50u64 {
            let (store, flow) = build::<f64>(cfg, 5, seed, 1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let y = random(&[2, cfg.k], 1.0, &mut rng);
            let g = Graph::inference(&store);
            let cond = FlowCond::Global(g.constant(random(&[2, 5], 2.0, &mut rng)));
            let (z, _) = flow.analysis(&g, &g.constant(y.clone()), &cond).unwrap();
            let back = flow.synthesis(&g, &z, &cond).unwrap();
            assert!(back.value().max_abs_diff(&y) < 1e-9, "config {ci} seed {seed}");
        }
    }
}

#[test]
fn frame_conditioning_round_trip() {
    let cfg = FlowConfig { k: 64, l: 4, m: 3, n: 2, coupling_channels: 16, position_dim: 4, ..FlowConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let flow = Flow::new(&mut store, "v", &cfg, 3, PositionMode::Subframe { period: 4 }, &mut rng).unwrap();
    flow.randomize(&mut store, &mut rng, 1.0);
    let g = Graph::inference(&store);
    let y = random(&[1, 128], 1.0, &mut rng);
    let cond = FlowCond::Frames(g.constant(random(&[1, 32, 3], 1.0, &mut rng)));
    let (z, _) = flow.analysis(&g, &g.constant(y.clone()), &cond).unwrap();
    assert!(flow.synthesis(&g, &z, &cond).unwrap().value().max_abs_diff(&y) < 1e-9);
}

#[test]
fn nll_gradient_matches_finite_differences() {
    let (store, flow) = build::<f64>(&tiny(), 3, 7, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y = random(&[2, 8], 1.0, &mut rng);
    let c = random(&[2, 3], 1.0, &mut rng);
    let err = grad_check_params(
        &store,
        |g| {
            let cond = FlowCond::Global(g.constant(c.clone()));
            let nll = flow.nll(g, &g.constant(y.clone()), &cond)?;
            Ok::<_, waveflow::Error>(g.sum(&nll)?)
        },
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn round_trip_is_independent_of_conditioning() {
    let cfg = tiny();
    let (store, flow) = build::<f64>(&cfg, 3, 2, 1.0);
    let g = Graph::inference(&store);
    let z = g.constant(Tensor::from_fn(&[1, 8], |i| i as f64 * 0.3 - 1.0));
    for s in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let cond = FlowCond::Global(g.constant(random(&[1, 3], 5.0, &mut rng)));
        let y = flow.synthesis(&g, &z, &cond).unwrap();
        let (back, _) = flow.analysis(&g, &y, &cond).unwrap();
        assert!(back.value().max_abs_diff(z.value()) < 1e-10);
    }
}
