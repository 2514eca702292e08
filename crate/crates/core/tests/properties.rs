mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use waveflow::dsp::{block_partition, deemphasize, dequantize, dtw, preemphasize, Spectrogram};
use waveflow::flow::{sample_latent, Flow, FlowCond, FlowConfig, PositionMode};
use waveflow::numerics::{Graph, ParamStore, Tensor};
use waveflow::seq2seq::feedback_tails;

fn signal(max: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn emphasis_filters_invert(x in signal(300)) {
        let y = deemphasize(&preemphasize(&x));
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn partition_pads_with_labeled_zeros(x in signal(200), k in 1usize..40, n_pad in 1usize..4) {
        let b = block_partition(&x, k, n_pad).unwrap();
        let signal_blocks = x.len().div_ceil(k);
        prop_assert_eq!(b.n_blocks(), signal_blocks + n_pad);
        prop_assert_eq!(b.signal(), &x[..]);
        for t in 0..b.n_blocks() {
            prop_assert_eq!(b.labels[t], if t < signal_blocks { 0.0 } else { 1.0 });
        }
        prop_assert!(b.samples[x.len()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dequantized_values_stay_in_their_bin(levels in prop::collection::vec(any::<u16>(), 1..100), seed in any::<u64>()) {
        let y = dequantize(&levels, &mut ChaCha8Rng::seed_from_u64(seed));
        for (&q, &v) in levels.iter().zip(&y) {
            let lo = 2.0 * q as f64 / 65536.0 - 1.0;
            prop_assert!((v as f64) >= lo - 1e-6 && (v as f64) <= lo + 2.0 / 65536.0 + 1e-6);
        }
    }

    #[test]
    fn tails_are_the_previous_block_end(steps in 1usize..6, k in 1usize..10, frac in 0.0f64..1.0) {
        let tail = ((k as f64 * frac) as usize).max(1);
        let blocks: Vec<f64> = (0..steps * k).map(|i| i as f64).collect();
        let t = feedback_tails(&blocks, steps, k, tail).unwrap();
        prop_assert!(t.data()[..tail].iter().all(|&v| v == 0.0));
        for s in 1..steps {
            prop_assert_eq!(&t.data()[s * tail..(s + 1) * tail], &blocks[s * k - tail..s * k]);
        }
    }

    #[test]
    fn dtw_cost_is_symmetric_and_zero_on_self(a in prop::collection::vec(-5.0f64..5.0, 1..8), b in prop::collection::vec(-5.0f64..5.0, 1..8)) {
        let s = |v: &Vec<f64>| Spectrogram { rows: v.len(), cols: 1, data: v.clone() };
        prop_assert_eq!(dtw(&s(&a), &s(&a)).unwrap().cost, 0.0);
        let ab = dtw(&s(&a), &s(&b)).unwrap().cost;
        let ba = dtw(&s(&b), &s(&a)).unwrap().cost;
        prop_assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn softmax_rows_are_distributions(x in prop::collection::vec(-30.0f64..30.0, 12)) {
        let g = Graph::<f64>::new(false);
        let y = g.softmax(&g.constant(Tensor::new(&[3, 4], x).unwrap())).unwrap();
        for row in y.data().chunks(4) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_is_symmetric_under_flipping(p in 0.001f64..0.999, s in 0.0f64..1.0) {
        let g = Graph::<f64>::new(false);
        let a = g.binary_cross_entropy(&g.constant(Tensor::scalar(p)), &Tensor::scalar(s), 1e-7).unwrap().item();
        let b = g.binary_cross_entropy(&g.constant(Tensor::scalar(1.0 - p)), &Tensor::scalar(1.0 - s), 1e-7).unwrap().item();
        prop_assert!((a - b).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flow_inverts_for_random_parameters(seed in any::<u64>(), strength in 0.0f64..1.0) {
        let cfg = FlowConfig { k: 24, l: 3, m: 2, n: 2, coupling_channels: 8, position_dim: 4, ..FlowConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f32>::new();
        let flow = Flow::new(&mut store, "flow", &cfg, 5, PositionMode::Sequence, &mut rng).unwrap();
        flow.randomize(&mut store, &mut rng, strength);
        let g = Graph::inference(&store);
        let y = g.constant(Tensor::from_fn(&[2, 24], |i| (0.37 * i as f32).sin() * 0.5));
        let cond = FlowCond::Global(g.constant(Tensor::from_fn(&[2, 5], |i| i as f32 * 0.1 - 0.3)));
        let (z, _) = flow.analysis(&g, &y, &cond).unwrap();
        let back = flow.synthesis(&g, &z, &cond).unwrap();
        prop_assert!(back.value().max_abs_diff(y.value()) < 1e-4);
    }

    #[test]
    fn zero_temperature_latents_are_zero(n in 1usize..500, seed in any::<u64>()) {
        let z = sample_latent(n, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(z.iter().all(|&v| v == 0.0));
    }
}
