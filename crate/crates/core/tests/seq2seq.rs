mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waveflow::numerics::{grad_check_params, Graph, ParamStore, Real, Tensor, Var};
use waveflow::seq2seq::{eos_loss, DecoderConfig, Seq2Seq};

const VOCAB: usize = 9;

fn build<T: Real>(tail: usize, skip: bool, seed: u64) -> (ParamStore<T>, Seq2Seq) {
    let cfg = common::tiny_config().model.decoder;
    let mut store = ParamStore::new();
    let s = Seq2Seq::new(&mut store, VOCAB, &cfg, tail, skip, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    common::perturb(&mut store, seed + 1, 0.1);
    (store, s)
}

fn blocks<T: Real>(steps: usize, k: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[steps, k], |_| T::of(rng.random_range(-0.5..0.5)))
}

fn set<T: Real>(store: &mut ParamStore<T>, name: &str, v: f64) {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.value_mut(id).data_mut().iter_mut().for_each(|x| *x = T::of(v));
}

#[test]
fn encoder_output_shape() {
    let (store, s) = build::<f32>(4, true, 0);
    let g = Graph::inference(&store);
    let e = s.encoder.forward(&g, &[0, 1, 2, 3, 4, 5, 6]).unwrap();
    assert_eq!(e.shape(), &[7, s.encoder.out_dim]);
    assert!(s.encoder.forward(&g, &[]).is_err());
    assert!(s.encoder.forward(&g, &[VOCAB]).is_err());
}

#[test]
fn relabeled_vocabulary_gives_identical_encodings() {
    let (store, s) = build::<f64>(4, true, 1);
    let perm: Vec<usize> = vec![3, 7, 0, 8, 1, 5, 2, 6, 4];
    let mut permuted = store.clone();
    let id = store.find("enc.embedding").unwrap();
    let table = store.get(id);
    let e = table.cols();
    let data = permuted.value_mut(id).data_mut();
    for (old, &new) in perm.iter().enumerate() {
        data[new * e..(new + 1) * e].copy_from_slice(&table.data()[old * e..(old + 1) * e]);
    }
    let tokens = [2, 5, 5, 0, 8];
    let relabeled: Vec<usize> = tokens.iter().map(|&t| perm[t]).collect();
    let a = s.encoder.forward(&Graph::inference(&store), &tokens).unwrap().value().clone();
    let b = s.encoder.forward(&Graph::inference(&permuted), &relabeled).unwrap().value().clone();
    assert_eq!(a, b);
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    let (mut store, s) = build::<f64>(4, true, 2);
    store.freeze_prefix("dec.", true);
    let w = Tensor::from_fn(&[2, s.encoder.out_dim], |i| (0.3 * i as f64).cos());
    let err = grad_check_params(
        &store,
        |g| -> waveflow::Result<Var<f64>> {
            let e = s.encoder.forward(g, &[4, 1])?;
            Ok(g.sum(&g.mul(&e, &g.constant(w.clone()))?)?)
        },
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err:e}");
}

#[test]
fn prenet_modes() {
    let (mut store, s) = build::<f64>(4, true, 3);
    let d = &s.decoder;
    let x = blocks::<f64>(3, 4, 4);
    {
        let g = Graph::inference(&store);
        let a = d.prenet(&g, &g.constant(x.clone()), None).unwrap().value().clone();
        let b = d.prenet(&g, &g.constant(x.clone()), None).unwrap().value().clone();
        assert_eq!(a, b);
        let m1 = d.prenet(&g, &g.constant(x.clone()), Some(&mut ChaCha8Rng::seed_from_u64(5))).unwrap().value().clone();
        let m2 = d.prenet(&g, &g.constant(x.clone()), Some(&mut ChaCha8Rng::seed_from_u64(5))).unwrap().value().clone();
        assert_eq!(m1, m2);
        assert!(d.prenet(&g, &g.constant(blocks::<f64>(1, 5, 0)), None).is_err());
    }
    set(&mut store, "dec.prenet0.b", 0.0);
    set(&mut store, "dec.prenet1.b", 0.0);
    let g = Graph::inference(&store);
    let z = d.prenet(&g, &g.constant(Tensor::zeros(&[2, 4])), None).unwrap();
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn attention_weights_form_a_distribution() {
    let (store, s) = build::<f64>(4, true, 6);
    let g = Graph::inference(&store);
    let d = &s.decoder;
    let mem = d.memory(&g, &s.encoder.forward(&g, &[1, 2, 3, 4, 5]).unwrap()).unwrap();
    let mut state = d.initial_state(&g, &mem);
    let pre = d.prenet(&g, &g.constant(blocks::<f64>(4, 4, 7)), None).unwrap();
    for t in 0..4 {
        let (_, next) = d.step(&g, &mem, &state, &g.slice_rows(&pre, t, 1).unwrap()).unwrap();
        state = next;
        let w = state.weights().data();
        assert!(w.iter().all(|&v| v >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let cum: f64 = state.cumulative_weights().data().iter().sum();
        assert!((cum - (t + 1) as f64).abs() < 1e-9);
    }
}

#[test]
fn single_token_attends_fully() {
    let (store, s) = build::<f64>(4, true, 8);
    let g = Graph::inference(&store);
    let d = &s.decoder;
    let enc = s.encoder.forward(&g, &[6]).unwrap();
    let mem = d.memory(&g, &enc).unwrap();
    let st = d.initial_state(&g, &mem);
    let q = g.constant(Tensor::from_fn(&[1, 4], |i| i as f64 - 1.5));
    let (ctx, w) = d.attend(&g, &q, &mem, st.weights(), st.cumulative_weights()).unwrap();
    assert_eq!(w.data(), &[1.0]);
    assert!(ctx.value().max_abs_diff(enc.value()) < 1e-15);
}

#[test]
fn zero_score_vector_gives_uniform_weights() {
    let (mut store, s) = build::<f64>(4, true, 9);
    set(&mut store, "dec.att.score.w", 0.0);
    let g = Graph::inference(&store);
    let d = &s.decoder;
    let mem = d.memory(&g, &s.encoder.forward(&g, &[0, 1, 2, 3]).unwrap()).unwrap();
    let st = d.initial_state(&g, &mem);
    let q = g.constant(Tensor::from_fn(&[1, 4], |i| i as f64));
    let (_, w) = d.attend(&g, &q, &mem, st.weights(), st.cumulative_weights()).unwrap();
    assert!(w.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn teacher_forcing_is_causal_and_skips_the_tail() {
    let (store, s) = build::<f64>(3, true, 10);
    let g = Graph::inference(&store);
    let tokens = [1, 4, 2];
    let b = blocks::<f64>(6, 8, 11);
    let base = s.teacher_forced(&g, &tokens, &b, None).unwrap();
    let dc = s.cond_dim();
    assert_eq!(base.cond.shape(), &[6, dc]);
    assert_eq!(base.stop.shape(), &[6]);
    let c = base.cond.data();
    assert!(c[dc - 3..dc].iter().all(|&v| v == 0.0), "go frame");
    for t in 1..6 {
        assert_eq!(&c[(t + 1) * dc - 3..(t + 1) * dc], &b.data()[t * 8 - 3..t * 8]);
    }
    let mut changed = b.clone();
    changed.data_mut()[3 * 8..].iter_mut().for_each(|v| *v += 0.25);
    let other = s.teacher_forced(&g, &tokens, &changed, None).unwrap();
    assert_eq!(&c[..4 * dc], &other.cond.data()[..4 * dc]);
    assert_ne!(&c[4 * dc..], &other.cond.data()[4 * dc..]);
}

#[test]
fn conditioning_width() {
    let mut store = ParamStore::<f32>::new();
    let s = Seq2Seq::new(&mut store, 40, &DecoderConfig::default(), 320, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(s.cond_dim(), 832);
    let (_, plain) = build::<f32>(3, false, 0);
    assert_eq!(plain.cond_dim(), common::tiny_config().model.decoder.projection);
}

#[test]
fn stop_head_values_and_gradient() {
    let (mut store, s) = build::<f64>(3, true, 12);
    let (w, bias) = s.decoder.stop_params();
    let n = store.get(w).len();
    store.set(w, Tensor::zeros(&[n, 1])).unwrap();
    store.set(bias, Tensor::zeros(&[1])).unwrap();
    let b = blocks::<f64>(4, 8, 13);
    {
        let g = Graph::inference(&store);
        let tf = s.teacher_forced(&g, &[0, 1], &b, None).unwrap();
        assert!(tf.stop.data().iter().all(|&p| p == 0.5));
        let labels = Tensor::from_f64(&[4], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((eos_loss(&g, &tf.stop, &labels).unwrap().item() - std::f64::consts::LN_2).abs() < 1e-15);
    }
    store.set(bias, Tensor::from_f64(&[1], &[10.0]).unwrap()).unwrap();
    {
        let g = Graph::inference(&store);
        let tf = s.teacher_forced(&g, &[0, 1], &b, None).unwrap();
        assert!(tf.stop.data().iter().all(|&p| p > 0.9999));
    }
    store.set(bias, Tensor::zeros(&[1])).unwrap();
    common::perturb(&mut store, 14, 0.2);
    let names: Vec<String> = store.ids().map(|id| store.name(id).to_string()).collect();
    for (id, name) in store.ids().collect::<Vec<_>>().into_iter().zip(names) {
        store.set_frozen(id, !name.starts_with("dec.stop"));
    }
    let labels = Tensor::from_f64(&[4], &[0.0, 0.0, 1.0, 1.0]).unwrap();
    let err = grad_check_params(
        &store,
        |g| -> waveflow::Result<Var<f64>> {
            let tf = s.teacher_forced(g, &[0, 1], &b, None)?;
            eos_loss(g, &tf.stop, &labels)
        },
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err:e}");
}
