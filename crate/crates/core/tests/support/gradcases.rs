//! Finite-difference checks of every differentiable operation and of the
//! full training objective, in 64-bit. Each case returns relative errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waveflow::model::{LossInput, TtsModel};
use waveflow::numerics::{grad_check, grad_check_params, Graph, Gru, Linear, Lstm, Padding, ParamStore, Tensor, Var};
use waveflow::trainer::{utterance_loss, ToyCorpusSpec};
use waveflow::Result;

pub const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

fn rand_t(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// `Σ w ⊙ y` with fixed random weights, so every output coordinate matters.
fn project(g: &Graph<'_, f64>, y: &Var<f64>) -> Result<Var<f64>> {
    let w = g.constant(rand_t(y.shape(), -1.0, 1.0, 999));
    Ok(g.sum(&g.mul(y, &w)?)?)
}

/// Named relative errors of each checked operation.
pub type Errors = Vec<(&'static str, f64)>;

fn check(
    out: &mut Errors,
    name: &'static str,
    inputs: &[Tensor<f64>],
    f: impl Fn(&Graph<'_, f64>, &[Var<f64>]) -> Result<Var<f64>>,
) {
    out.push((name, grad_check(|g, v| project(g, &f(g, v)?), inputs, H).unwrap()));
}

pub fn elementwise_unary_ops() -> Errors {
    let mut e = Errors::new();
    let x = rand_t(&[3, 4], -2.0, 2.0, 1);
    let pos = rand_t(&[3, 4], 0.2, 3.0, 2);
    let away = x.map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
    check(&mut e, "tanh", &[x.clone()], |g, v| Ok(g.tanh(&v[0])?));
    check(&mut e, "sigmoid", &[x.clone()], |g, v| Ok(g.sigmoid(&v[0])?));
    check(&mut e, "log_sigmoid", &[x.clone()], |g, v| Ok(g.log_sigmoid(&v[0])?));
    check(&mut e, "relu", &[away.clone()], |g, v| Ok(g.relu(&v[0])?));
    check(&mut e, "exp", &[x.clone()], |g, v| Ok(g.exp(&v[0])?));
    check(&mut e, "ln", &[pos], |g, v| Ok(g.ln(&v[0])?));
    check(&mut e, "log_abs", &[away], |g, v| Ok(g.log_abs(&v[0])?));
    check(&mut e, "square", &[x.clone()], |g, v| Ok(g.square(&v[0])?));
    check(&mut e, "scale", &[x.clone()], |g, v| Ok(g.scale(&v[0], -1.7)?));
    check(&mut e, "add_scalar", &[x.clone()], |g, v| Ok(g.add_scalar(&v[0], 0.4)?));
    check(&mut e, "neg", &[x], |g, v| Ok(g.neg(&v[0])?));
    e
}

pub fn binary_ops_with_broadcast() -> Errors {
    let mut e = Errors::new();
    let a = rand_t(&[3, 4], -2.0, 2.0, 3);
    let b = rand_t(&[3, 4], 0.5, 2.0, 4);
    let row = rand_t(&[4], -1.0, 1.0, 5);
    check(&mut e, "add", &[a.clone(), b.clone()], |g, v| Ok(g.add(&v[0], &v[1])?));
    check(&mut e, "add_row", &[a.clone(), row.clone()], |g, v| Ok(g.add(&v[0], &v[1])?));
    check(&mut e, "sub", &[a.clone(), b.clone()], |g, v| Ok(g.sub(&v[0], &v[1])?));
    check(&mut e, "mul", &[a.clone(), b.clone()], |g, v| Ok(g.mul(&v[0], &v[1])?));
    check(&mut e, "mul_row", &[a.clone(), row], |g, v| Ok(g.mul(&v[0], &v[1])?));
    check(&mut e, "div", &[a, b], |g, v| Ok(g.div(&v[0], &v[1])?));
    e
}

pub fn reductions_and_products() -> Errors {
    let mut e = Errors::new();
    let a = rand_t(&[3, 4], -1.0, 1.0, 6);
    let b = rand_t(&[4, 2], -1.0, 1.0, 7);
    let c = rand_t(&[5, 4], -1.0, 1.0, 8);
    e.push(("sum", grad_check(|g, v| Ok::<_, waveflow::Error>(g.sum(&v[0])?), &[a.clone()], H).unwrap()));
    e.push(("mean", grad_check(|g, v| Ok::<_, waveflow::Error>(g.mean(&v[0])?), &[a.clone()], H).unwrap()));
    check(&mut e, "group_sum", &[a.clone()], |g, v| Ok(g.group_sum(&v[0], 3)?));
    check(&mut e, "matmul", &[a.clone(), b], |g, v| Ok(g.matmul(&v[0], &v[1])?));
    check(&mut e, "matmul_nt", &[a.clone(), c], |g, v| Ok(g.matmul_nt(&v[0], &v[1])?));
    check(&mut e, "softmax", &[a], |g, v| Ok(g.softmax(&v[0])?));
    e
}

pub fn shape_ops() -> Errors {
    let mut e = Errors::new();
    let a = rand_t(&[4, 6], -1.0, 1.0, 9);
    let b = rand_t(&[4, 2], -1.0, 1.0, 10);
    let c = rand_t(&[3, 6], -1.0, 1.0, 11);
    check(&mut e, "reshape", &[a.clone()], |g, v| Ok(g.reshape(&v[0], &[2, 12])?));
    check(&mut e, "concat_cols", &[a.clone(), b], |g, v| Ok(g.concat_cols(&[&v[0], &v[1]])?));
    check(&mut e, "slice_cols", &[a.clone()], |g, v| Ok(g.slice_cols(&v[0], 1, 3)?));
    check(&mut e, "concat_rows", &[a.clone(), c], |g, v| Ok(g.concat_rows(&[&v[0], &v[1]])?));
    check(&mut e, "slice_rows", &[a.clone()], |g, v| Ok(g.slice_rows(&v[0], 1, 2)?));
    check(&mut e, "gather_rows", &[a.clone()], |g, v| Ok(g.gather_rows(&v[0], &[3, 0, 0, 2, 3])?));
    check(&mut e, "avg_pairs", &[a], |g, v| Ok(g.avg_pairs(&v[0])?));
    e
}

pub fn max_det_and_cross_entropy() -> Errors {
    let mut e = Errors::new();
    let a = rand_t(&[3, 4], -1.0, 1.0, 12);
    let b = rand_t(&[3, 4], -1.0, 1.0, 13);
    check(&mut e, "max_elementwise", &[a, b], |g, v| Ok(g.max_elementwise(&[&v[0], &v[1]])?));
    let mut w = rand_t(&[4, 4], -0.5, 0.5, 14);
    for i in 0..4 {
        w.data_mut()[i * 5] += 2.0;
    }
    check(&mut e, "log_abs_det", &[w], |g, v| Ok(g.log_abs_det(&v[0])?));
    let p = rand_t(&[6], 0.1, 0.9, 15);
    let labels = Tensor::from_f64(&[6], &[0.0, 1.0, 1.0, 0.0, 0.3, 1.0]).unwrap();
    check(&mut e, "bce", &[p], move |g, v| Ok(g.binary_cross_entropy(&v[0], &labels, 1e-6)?));
    e
}

pub fn convolutions() -> Errors {
    let mut e = Errors::new();
    let x = rand_t(&[2, 7, 3], -1.0, 1.0, 16);
    let k = rand_t(&[3, 3, 4], -1.0, 1.0, 17);
    let b = rand_t(&[4], -1.0, 1.0, 18);
    check(&mut e, "conv1d_same", &[x.clone(), k.clone(), b], |g, v| Ok(g.conv1d(&v[0], &v[1], Some(&v[2]), Padding::Same, 1)?));
    check(&mut e, "conv1d_dilated", &[x.clone(), k.clone()], |g, v| {
        Ok(g.conv1d(&v[0], &v[1], None, Padding::Explicit { left: 3, right: 1 }, 2)?)
    });
    let k2 = rand_t(&[2, 3, 4], -1.0, 1.0, 19);
    check(&mut e, "conv1d_even", &[x, k2], |g, v| Ok(g.conv1d(&v[0], &v[1], None, Padding::Explicit { left: 1, right: 0 }, 1)?));
    let c = rand_t(&[2, 3], -1.0, 1.0, 20);
    check(&mut e, "replicated_conv", &[c, k], |g, v| Ok(g.replicated_conv(&v[0], &v[1], 5, Padding::Same, 1)?));
    e
}

pub fn recurrent_cells() -> Errors {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, "lin", 3, 4, true, &mut rng);
    let lstm = Lstm::new(&mut store, "lstm", 4, 3, &mut rng);
    let gru = Gru::new(&mut store, "gru", 4, 2, &mut rng);
    super::common::perturb(&mut store, 22, 0.2);
    let x = rand_t(&[2, 3], -1.0, 1.0, 23);
    let err = grad_check_params(
        &store,
        |g| -> Result<Var<f64>> {
            let h = g.tanh(&lin.forward(g, &g.constant(x.clone()))?)?;
            let (mut s, mut r) = (lstm.zero_state(g, 2), gru.zero_state(g, 2));
            for _ in 0..3 {
                s = lstm.step(g, &h, &s)?;
                r = gru.step(g, &h, &r)?;
            }
            let y = g.concat_cols(&[&s.h, &s.c, &r])?;
            project(g, &y)
        },
        H,
    )
    .unwrap();
    vec![("recurrent cells", err)]
}

pub fn full_objective_on_two_block_utterance() -> Errors {
    let cfg = super::common::tiny_config();
    let vocab = ToyCorpusSpec::vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut store = ParamStore::<f64>::new();
    let model = TtsModel::new(&mut store, &cfg, vocab.clone(), &mut rng).unwrap();
    super::common::perturb(&mut store, 31, 0.1);
    let k = cfg.k();
    let n_pad = cfg.model.n_pad;
    let signal: Vec<f64> = (0..2 * k).map(|n| 0.4 * (0.7 * n as f64).sin() + rng.random_range(-0.05..0.05)).collect();
    let mut blocks = signal.clone();
    blocks.resize((2 + n_pad) * k, 0.0);
    let mut labels = vec![0.0; 2];
    labels.resize(2 + n_pad, 1.0);
    let input = LossInput {
        tokens: vocab.encode("AB").unwrap(),
        blocks: Tensor::from_f64(&[2 + n_pad, k], &blocks).unwrap(),
        labels: Tensor::from_f64(&[2 + n_pad], &labels).unwrap(),
        valid: 2 + n_pad,
    };
    // A coarser step keeps round-off below the comparison floor for the
    // many small recurrent-weight gradients.
    let err =
        grad_check_params(&store, |g| Ok::<_, waveflow::Error>(utterance_loss(&model, g, &input, None, input.valid)?.0), 1e-4)
            .unwrap();
    vec![("end-to-end objective", err)]
}
