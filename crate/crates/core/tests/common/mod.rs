#![allow(dead_code)]

use waveflow::numerics::Tensor;

/// Determinant by Gaussian elimination with partial pivoting.
pub fn log_abs_det(mut a: Vec<f64>, n: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs())).unwrap();
        for j in 0..n {
            a.swap(k * n + j, p * n + j);
        }
        let piv = a[k * n + k];
        acc += piv.abs().ln();
        for i in k + 1..n {
            let f = a[i * n + k] / piv;
            for j in k..n {
                a[i * n + j] -= f * a[k * n + j];
            }
        }
    }
    acc
}

/// `log|det J|` of `f` at `y0` (shape `[1, n]`) from central differences.
pub fn numeric_log_det(f: impl Fn(&Tensor<f64>) -> Tensor<f64>, y0: &Tensor<f64>) -> f64 {
    let n = y0.len();
    let h = 1e-5;
    let mut jac = vec![0.0; n * n];
    for j in 0..n {
        let mut up = y0.clone();
        up.data_mut()[j] += h;
        let mut dn = y0.clone();
        dn.data_mut()[j] -= h;
        let (zu, zd) = (f(&up), f(&dn));
        for i in 0..n {
            jac[i * n + j] = (zu.data()[i] - zd.data()[i]) / (2.0 * h);
        }
    }
    log_abs_det(jac, n)
}

/// A model small enough for finite-difference checks and quick training.
pub fn tiny_config() -> waveflow::config::Config {
    use waveflow::config::Config;
    use waveflow::flow::FlowConfig;
    use waveflow::seq2seq::DecoderConfig;
    let mut cfg = Config::desk();
    cfg.model.block_unit = 8;
    cfg.model.flow = FlowConfig { k: 0, l: 2, m: 2, n: 1, coupling_channels: 4, position_dim: 2, ..FlowConfig::default() };
    cfg.model.decoder = DecoderConfig {
        embed_dim: 4,
        bank_widths: 2,
        bank_channels: 3,
        highway_layers: 1,
        gru_units: 2,
        prenet: vec![4, 3],
        prenet_dropout: 0.0,
        attention_rnn: 4,
        attention_dim: 3,
        location_filters: 2,
        location_width: 3,
        decoder_rnn: 4,
        decoder_layers: 1,
        projection: 4,
    };
    cfg.train.batch_size = 2;
    cfg
}

/// Adds uniform noise of the given width to every parameter so that
/// zero-initialized layers are exercised.
pub fn perturb<T: waveflow::numerics::Real>(store: &mut waveflow::numerics::ParamStore<T>, seed: u64, width: f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = *v + T::of(rng.random_range(-width..width));
        }
    }
}
