use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FlowCond, FlowConfig, StageCond};
use crate::error::Result;
use crate::numerics::{glorot, linalg, orthogonal, Graph, Padding, ParamId, ParamStore, Real, Tensor, Var};

/// Offset added to the raw coupling scale before the sigmoid, so a zeroed
/// output layer gives `s = sigmoid(2)`.
const SCALE_SHIFT: f64 = 2.0;

/// One actnorm → 1x1 conv → affine coupling step over `C` channels. The
/// coupling passes the first `⌊C/2⌋` channels through and transforms the rest.
#[derive(Clone, Debug)]
pub(super) struct Step {
    channels: usize,
    an_scale: ParamId,
    an_bias: ParamId,
    w: ParamId,
    k_in: ParamId,
    k_cond: Option<ParamId>,
    k_pos: Option<ParamId>,
    b_in: ParamId,
    k_mid: ParamId,
    b_mid: ParamId,
    k_out: ParamId,
    b_out: ParamId,
}

impl Step {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        cond_dim: usize,
        cfg: &FlowConfig,
        rng: &mut R,
    ) -> Self {
        let (half, rest, h) = (channels / 2, channels - channels / 2, cfg.coupling_channels);
        let [w1, w2, w3] = cfg.kernel_widths;
        let fan_in = w1 * (half + cond_dim + cfg.position_dim);
        let mut add = |n: &str, t: Tensor<T>| store.add(format!("{name}.{n}"), t);
        let an_scale = add("actnorm.scale", Tensor::filled(&[channels], T::one()));
        let an_bias = add("actnorm.bias", Tensor::zeros(&[channels]));
        let w = add("invconv.w", orthogonal(channels, rng));
        let k_in = add("coupling.in.k", glorot(&[w1, half, h], fan_in, h, rng));
        let k_cond = (cond_dim > 0).then(|| add("coupling.cond.k", glorot(&[w1, cond_dim, h], fan_in, h, rng)));
        let k_pos = (cfg.position_dim > 0)
            .then(|| add("coupling.pos.k", glorot(&[w1, cfg.position_dim, h], fan_in, h, rng)));
        let b_in = add("coupling.in.b", Tensor::zeros(&[h]));
        let k_mid = add("coupling.mid.k", glorot(&[w2, h, h], w2 * h, h, rng));
        let b_mid = add("coupling.mid.b", Tensor::zeros(&[h]));
        let k_out = add("coupling.out.k", Tensor::zeros(&[w3, h, 2 * rest]));
        let b_out = add("coupling.out.b", Tensor::zeros(&[2 * rest]));
        Self { channels, an_scale, an_bias, w, k_in, k_cond, k_pos, b_in, k_mid, b_mid, k_out, b_out }
    }

    /// Perturbs every parameter, with noise scaled by fan-in so deep stacks
    /// stay well conditioned.
    pub fn randomize<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R, strength: f64) {
        let out_fan_in = store.get(self.k_out).shape()[..2].iter().product::<usize>() as f64;
        let mut noise = |id: ParamId, std: f64, store: &mut ParamStore<T>| {
            for v in store.value_mut(id).data_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *v += T::of(std * strength * e);
            }
        };
        noise(self.an_bias, 0.1, store);
        noise(self.w, 0.3 / (self.channels as f64).sqrt(), store);
        noise(self.k_out, 0.5 / out_fan_in.sqrt(), store);
        noise(self.b_out, 0.1, store);
        noise(self.b_in, 0.1, store);
        for v in store.value_mut(self.an_scale).data_mut() {
            *v = T::of((rng.random_range(-0.2..0.2) * strength).exp());
        }
    }

    fn coupling_net<T: Real>(&self, g: &Graph<'_, T>, x_a: &Var<T>, sc: &StageCond<T>) -> Result<(Var<T>, Var<T>)> {
        let t_len = x_a.shape()[1];
        let mut h = g.conv1d(x_a, &g.param(self.k_in), Some(&g.param(self.b_in)), Padding::Same, 1)?;
        match (&sc.cond, self.k_cond) {
            (FlowCond::Global(c), Some(k)) => h = g.add(&h, &g.replicated_conv(c, &g.param(k), t_len, Padding::Same, 1)?)?,
            (FlowCond::Frames(c), Some(k)) => h = g.add(&h, &g.conv1d(c, &g.param(k), None, Padding::Same, 1)?)?,
            _ => {}
        }
        if let (Some(pos), Some(k)) = (&sc.pos, self.k_pos) {
            h = g.add(&h, &g.conv1d(pos, &g.param(k), None, Padding::Same, 1)?)?;
        }
        let h = g.tanh(&h)?;
        let h = g.tanh(&g.conv1d(&h, &g.param(self.k_mid), Some(&g.param(self.b_mid)), Padding::Same, 1)?)?;
        let out = g.conv1d(&h, &g.param(self.k_out), Some(&g.param(self.b_out)), Padding::Same, 1)?;
        let rest = self.channels - self.channels / 2;
        let raw = g.add_scalar(&g.slice_cols(&out, 0, rest)?, SCALE_SHIFT)?;
        Ok((raw, g.slice_cols(&out, rest, rest)?))
    }

    /// Returns the output, the per-block log-determinant `[B]` and the part
    /// shared by all blocks `[1]`.
    pub fn analysis<T: Real>(&self, g: &Graph<'_, T>, x: &Var<T>, sc: &StageCond<T>) -> Result<(Var<T>, Var<T>, Var<T>)> {
        let (batch, t_len) = (x.shape()[0], x.shape()[1] as f64);
        let scale = g.param(self.an_scale);
        let x = g.mul(&g.add(x, &g.param(self.an_bias))?, &scale)?;
        let ld_an = g.scale(&g.sum(&g.log_abs(&scale)?)?, t_len)?;

        let w = g.param(self.w);
        let x = g.matmul_nt(&x, &w)?;
        let ld_w = g.scale(&g.log_abs_det(&w)?, t_len)?;

        let half = self.channels / 2;
        let (x_a, x_b) = (g.slice_cols(&x, 0, half)?, g.slice_cols(&x, half, self.channels - half)?);
        let (raw, shift) = self.coupling_net(g, &x_a, sc)?;
        let y_b = g.mul(&g.add(&x_b, &shift)?, &g.sigmoid(&raw)?)?;
        let ld_c = g.group_sum(&g.log_sigmoid(&raw)?, batch)?;
        Ok((g.concat_cols(&[&x_a, &y_b])?, ld_c, g.add(&ld_an, &ld_w)?))
    }

    pub fn synthesis<T: Real>(&self, g: &Graph<'_, T>, y: &Var<T>, sc: &StageCond<T>) -> Result<Var<T>> {
        let half = self.channels / 2;
        let (y_a, y_b) = (g.slice_cols(y, 0, half)?, g.slice_cols(y, half, self.channels - half)?);
        let (raw, shift) = self.coupling_net(g, &y_a, sc)?;
        let x_b = g.sub(&g.div(&y_b, &g.sigmoid(&raw)?)?, &shift)?;
        let x = g.concat_cols(&[&y_a, &x_b])?;

        let w = g.store().get(self.w);
        let inv = linalg::inverse(&w.to_f64_vec(), self.channels)?;
        let w_inv = g.constant(Tensor::new(w.shape(), inv.into_iter().map(T::of).collect())?);
        let x = g.matmul_nt(&x, &w_inv)?;

        Ok(g.sub(&g.div(&x, &g.param(self.an_scale))?, &g.param(self.an_bias))?)
    }
}
