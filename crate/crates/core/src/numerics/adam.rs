use super::{NumericsError, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// From this step on the rate decays as `lr · sqrt(decay_start / t)`;
    /// 0 disables the decay.
    pub decay_start: u64,
    /// Gradients whose global L2 norm over trainable parameters exceeds
    /// this are rescaled to it; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay_start: 10_000, clip_norm: 1.0 }
    }
}

impl AdamConfig {
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.decay_start > 0 && t > self.decay_start {
            self.lr * (self.decay_start as f64 / t as f64).sqrt()
        } else {
            self.lr
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { config, t: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update. Frozen parameters are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<(), NumericsError> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(NumericsError::Shape {
                op: "adam",
                detail: format!("{} params, {} grads, {} moments", store.len(), grads.len(), self.m.len()),
            });
        }
        for (id, g) in store.ids().zip(grads) {
            if g.shape() != store.get(id).shape() || self.m[id.index()].shape() != g.shape() {
                return Err(NumericsError::Shape {
                    op: "adam",
                    detail: format!("{}: {:?} vs {:?}", store.name(id), store.get(id).shape(), g.shape()),
                });
            }
            if !g.all_finite() {
                return Err(NumericsError::NonFiniteGrad { op: "adam" });
            }
        }
        self.t += 1;
        let c = self.config;
        let clip = if c.clip_norm > 0.0 {
            let sq: f64 = store
                .ids()
                .filter(|&id| !store.is_frozen(id))
                .flat_map(|id| grads[id.index()].data().iter().map(|&x| x.f64().powi(2)))
                .sum();
            T::of((c.clip_norm / sq.sqrt()).min(1.0))
        } else {
            T::one()
        };
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = 1.0 - c.beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t.min(i32::MAX as u64) as i32);
        let step = T::of(c.lr_at(self.t) / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let eps = T::of(c.eps);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if store.is_frozen(id) {
                continue;
            }
            let k = id.index();
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = store.value_mut(id).data_mut();
            for i in 0..g.len() {
                let gi = clip * g[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                p[i] -= step * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}
