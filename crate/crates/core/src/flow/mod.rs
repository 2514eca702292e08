//! Multi-scale Glow-style flow between waveform blocks and Gaussian noise.
//!
//! A block of `K` samples is viewed as `J = K/L` frames of `L` samples. Each
//! of the `M` stages runs `N` steps of actnorm, invertible 1x1 convolution and
//! affine coupling, and every stage after the first starts with a squeeze
//! that halves the timesteps and doubles the channels. Row-major squeezing is
//! a pure reshape, so the latent is the final activation read out flat.

mod position;
mod step;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use position::{embedding, stage_positions, PositionMode};
use step::Step;

use crate::error::{config, invalid, Result};
use crate::numerics::{Graph, ParamStore, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// Samples per block.
    pub k: usize,
    /// Samples per flow frame.
    pub l: usize,
    /// Stages.
    pub m: usize,
    /// Steps per stage.
    pub n: usize,
    pub coupling_channels: usize,
    pub kernel_widths: [usize; 3],
    /// Width of the sinusoidal position embedding; 0 disables it.
    pub position_dim: usize,
    /// Sampling temperature.
    pub temperature: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            k: 960,
            l: 10,
            m: 5,
            n: 12,
            coupling_channels: 256,
            kernel_widths: [3, 1, 3],
            position_dim: 64,
            temperature: 0.7,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.m == 0 || self.k == 0 || self.coupling_channels == 0 {
            return Err(config("flow k, l, m and coupling_channels must be positive"));
        }
        if self.k % self.l != 0 {
            return Err(config(format!("flow.k = {} is not a multiple of flow.l = {}", self.k, self.l)));
        }
        if self.l < 2 && self.n > 0 {
            return Err(config("flow.l must be at least 2 for coupling"));
        }
        if (self.k / self.l) % self.frame_multiple() != 0 {
            return Err(config(format!(
                "J = {} frames not divisible by 2^(M-1) = {}",
                self.k / self.l,
                self.frame_multiple()
            )));
        }
        if self.kernel_widths.iter().any(|w| w % 2 == 0) {
            return Err(config(format!("coupling kernel widths {:?} must be odd", self.kernel_widths)));
        }
        if self.position_dim % 2 != 0 {
            return Err(config("position_dim must be even"));
        }
        if !(self.temperature >= 0.0) {
            return Err(config("temperature must be non-negative"));
        }
        Ok(())
    }

    /// Frames per block.
    pub fn j(&self) -> usize {
        self.k / self.l
    }

    /// Frame counts must be multiples of this.
    pub fn frame_multiple(&self) -> usize {
        1 << (self.m - 1)
    }

    /// `(timesteps, channels)` at each stage for a `frames`-frame input.
    pub fn stage_shapes(&self, frames: usize) -> Vec<(usize, usize)> {
        (0..self.m).map(|s| (frames >> s, self.l << s)).collect()
    }
}

/// Conditioning fed to every coupling layer.
#[derive(Clone, Debug)]
pub enum FlowCond<T> {
    None,
    /// One vector per block, `[B, D]`, replicated over all timesteps.
    Global(Var<T>),
    /// One row per first-stage timestep, `[B, J, D]`; later stages see
    /// averages of adjacent pairs.
    Frames(Var<T>),
}

/// Conditioning and position table for one stage.
pub(crate) struct StageCond<T> {
    pub cond: FlowCond<T>,
    pub pos: Option<Var<T>>,
}

/// Parameter handles of a flow; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Flow {
    pub config: FlowConfig,
    pub cond_dim: usize,
    pub positions: PositionMode,
    steps: Vec<Vec<Step>>,
}

impl Flow {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &FlowConfig,
        cond_dim: usize,
        positions: PositionMode,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let steps = config
            .stage_shapes(config.j())
            .iter()
            .enumerate()
            .map(|(s, &(_, c))| {
                (0..config.n)
                    .map(|k| Step::new(store, &format!("{prefix}.s{s}.k{k}"), c, cond_dim, config, rng))
                    .collect()
            })
            .collect();
        Ok(Self { config: config.clone(), cond_dim, positions, steps })
    }

    /// Moves every parameter away from its identity initialization (tests
    /// and benchmarks of untrained flows).
    pub fn randomize<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R, strength: f64) {
        for step in self.steps.iter().flatten() {
            step.randomize(store, rng, strength);
        }
    }

    fn frames_of(&self, len: usize) -> Result<usize> {
        let l = self.config.l;
        if len == 0 || len % l != 0 || (len / l) % self.config.frame_multiple() != 0 {
            return Err(invalid(format!(
                "block of {len} samples is not a multiple of L·2^(M-1) = {}",
                l * self.config.frame_multiple()
            )));
        }
        Ok(len / l)
    }

    fn stage_conds<T: Real>(&self, g: &Graph<'_, T>, cond: &FlowCond<T>, frames: usize) -> Result<Vec<StageCond<T>>> {
        let mut out = Vec::with_capacity(self.config.m);
        let mut cur = cond.clone();
        match cond {
            FlowCond::Global(c) if c.shape().len() != 2 || c.shape()[1] != self.cond_dim => {
                return Err(invalid(format!("global conditioning {:?}, expected [B, {}]", c.shape(), self.cond_dim)))
            }
            FlowCond::Frames(c) if c.shape().len() != 3 || c.shape()[1] != frames || c.shape()[2] != self.cond_dim => {
                return Err(invalid(format!(
                    "frame conditioning {:?}, expected [B, {frames}, {}]",
                    c.shape(),
                    self.cond_dim
                )))
            }
            FlowCond::None if self.cond_dim > 0 => return Err(invalid("flow expects conditioning")),
            _ => {}
        }
        for (s, &(t, _)) in self.config.stage_shapes(frames).iter().enumerate() {
            if s > 0 {
                if let FlowCond::Frames(c) = &cur {
                    cur = FlowCond::Frames(g.avg_pairs(c)?);
                }
            }
            let pos = (self.config.position_dim > 0)
                .then(|| g.constant(stage_positions(self.positions, self.config.position_dim, t, s).cast()));
            out.push(StageCond { cond: cur.clone(), pos });
        }
        Ok(out)
    }

    /// Maps blocks `y: [B, n]` to latents `z: [B, n]` and per-block
    /// `log|det ∂z/∂y|` of shape `[B]`.
    pub fn analysis<T: Real>(&self, g: &Graph<'_, T>, y: &Var<T>, cond: &FlowCond<T>) -> Result<(Var<T>, Var<T>)> {
        let [batch, len] = *y.shape() else {
            return Err(invalid(format!("flow input {:?}, expected [B, n]", y.shape())));
        };
        let frames = self.frames_of(len)?;
        let conds = self.stage_conds(g, cond, frames)?;
        let mut ld_blocks = g.constant(Tensor::zeros(&[batch]));
        let mut ld_const = g.constant(Tensor::zeros(&[1]));
        let mut x = y.clone();
        for (s, (&(t, c), sc)) in self.config.stage_shapes(frames).iter().zip(&conds).enumerate() {
            x = g.reshape(&x, &[batch, t, c])?;
            for step in &self.steps[s] {
                let (nx, per_block, shared) = step.analysis(g, &x, sc)?;
                x = nx;
                ld_blocks = g.add(&ld_blocks, &per_block)?;
                ld_const = g.add(&ld_const, &shared)?;
            }
        }
        let z = g.reshape(&x, &[batch, len])?;
        Ok((z, g.add(&ld_blocks, &ld_const)?))
    }

    /// Exact inverse of [`Flow::analysis`].
    pub fn synthesis<T: Real>(&self, g: &Graph<'_, T>, z: &Var<T>, cond: &FlowCond<T>) -> Result<Var<T>> {
        let [batch, len] = *z.shape() else {
            return Err(invalid(format!("flow input {:?}, expected [B, n]", z.shape())));
        };
        let frames = self.frames_of(len)?;
        let conds = self.stage_conds(g, cond, frames)?;
        let mut x = z.clone();
        for (s, (&(t, c), sc)) in self.config.stage_shapes(frames).iter().zip(&conds).enumerate().rev() {
            x = g.reshape(&x, &[batch, t, c])?;
            for step in self.steps[s].iter().rev() {
                x = step.synthesis(g, &x, sc)?;
            }
        }
        Ok(g.reshape(&x, &[batch, len])?)
    }

    /// Per-block negative log-likelihood
    /// `0.5·‖z‖² + (n/2)·ln 2π − log|det|`, shape `[B]`.
    pub fn nll<T: Real>(&self, g: &Graph<'_, T>, y: &Var<T>, cond: &FlowCond<T>) -> Result<Var<T>> {
        let (z, logdet) = self.analysis(g, y, cond)?;
        let batch = z.shape()[0];
        let n = z.shape()[1] as f64;
        let sq = g.scale(&g.group_sum(&g.square(&z)?, batch)?, 0.5)?;
        let base = g.add_scalar(&sq, 0.5 * n * (2.0 * std::f64::consts::PI).ln())?;
        Ok(g.sub(&base, &logdet)?)
    }
}

/// `z = T·ε` with `ε ~ N(0, I_k)`.
pub fn sample_latent<R: Rng + ?Sized>(k: usize, temperature: f64, rng: &mut R) -> Result<Vec<f32>> {
    if !(temperature >= 0.0) {
        return Err(config(format!("temperature {temperature} must be non-negative")));
    }
    Ok((0..k)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            (temperature * e) as f32
        })
        .collect())
}

/// `[T, C] -> [T/2, 2C]`, row `t` being rows `2t` and `2t+1` side by side.
/// Also accepts a leading batch axis.
pub fn squeeze<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    if r < 2 || shape[r - 2] % 2 != 0 {
        return Err(invalid(format!("squeeze needs an even time axis, got {shape:?}")));
    }
    shape[r - 2] /= 2;
    shape[r - 1] *= 2;
    Ok(x.clone().reshape(&shape)?)
}

/// Inverse of [`squeeze`].
pub fn unsqueeze<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    if r < 2 || shape[r - 1] % 2 != 0 {
        return Err(invalid(format!("unsqueeze needs an even channel axis, got {shape:?}")));
    }
    shape[r - 2] *= 2;
    shape[r - 1] /= 2;
    Ok(x.clone().reshape(&shape)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn squeeze_pairs_rows() {
        let x = Tensor::<f64>::from_f64(&[4, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let s = squeeze(&x).unwrap();
        assert_eq!(s.shape(), &[2, 4]);
        assert_eq!(s.data(), &[1., 2., 3., 4., 5., 6., 7., 8.]);
        assert_eq!(unsqueeze(&s).unwrap(), x);
        assert_eq!(squeeze(&Tensor::<f64>::zeros(&[96, 10])).unwrap().shape(), &[48, 20]);
        assert!(squeeze(&Tensor::<f64>::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn stage_shapes_conserve_dimension() {
        let c = FlowConfig::default();
        for (t, ch) in c.stage_shapes(c.j()) {
            assert_eq!(t * ch, c.k);
        }
        assert_eq!(c.stage_shapes(c.j())[4], (6, 160));
    }

    #[test]
    fn bad_divisibility_rejected() {
        let c = FlowConfig { k: 100, ..FlowConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_temperature_latent_is_zero() {
        let z = sample_latent(64, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(sample_latent(4, -0.1, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
