use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::DecoderConfig;
use crate::error::{invalid, Result};
use crate::numerics::{glorot, Graph, Linear, Lstm, LstmState, Padding, ParamId, ParamStore, Real, Tensor, Var};

/// Encoder outputs with their attention keys precomputed.
pub struct Memory<T> {
    pub enc: Var<T>,
    keys: Var<T>,
}

impl<T: Real> Memory<T> {
    pub fn len(&self) -> usize {
        self.enc.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Recurrent state carried between decoder steps.
#[derive(Clone)]
pub struct DecoderState<T> {
    att: LstmState<T>,
    dec: Vec<LstmState<T>>,
    ctx: Var<T>,
    prev_w: Var<T>,
    cum_w: Var<T>,
}

impl<T: Real> DecoderState<T> {
    /// Attention weights of the last step, `[1, I]`.
    pub fn weights(&self) -> &Var<T> {
        &self.prev_w
    }

    pub fn cumulative_weights(&self) -> &Var<T> {
        &self.cum_w
    }
}

/// Outputs of one step before the shared projection.
pub struct StepOutput<T> {
    pub hidden: Var<T>,
    pub ctx: Var<T>,
}

/// Location-sensitive attention decoder with a tanh pre-net, an attention
/// LSTM, a residual LSTM stack and a projection to the conditioning vector.
#[derive(Clone, Debug)]
pub struct Decoder {
    prenet: Vec<Linear>,
    dropout: f64,
    att_rnn: Lstm,
    query: Linear,
    memory: Linear,
    loc_k: ParamId,
    loc_proj: Linear,
    score: Linear,
    stack: Vec<Lstm>,
    proj: Linear,
    stop: Linear,
    pub tail_len: usize,
    pub skip: bool,
    pub cond_dim: usize,
}

impl Decoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &DecoderConfig,
        enc_dim: usize,
        tail_len: usize,
        skip: bool,
        rng: &mut R,
    ) -> Self {
        let mut prenet = Vec::new();
        let mut d = tail_len;
        for (i, &u) in cfg.prenet.iter().enumerate() {
            prenet.push(Linear::new(store, &format!("dec.prenet{i}"), d, u, true, rng));
            d = u;
        }
        let att_rnn = Lstm::new(store, "dec.att_rnn", d + enc_dim, cfg.attention_rnn, rng);
        let a = cfg.attention_dim;
        let query = Linear::new(store, "dec.att.query", cfg.attention_rnn, a, false, rng);
        let memory = Linear::new(store, "dec.att.memory", enc_dim, a, true, rng);
        let (w, f) = (cfg.location_width, cfg.location_filters);
        let loc_k = store.add("dec.att.location.k", glorot(&[w, 2, f], 2 * w, f, rng));
        let loc_proj = Linear::new(store, "dec.att.location.proj", f, a, false, rng);
        let score = Linear::new(store, "dec.att.score", a, 1, false, rng);
        let stack = (0..cfg.decoder_layers)
            .map(|i| {
                let d_in = if i == 0 { cfg.attention_rnn + enc_dim } else { cfg.decoder_rnn };
                Lstm::new(store, &format!("dec.rnn{i}"), d_in, cfg.decoder_rnn, rng)
            })
            .collect();
        let proj = Linear::new(store, "dec.proj", cfg.decoder_rnn + enc_dim, cfg.projection, true, rng);
        let cond_dim = cfg.projection + if skip { tail_len } else { 0 };
        let stop = Linear::zeros(store, "dec.stop", cond_dim, 1);
        Self {
            prenet,
            dropout: cfg.prenet_dropout,
            att_rnn,
            query,
            memory,
            loc_k,
            loc_proj,
            score,
            stack,
            proj,
            stop,
            tail_len,
            skip,
            cond_dim,
        }
    }

    pub fn memory<T: Real>(&self, g: &Graph<'_, T>, enc: &Var<T>) -> Result<Memory<T>> {
        Ok(Memory { keys: self.memory.forward(g, enc)?, enc: enc.clone() })
    }

    pub fn initial_state<T: Real>(&self, g: &Graph<'_, T>, mem: &Memory<T>) -> DecoderState<T> {
        let i = mem.len();
        DecoderState {
            att: self.att_rnn.zero_state(g, 1),
            dec: self.stack.iter().map(|l| l.zero_state(g, 1)).collect(),
            ctx: g.constant(Tensor::zeros(&[1, mem.enc.shape()[1]])),
            prev_w: g.constant(Tensor::zeros(&[1, i])),
            cum_w: g.constant(Tensor::zeros(&[1, i])),
        }
    }

    /// Pre-net over tails `[S, tail_len]`; dropout only when `rng` is given.
    pub fn prenet<T: Real>(&self, g: &Graph<'_, T>, tails: &Var<T>, mut rng: Option<&mut ChaCha8Rng>) -> Result<Var<T>> {
        if tails.value().cols() != self.tail_len {
            return Err(invalid(format!("pre-net input width {} != {}", tails.value().cols(), self.tail_len)));
        }
        let mut h = tails.clone();
        for layer in &self.prenet {
            h = g.tanh(&layer.forward(g, &h)?)?;
            if let Some(rng) = rng.as_deref_mut() {
                let keep = 1.0 - self.dropout;
                let mask = Tensor::from_fn(h.shape(), |_| {
                    if rng.random::<f64>() < keep {
                        T::of(1.0 / keep)
                    } else {
                        T::zero()
                    }
                });
                h = g.mul(&h, &g.constant(mask))?;
            }
        }
        Ok(h)
    }

    /// Location-sensitive attention for query `[1, Q]`; returns the context
    /// `[1, E]` and weights `[1, I]`.
    pub fn attend<T: Real>(
        &self,
        g: &Graph<'_, T>,
        query: &Var<T>,
        mem: &Memory<T>,
        prev_w: &Var<T>,
        cum_w: &Var<T>,
    ) -> Result<(Var<T>, Var<T>)> {
        let i = mem.len();
        let loc_in = g.concat_cols(&[&g.reshape(prev_w, &[i, 1])?, &g.reshape(cum_w, &[i, 1])?])?;
        let loc = g.conv1d(&loc_in, &g.param(self.loc_k), None, Padding::Same, 1)?;
        let energies = g.add(&g.add(&mem.keys, &self.loc_proj.forward(g, &loc)?)?, &self.query.forward(g, query)?)?;
        let scores = self.score.forward(g, &g.tanh(&energies)?)?;
        let weights = g.softmax(&g.reshape(&scores, &[1, i])?)?;
        Ok((g.matmul(&weights, &mem.enc)?, weights))
    }

    /// One recurrent step given the pre-net output `[1, P]` for this step.
    pub fn step<T: Real>(
        &self,
        g: &Graph<'_, T>,
        mem: &Memory<T>,
        state: &DecoderState<T>,
        pre: &Var<T>,
    ) -> Result<(StepOutput<T>, DecoderState<T>)> {
        let att = self.att_rnn.step(g, &g.concat_cols(&[pre, &state.ctx])?, &state.att)?;
        let (ctx, w) = self.attend(g, &att.h, mem, &state.prev_w, &state.cum_w)?;
        let cum_w = g.add(&state.cum_w, &w)?;
        let mut x = g.concat_cols(&[&att.h, &ctx])?;
        let mut dec = Vec::with_capacity(self.stack.len());
        for (k, (layer, st)) in self.stack.iter().zip(&state.dec).enumerate() {
            let s = layer.step(g, &x, st)?;
            x = if k == 0 { s.h.clone() } else { g.add(&x, &s.h)? };
            dec.push(s);
        }
        let out = StepOutput { hidden: x, ctx: ctx.clone() };
        Ok((out, DecoderState { att, dec, ctx, prev_w: w, cum_w }))
    }

    /// Conditioning vectors `[S, cond_dim]` for `S` steps from their stacked
    /// hidden outputs, contexts and tails.
    pub fn conditioning<T: Real>(&self, g: &Graph<'_, T>, hidden: &Var<T>, ctx: &Var<T>, tails: &Var<T>) -> Result<Var<T>> {
        let p = self.proj.forward(g, &g.concat_cols(&[hidden, ctx])?)?;
        if self.skip {
            Ok(g.concat_cols(&[&p, tails])?)
        } else {
            Ok(p)
        }
    }

    /// Stop probabilities `[S]` for conditioning rows `[S, cond_dim]`.
    pub fn stop_prob<T: Real>(&self, g: &Graph<'_, T>, c: &Var<T>) -> Result<Var<T>> {
        let s = g.sigmoid(&self.stop.forward(g, c)?)?;
        Ok(g.reshape(&s, &[c.shape()[0]])?)
    }

    pub fn stop_params(&self) -> (ParamId, ParamId) {
        (self.stop.w, self.stop.b.expect("stop bias"))
    }
}
