//! Text encoder and block-autoregressive attention decoder producing the
//! per-block conditioning vectors and stop probabilities.

mod decoder;
mod encoder;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use decoder::{Decoder, DecoderState, Memory, StepOutput};
pub use encoder::Encoder;

use crate::error::{config, invalid, Result};
use crate::numerics::{Graph, ParamStore, Real, Tensor, Var};

/// Clamp applied to stop probabilities before the log in the EOS loss.
pub const STOP_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    /// The convolution bank has widths `1..=bank_widths`.
    pub bank_widths: usize,
    pub bank_channels: usize,
    pub highway_layers: usize,
    /// GRU units per direction; encodings have twice this width.
    pub gru_units: usize,
    pub prenet: Vec<usize>,
    pub prenet_dropout: f64,
    pub attention_rnn: usize,
    pub attention_dim: usize,
    pub location_filters: usize,
    pub location_width: usize,
    pub decoder_rnn: usize,
    pub decoder_layers: usize,
    pub projection: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 256,
            bank_widths: 8,
            bank_channels: 128,
            highway_layers: 2,
            gru_units: 128,
            prenet: vec![256, 128],
            prenet_dropout: 0.5,
            attention_rnn: 256,
            attention_dim: 128,
            location_filters: 32,
            location_width: 31,
            decoder_rnn: 256,
            decoder_layers: 2,
            projection: 512,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.embed_dim,
            self.bank_widths,
            self.bank_channels,
            self.gru_units,
            self.attention_rnn,
            self.attention_dim,
            self.location_filters,
            self.decoder_rnn,
            self.decoder_layers,
            self.projection,
        ];
        if dims.contains(&0) || self.prenet.is_empty() || self.prenet.contains(&0) {
            return Err(config("decoder dimensions must be positive"));
        }
        if self.location_width % 2 == 0 {
            return Err(config("decoder.location_width must be odd"));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(config("decoder.prenet_dropout must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Encoder and decoder parameter handles.
#[derive(Clone, Debug)]
pub struct Seq2Seq {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// Conditioning for every decoder step of one utterance.
pub struct TeacherForced<T> {
    /// `[T_dec, cond_dim]`.
    pub cond: Var<T>,
    /// `[T_dec]`.
    pub stop: Var<T>,
}

impl Seq2Seq {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        vocab: usize,
        cfg: &DecoderConfig,
        tail_len: usize,
        skip: bool,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::new(store, vocab, cfg, rng);
        let decoder = Decoder::new(store, cfg, encoder.out_dim, tail_len, skip, rng);
        Ok(Self { encoder, decoder })
    }

    pub fn cond_dim(&self) -> usize {
        self.decoder.cond_dim
    }

    /// Runs the decoder over ground-truth blocks `[T_dec, K]`, feeding the
    /// last `tail_len` samples of block `t−1` (zeros for `t = 0`) at step `t`.
    pub fn teacher_forced<T: Real>(
        &self,
        g: &Graph<'_, T>,
        tokens: &[usize],
        blocks: &Tensor<T>,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<TeacherForced<T>> {
        let [steps, k] = *blocks.shape() else {
            return Err(invalid(format!("blocks {:?}, expected [T, K]", blocks.shape())));
        };
        if steps == 0 {
            return Err(invalid("no blocks to condition on"));
        }
        let tails = g.constant(feedback_tails(blocks.data(), steps, k, self.decoder.tail_len)?);
        let enc = self.encoder.forward(g, tokens)?;
        let mem = self.decoder.memory(g, &enc)?;
        let pre = self.decoder.prenet(g, &tails, dropout)?;
        let mut state = self.decoder.initial_state(g, &mem);
        let mut hidden = Vec::with_capacity(steps);
        let mut ctx = Vec::with_capacity(steps);
        for t in 0..steps {
            let (out, next) = self.decoder.step(g, &mem, &state, &g.slice_rows(&pre, t, 1)?)?;
            hidden.push(out.hidden);
            ctx.push(out.ctx);
            state = next;
        }
        let hidden = g.concat_rows(&hidden.iter().collect::<Vec<_>>())?;
        let ctx = g.concat_rows(&ctx.iter().collect::<Vec<_>>())?;
        let cond = self.decoder.conditioning(g, &hidden, &ctx, &tails)?;
        let stop = self.decoder.stop_prob(g, &cond)?;
        Ok(TeacherForced { cond, stop })
    }
}

/// Autoregressive inputs `[T, tail_len]`: the final `tail_len` samples of the
/// previous block, zeros for the first step.
pub fn feedback_tails<T: Real>(blocks: &[T], steps: usize, k: usize, tail_len: usize) -> Result<Tensor<T>> {
    if tail_len > k || blocks.len() != steps * k {
        return Err(invalid(format!("cannot take {tail_len}-sample tails of {steps} blocks of {k}")));
    }
    let mut data = vec![T::zero(); steps * tail_len];
    for t in 1..steps {
        data[t * tail_len..(t + 1) * tail_len].copy_from_slice(&blocks[t * k - tail_len..t * k]);
    }
    Ok(Tensor::new(&[steps, tail_len], data)?)
}

/// Mean binary cross entropy between stop probabilities and labels.
pub fn eos_loss<T: Real>(g: &Graph<'_, T>, stop: &Var<T>, labels: &Tensor<T>) -> Result<Var<T>> {
    Ok(g.mean(&g.binary_cross_entropy(stop, labels, STOP_EPS)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tails_shift_by_one_block() {
        let blocks: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let t = feedback_tails(&blocks, 3, 4, 2).unwrap();
        assert_eq!(t.data(), &[0., 0., 2., 3., 6., 7.]);
        let full = feedback_tails(&blocks, 3, 4, 4).unwrap();
        assert_eq!(&full.data()[4..], &blocks[..8]);
    }

    #[test]
    fn eos_loss_closed_forms() {
        let g = Graph::<f64>::new(false);
        let half = g.constant(Tensor::filled(&[4], 0.5));
        let labels = Tensor::from_f64(&[4], &[0., 0., 1., 1.]).unwrap();
        assert!((eos_loss(&g, &half, &labels).unwrap().item() - std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = g.constant(Tensor::from_f64(&[4], &[0., 0., 1., 1.]).unwrap());
        let l = eos_loss(&g, &perfect, &labels).unwrap().item();
        assert!((l - 1e-7).abs() < 1e-9, "{l}");
    }
}
