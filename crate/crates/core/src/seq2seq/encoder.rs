use rand::Rng;

use super::DecoderConfig;
use crate::error::{invalid, Result};
use crate::numerics::{glorot, normal, Graph, Gru, Linear, Padding, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Clone, Debug)]
struct ConvLayer {
    k: ParamId,
    b: ParamId,
    padding: Padding,
}

impl ConvLayer {
    fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, w: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let k = store.add(format!("{name}.k"), glorot(&[w, c_in, c_out], w * c_in, c_out, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[c_out]));
        // even widths look one step further ahead than behind
        let padding = Padding::Explicit { left: (w - 1) / 2, right: w / 2 };
        Self { k, b, padding }
    }

    fn forward<T: Real>(&self, g: &Graph<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(g.conv1d(x, &g.param(self.k), Some(&g.param(self.b)), self.padding, 1)?)
    }
}

#[derive(Clone, Debug)]
struct Highway {
    h: Linear,
    t: Linear,
}

/// Token encoder: embedding, convolution bank with an elementwise max over
/// its outputs, two projection convolutions with a residual connection,
/// highway layers and a bidirectional GRU.
#[derive(Clone, Debug)]
pub struct Encoder {
    embedding: ParamId,
    vocab: usize,
    bank: Vec<ConvLayer>,
    proj: [ConvLayer; 2],
    highways: Vec<Highway>,
    fwd: Gru,
    bwd: Gru,
    pub out_dim: usize,
}

impl Encoder {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, vocab: usize, cfg: &DecoderConfig, rng: &mut R) -> Self {
        let e = cfg.embed_dim;
        let embedding = store.add("enc.embedding", normal(&[vocab, e], 0.3, rng));
        let bank = (1..=cfg.bank_widths)
            .map(|w| ConvLayer::new(store, &format!("enc.bank{w}"), w, e, cfg.bank_channels, rng))
            .collect();
        let proj = [
            ConvLayer::new(store, "enc.proj1", 3, cfg.bank_channels, e, rng),
            ConvLayer::new(store, "enc.proj2", 3, e, e, rng),
        ];
        let highways = (0..cfg.highway_layers)
            .map(|i| {
                let h = Linear::new(store, &format!("enc.hw{i}.h"), e, e, true, rng);
                let t = Linear::new(store, &format!("enc.hw{i}.t"), e, e, true, rng);
                let tb = store.value_mut(t.b.expect("bias"));
                tb.data_mut().iter_mut().for_each(|v| *v = T::of(-1.0));
                Highway { h, t }
            })
            .collect();
        let fwd = Gru::new(store, "enc.gru_f", e, cfg.gru_units, rng);
        let bwd = Gru::new(store, "enc.gru_b", e, cfg.gru_units, rng);
        Self { embedding, vocab, bank, proj, highways, fwd, bwd, out_dim: 2 * cfg.gru_units }
    }

    /// `[I]` token ids to `[I, out_dim]` encodings.
    pub fn forward<T: Real>(&self, g: &Graph<'_, T>, tokens: &[usize]) -> Result<Var<T>> {
        if tokens.is_empty() {
            return Err(invalid("empty token sequence"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab) {
            return Err(invalid(format!("token id {bad} outside vocabulary of {}", self.vocab)));
        }
        let x = g.gather_rows(&g.param(self.embedding), tokens)?;
        let outs = self.bank.iter().map(|c| Ok(g.relu(&c.forward(g, &x)?)?)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Var<T>> = outs.iter().collect();
        let h = g.max_elementwise(&refs)?;
        let h = g.relu(&self.proj[0].forward(g, &h)?)?;
        let mut h = g.add(&self.proj[1].forward(g, &h)?, &x)?;
        for hw in &self.highways {
            let cand = g.relu(&hw.h.forward(g, &h)?)?;
            let gate = g.sigmoid(&hw.t.forward(g, &h)?)?;
            h = g.add(&h, &g.mul(&gate, &g.sub(&cand, &h)?)?)?;
        }
        let n = tokens.len();
        let xf = self.fwd.project_input(g, &h)?;
        let xb = self.bwd.project_input(g, &h)?;
        let mut sf = self.fwd.zero_state(g, 1);
        let mut sb = self.bwd.zero_state(g, 1);
        let mut fwd = Vec::with_capacity(n);
        let mut bwd = vec![None; n];
        for i in 0..n {
            sf = self.fwd.step_projected(g, &g.slice_rows(&xf, i, 1)?, &sf)?;
            fwd.push(sf.clone());
            let j = n - 1 - i;
            sb = self.bwd.step_projected(g, &g.slice_rows(&xb, j, 1)?, &sb)?;
            bwd[j] = Some(sb.clone());
        }
        let rows = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| g.concat_cols(&[f, b.as_ref().expect("filled")]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let refs: Vec<&Var<T>> = rows.iter().collect();
        Ok(g.concat_rows(&refs)?)
    }
}
