//! The text-to-speech model: a seq2seq decoder producing one conditioning
//! vector per block and a flow mapping each block to noise.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{config, invalid, Result};
use crate::flow::{Flow, FlowCond, PositionMode};
use crate::numerics::{Graph, ParamStore, Real, Tensor, Var};
use crate::seq2seq::{Seq2Seq, STOP_EPS};

/// Token inventory; a token's id is its line number in the vocabulary file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.chars().count() != 1 {
                return Err(config(format!("vocabulary entry {i} ({t:?}) must be a single character")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        if tokens.is_empty() {
            return Err(config("empty vocabulary"));
        }
        Ok(Self { tokens, index })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| config(format!("vocabulary {}: {e}", path.display())))?;
        Self::new(text.lines().filter(|l| !l.is_empty()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One id per character of `text`.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let ids = text
            .chars()
            .map(|c| {
                self.index
                    .get(c.encode_utf8(&mut [0; 4]) as &str)
                    .copied()
                    .ok_or_else(|| invalid(format!("character {c:?} is not in the vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(invalid("empty transcript"));
        }
        Ok(ids)
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&i| self.tokens.get(i)).map(String::as_str).collect()
    }
}

/// One utterance prepared for the loss: `blocks` may carry trailing
/// padding rows beyond `valid`, which never enter the loss.
#[derive(Clone, Debug)]
pub struct LossInput<T> {
    pub tokens: Vec<usize>,
    /// `[T_max, K]`.
    pub blocks: Tensor<T>,
    /// `[T_max]` end-of-sequence labels.
    pub labels: Tensor<T>,
    pub valid: usize,
}

/// Per-step losses of one utterance.
pub struct StepLosses<T> {
    /// Flow negative log-likelihood per block, `[valid]`.
    pub flow_nll: Var<T>,
    /// Stop-token cross entropy per block, `[valid]`; absent in
    /// unconditional mode.
    pub eos: Option<Var<T>>,
}

#[derive(Clone, Debug)]
pub struct TtsModel {
    pub config: Config,
    pub vocab: Vocab,
    pub seq: Option<Seq2Seq>,
    pub flow: Flow,
}

impl TtsModel {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &Config, vocab: Vocab, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (seq, cond_dim) = if cfg.model.unconditional {
            (None, 0)
        } else {
            let seq = Seq2Seq::new(store, vocab.len(), &cfg.model.decoder, cfg.tail_len(), cfg.ablations.skip_connection, rng)?;
            let d = seq.cond_dim();
            (Some(seq), d)
        };
        let flow = Flow::new(store, "flow", &cfg.flow(), cond_dim, PositionMode::Sequence, rng)?;
        Ok(Self { config: cfg.clone(), vocab, seq, flow })
    }

    pub fn k(&self) -> usize {
        self.flow.config.k
    }

    pub fn tail_len(&self) -> usize {
        self.config.tail_len()
    }

    /// Teacher-forced losses over the `valid` leading blocks of `input`.
    pub fn losses<T: Real>(
        &self,
        g: &Graph<'_, T>,
        input: &LossInput<T>,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<StepLosses<T>> {
        let k = self.k();
        let rows = input.blocks.shape().first().copied().unwrap_or(0);
        if input.blocks.shape() != [rows, k] || input.labels.shape() != [rows] {
            return Err(invalid(format!(
                "blocks {:?} and labels {:?} do not match K = {k}",
                input.blocks.shape(),
                input.labels.shape()
            )));
        }
        if input.valid == 0 || input.valid > rows {
            return Err(invalid(format!("{} valid blocks out of {rows}", input.valid)));
        }
        let blocks = Tensor::new(&[input.valid, k], input.blocks.data()[..input.valid * k].to_vec())?;
        let y = g.constant(blocks.clone());
        match &self.seq {
            None => Ok(StepLosses { flow_nll: self.flow.nll(g, &y, &FlowCond::None)?, eos: None }),
            Some(seq) => {
                let tf = seq.teacher_forced(g, &input.tokens, &blocks, dropout)?;
                let flow_nll = self.flow.nll(g, &y, &FlowCond::Global(tf.cond))?;
                let labels = Tensor::new(&[input.valid], input.labels.data()[..input.valid].to_vec())?;
                let eos = g.binary_cross_entropy(&tf.stop, &labels, STOP_EPS)?;
                Ok(StepLosses { flow_nll, eos: Some(eos) })
            }
        }
    }
}
