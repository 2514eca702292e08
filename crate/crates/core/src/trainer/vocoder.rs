use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{chunks, Losses, Session, Utterance};
use crate::checkpoint::{Checkpoint, ModelKind};
use crate::config::Config;
use crate::dsp::{preemphasize, StftGeometry, N_MELS};
use crate::error::{invalid, Error, Result};
use crate::numerics::{Adam, Graph, ParamStore, Tensor};
use crate::vocoder::{conditioning_mel, Vocoder};

/// Trains the vocoder on random hop-aligned crops of `vocoder.flow.k`
/// samples, each with the log-mel of its own raw samples as conditioning.
pub struct VocoderTrainer {
    pub config: Config,
    pub vocoder: Vocoder,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub threads: usize,
}

impl VocoderTrainer {
    pub fn new(config: &Config, threads: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let mut store = ParamStore::new();
        let vocoder = Vocoder::new(&mut store, &config.model.vocoder, config.model.sample_rate, &mut rng)?;
        let adam = Adam::new(config.train.adam, &store);
        Ok(Self { config: config.clone(), vocoder, store, adam, rng, step: 0, threads: threads.max(1) })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, threads: usize) -> Result<Self> {
        let (vocoder, store) = ckpt.vocoder()?;
        let adam = ckpt.adam.clone().unwrap_or_else(|| Adam::new(ckpt.config.train.adam, &store));
        Ok(Self {
            config: ckpt.config.clone(),
            vocoder,
            store,
            adam,
            rng: ckpt.rng.clone(),
            step: ckpt.step,
            threads: threads.max(1),
        })
    }

    /// A crop `(target, mel rows)` from a random position of `utt`.
    fn crop(&mut self, utt: &Utterance) -> Result<(Vec<f32>, Vec<f32>)> {
        let k = self.vocoder.config.flow.k;
        let hop = StftGeometry::for_rate(self.config.model.sample_rate).hop;
        let mut raw = utt.signal(false, &mut self.rng);
        raw.resize(raw.len().max(k), 0.0);
        let start = self.rng.random_range(0..=(raw.len() - k) / hop) * hop;
        let target = if self.config.ablations.preemphasis { preemphasize(&raw) } else { raw.clone() };
        let mel = conditioning_mel(&raw[start..start + k], self.config.model.sample_rate)?;
        Ok((target[start..start + k].to_vec(), mel.data.iter().map(|&v| v as f32).collect()))
    }
}

impl Session for VocoderTrainer {
    fn config(&self) -> &Config {
        &self.config
    }

    fn step_count(&self) -> u64 {
        self.step
    }

    fn train_step(&mut self, data: &[Utterance]) -> Result<Losses> {
        if data.is_empty() {
            return Err(invalid("empty training set"));
        }
        let batch = self.config.train.batch_size;
        let k = self.vocoder.config.flow.k;
        let mut crops = Vec::with_capacity(batch);
        for _ in 0..batch {
            let i = self.rng.random_range(0..data.len());
            crops.push(self.crop(&data[i])?);
        }
        let frames = crops[0].1.len() / N_MELS;
        let work = |range: std::ops::Range<usize>| -> Result<(f64, Vec<Tensor<f32>>)> {
            let n = range.len();
            let y: Vec<f32> = crops[range.clone()].iter().flat_map(|c| c.0.iter().copied()).collect();
            let m: Vec<f32> = crops[range].iter().flat_map(|c| c.1.iter().copied()).collect();
            let g = Graph::with_params(&self.store, true);
            let nll = self.vocoder.nll(&g, &g.constant(Tensor::new(&[n, k], y)?), &g.constant(Tensor::new(&[n, frames, N_MELS], m)?))?;
            let loss = g.scale(&g.sum(&nll)?, 1.0 / batch as f64)?;
            Ok((loss.item() as f64, g.backward(&loss)?.params(&self.store)))
        };
        let parts: Vec<Result<(f64, Vec<Tensor<f32>>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunks(batch, self.threads).into_iter().map(|r| s.spawn(move || work(r))).collect();
            handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
        });
        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor<f32>>> = None;
        for part in parts {
            let (l, g) = part?;
            loss += l;
            grads = Some(match grads {
                None => g,
                Some(mut acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += *y);
                    }
                    acc
                }
            });
        }
        let per_dim = loss / k as f64;
        if !(per_dim <= self.config.train.divergence_nll_per_dim) {
            return Err(Error::Diverged { step: self.step + 1, nll_per_dim: per_dim });
        }
        self.adam.step(&mut self.store, &grads.expect("non-empty batch"))?;
        self.step += 1;
        Ok(Losses { step: self.step, flow_nll_per_dim: per_dim, eos_loss: 0.0 })
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Vocoder,
            config: self.config.clone(),
            vocab: Vec::new(),
            step: self.step,
            max_train_blocks: 0,
            rng: self.rng.clone(),
            params: self.store.clone(),
            adam: Some(self.adam.clone()),
        }
    }
}
