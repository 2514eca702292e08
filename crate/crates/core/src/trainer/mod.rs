//! Corpora, the combined training objective, the training loop with
//! checkpointing, and evaluation.

mod data;
mod eval;
mod toy;
mod vocoder;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use data::{ingest_directory, loss_input, Ingested, Skipped, Utterance};
pub use eval::{evaluate, EvalReport, UtteranceScore};
pub use toy::{token_accuracy, ToyCorpusSpec, ToyUtterance, SILENCE, TOY_TOKENS};
pub use vocoder::VocoderTrainer;

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::config::Config;
use crate::error::{invalid, Error, Result};
use crate::model::{LossInput, TtsModel, Vocab};
use crate::numerics::{Adam, Graph, ParamStore, Real, Tensor, Var};

/// Losses of one step; the flow term is in nats per sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Losses {
    pub step: u64,
    pub flow_nll_per_dim: f64,
    pub eos_loss: f64,
}

/// `(Σ_t NLL_t + Σ_t BCE_t) / denom` for one utterance, with the two sums.
pub fn utterance_loss<T: Real>(
    model: &TtsModel,
    g: &Graph<'_, T>,
    input: &LossInput<T>,
    dropout: Option<&mut ChaCha8Rng>,
    denom: usize,
) -> Result<(Var<T>, f64, f64)> {
    let l = model.losses(g, input, dropout)?;
    let nll = g.sum(&l.flow_nll)?;
    let (nll_sum, mut total) = (nll.item().f64(), nll);
    let mut eos_sum = 0.0;
    if let Some(eos) = &l.eos {
        let e = g.sum(eos)?;
        eos_sum = e.item().f64();
        total = g.add(&total, &e)?;
    }
    Ok((g.scale(&total, 1.0 / denom as f64)?, nll_sum, eos_sum))
}

/// Sums of the loss terms and the gradient over a batch.
struct BatchResult {
    grads: Option<Vec<Tensor<f32>>>,
    nll: f64,
    eos: f64,
}

/// Splits `n` items into at most `threads` contiguous ranges.
pub(crate) fn chunks(n: usize, threads: usize) -> Vec<std::ops::Range<usize>> {
    let per = n.div_ceil(threads.max(1)).max(1);
    (0..n).step_by(per).map(|s| s..(s + per).min(n)).collect()
}

/// Trains the text-to-speech model (or the flow alone in unconditional mode).
pub struct Trainer {
    pub config: Config,
    pub model: TtsModel,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub max_train_blocks: usize,
    pub threads: usize,
}

impl Trainer {
    pub fn new(config: &Config, vocab: Vocab, threads: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let mut store = ParamStore::new();
        let model = TtsModel::new(&mut store, config, vocab, &mut rng)?;
        let adam = Adam::new(config.train.adam, &store);
        Ok(Self { config: config.clone(), model, store, adam, rng, step: 0, max_train_blocks: 0, threads: threads.max(1) })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, threads: usize) -> Result<Self> {
        let (model, store) = ckpt.tts()?;
        let adam = ckpt.adam.clone().unwrap_or_else(|| Adam::new(ckpt.config.train.adam, &store));
        Ok(Self {
            config: ckpt.config.clone(),
            model,
            store,
            adam,
            rng: ckpt.rng.clone(),
            step: ckpt.step,
            max_train_blocks: ckpt.max_train_blocks,
            threads: threads.max(1),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Tts,
            config: self.config.clone(),
            vocab: self.model.vocab.tokens().to_vec(),
            step: self.step,
            max_train_blocks: self.max_train_blocks,
            rng: self.rng.clone(),
            params: self.store.clone(),
            adam: Some(self.adam.clone()),
        }
    }

    fn check_data(&mut self, data: &[Utterance]) -> Result<()> {
        if data.is_empty() {
            return Err(invalid("empty training set"));
        }
        let sr = self.config.model.sample_rate;
        if let Some(u) = data.iter().find(|u| u.sample_rate != sr) {
            return Err(invalid(format!("utterance {} is {} Hz, model expects {sr} Hz", u.id, u.sample_rate)));
        }
        let (k, n_pad) = (self.config.k(), self.config.model.n_pad);
        self.max_train_blocks = self.max_train_blocks.max(data.iter().map(|u| u.n_blocks(k, n_pad)).max().unwrap_or(0));
        Ok(())
    }

    /// Draws a batch: utterance choice, dequantization noise and dropout
    /// seeds all come from the trainer's generator, in that order.
    fn draw_batch(&mut self, data: &[Utterance]) -> Result<(Vec<LossInput<f32>>, Vec<u64>)> {
        let picks: Vec<usize> = (0..self.config.train.batch_size).map(|_| self.rng.random_range(0..data.len())).collect();
        let (k, n_pad) = (self.config.k(), self.config.model.n_pad);
        let t_max = picks.iter().map(|&i| data[i].n_blocks(k, n_pad)).max().unwrap_or(0);
        let inputs = picks.iter().map(|&i| loss_input(&data[i], &self.config, t_max, &mut self.rng)).collect::<Result<Vec<_>>>()?;
        let seeds = picks.iter().map(|_| self.rng.random()).collect();
        Ok((inputs, seeds))
    }

    fn run_batch(&self, inputs: &[LossInput<f32>], seeds: Option<&[u64]>, backward: bool) -> Result<BatchResult> {
        let denom: usize = inputs.iter().map(|x| x.valid).sum();
        let dropout = self.config.model.decoder.prenet_dropout > 0.0;
        let work = |range: std::ops::Range<usize>| -> Result<BatchResult> {
            let g = Graph::with_params(&self.store, backward);
            let mut total: Option<Var<f32>> = None;
            let (mut nll, mut eos) = (0.0, 0.0);
            for i in range {
                let mut rng = seeds.filter(|_| dropout).map(|s| ChaCha8Rng::seed_from_u64(s[i]));
                let (l, a, b) = utterance_loss(&self.model, &g, &inputs[i], rng.as_mut(), denom)?;
                nll += a;
                eos += b;
                total = Some(match total {
                    None => l,
                    Some(t) => g.add(&t, &l)?,
                });
            }
            let grads = match (backward, total) {
                (true, Some(t)) => Some(g.backward(&t)?.params(&self.store)),
                _ => None,
            };
            Ok(BatchResult { grads, nll, eos })
        };
        let parts: Vec<Result<BatchResult>> = if self.threads == 1 {
            vec![work(0..inputs.len())]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunks(inputs.len(), self.threads).into_iter().map(|r| s.spawn(move || work(r))).collect();
                handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
            })
        };
        let mut out = BatchResult { grads: None, nll: 0.0, eos: 0.0 };
        for part in parts {
            let part = part?;
            out.nll += part.nll;
            out.eos += part.eos;
            out.grads = match (out.grads, part.grads) {
                (None, g) => g,
                (Some(mut acc), Some(g)) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += *y);
                    }
                    Some(acc)
                }
                (acc, None) => acc,
            };
        }
        out.nll /= denom as f64 * self.config.k() as f64;
        out.eos /= denom as f64;
        Ok(out)
    }

    /// One Adam update on a random batch of `data`.
    pub fn train_step(&mut self, data: &[Utterance]) -> Result<Losses> {
        self.check_data(data)?;
        let (inputs, seeds) = self.draw_batch(data)?;
        let r = self.run_batch(&inputs, Some(&seeds), true)?;
        let losses = Losses { step: self.step + 1, flow_nll_per_dim: r.nll, eos_loss: r.eos };
        if !(r.nll <= self.config.train.divergence_nll_per_dim) {
            return Err(Error::Diverged { step: self.step + 1, nll_per_dim: r.nll });
        }
        self.adam.step(&mut self.store, &r.grads.expect("gradients requested"))?;
        self.step += 1;
        Ok(losses)
    }

    /// Teacher-forced losses without dropout or updates; dequantization
    /// noise comes from `seed` so repeated calls agree.
    pub fn eval_losses(&self, data: &[Utterance], seed: u64) -> Result<Losses> {
        if data.is_empty() {
            return Err(invalid("empty evaluation set"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = data.iter().map(|u| loss_input(u, &self.config, 0, &mut rng)).collect::<Result<Vec<_>>>()?;
        let r = self.run_batch(&inputs, None, false)?;
        Ok(Losses { step: self.step, flow_nll_per_dim: r.nll, eos_loss: r.eos })
    }

    /// Loss and gradient of an explicit batch (diagnostics and tests).
    pub fn loss_and_grads(&self, inputs: &[LossInput<f32>], seeds: &[u64]) -> Result<(Losses, Vec<Tensor<f32>>)> {
        let r = self.run_batch(inputs, Some(seeds), true)?;
        let losses = Losses { step: self.step, flow_nll_per_dim: r.nll, eos_loss: r.eos };
        Ok((losses, r.grads.unwrap_or_default()))
    }
}

/// A training run that [`fit`] can drive.
pub trait Session {
    fn config(&self) -> &Config;
    fn step_count(&self) -> u64;
    fn train_step(&mut self, data: &[Utterance]) -> Result<Losses>;
    fn checkpoint(&self) -> Checkpoint;
}

impl Session for Trainer {
    fn config(&self) -> &Config {
        &self.config
    }

    fn step_count(&self) -> u64 {
        self.step
    }

    fn train_step(&mut self, data: &[Utterance]) -> Result<Losses> {
        Trainer::train_step(self, data)
    }

    fn checkpoint(&self) -> Checkpoint {
        Trainer::checkpoint(self)
    }
}

pub const METRICS_HEADER: &str = "step,flow_nll_per_dim,eos_loss,wall_ms";

/// Paths written by [`fit`].
pub fn latest_checkpoint(out_dir: &Path) -> PathBuf {
    out_dir.join("latest.wfck")
}

/// Runs `train_step` until `train.max_steps`, appending to
/// `out_dir/metrics.csv` and checkpointing every `train.checkpoint_interval`
/// steps and at the end. Rows beyond the session's step are dropped first,
/// so a resumed run continues the log.
pub fn fit<S: Session>(session: &mut S, data: &[Utterance], out_dir: &Path, mut on_step: impl FnMut(&Losses)) -> Result<Losses> {
    std::fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join("metrics.csv");
    let mut kept = vec![METRICS_HEADER.to_string()];
    if let Ok(old) = std::fs::read_to_string(&log_path) {
        kept.extend(old.lines().skip(1).filter(|line| {
            line.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= session.step_count())
        }).map(str::to_string));
    }
    std::fs::write(&log_path, kept.join("\n") + "\n")?;
    let mut log = std::fs::OpenOptions::new().append(true).open(&log_path)?;

    let (max_steps, interval) = (session.config().train.max_steps, session.config().train.checkpoint_interval);
    let mut last = Losses { step: session.step_count(), flow_nll_per_dim: f64::NAN, eos_loss: f64::NAN };
    while session.step_count() < max_steps {
        let start = Instant::now();
        last = session.train_step(data)?;
        let ms = start.elapsed().as_secs_f64() * 1000.0;
        writeln!(log, "{},{},{},{:.3}", last.step, last.flow_nll_per_dim, last.eos_loss, ms)?;
        on_step(&last);
        if last.step % interval == 0 {
            let ckpt = session.checkpoint();
            ckpt.save(out_dir.join(format!("ckpt_{:08}.wfck", last.step)))?;
            ckpt.save(latest_checkpoint(out_dir))?;
        }
    }
    log.flush()?;
    session.checkpoint().save(latest_checkpoint(out_dir))?;
    Ok(last)
}
