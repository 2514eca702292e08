use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{chunks, loss_input, utterance_loss, Utterance};
use crate::dsp::{mcd, msd, StftGeometry};
use crate::error::{invalid, Result};
use crate::model::TtsModel;
use crate::numerics::{Graph, ParamStore};
use crate::synthesis::{synthesize, SynthesisOptions};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UtteranceScore {
    pub id: String,
    pub mcd: f64,
    pub msd: f64,
    pub n_steps: usize,
    pub stopped_by_token: bool,
}

/// Corpus averages of the free-running and teacher-forced metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mcd: f64,
    pub msd: f64,
    pub flow_nll_per_dim: f64,
    pub eos_loss: f64,
    /// Fraction of utterances ended by the stop head rather than the cap.
    pub stop_rate: f64,
    pub utterances: Vec<UtteranceScore>,
}

/// Synthesizes every utterance and compares it with its recording by
/// DTW-aligned MCD and MSD, then scores teacher-forced losses. Utterance `i`
/// draws from stream `i` of `seed`, so results do not depend on `threads`.
pub fn evaluate(
    model: &TtsModel,
    store: &ParamStore<f32>,
    data: &[Utterance],
    opts: &SynthesisOptions,
    seed: u64,
    threads: usize,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(invalid("empty evaluation set"));
    }
    let cfg = &model.config;
    let sr = cfg.model.sample_rate;
    let win = StftGeometry::for_rate(sr).win;
    let score = |i: usize| -> Result<(UtteranceScore, f64, f64)> {
        let utt = &data[i];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let syn = synthesize(model, store, &utt.tokens, opts, &mut rng)?;
        let mut reference = utt.reference();
        let mut y = syn.waveform.samples;
        reference.resize(reference.len().max(win), 0.0);
        y.resize(y.len().max(win), 0.0);
        let input = loss_input(utt, cfg, 0, &mut rng)?;
        let g = Graph::inference(store);
        let (_, nll, eos) = utterance_loss(model, &g, &input, None, input.valid)?;
        let s = UtteranceScore {
            id: utt.id.clone(),
            mcd: mcd(&reference, &y, sr)?,
            msd: msd(&reference, &y, sr)?,
            n_steps: syn.n_steps,
            stopped_by_token: syn.stopped_by_token,
        };
        Ok((s, nll, eos))
    };
    let parts: Vec<Result<Vec<(UtteranceScore, f64, f64)>>> = std::thread::scope(|s| {
        let handles: Vec<_> =
            chunks(data.len(), threads).into_iter().map(|r| s.spawn(move || r.map(score).collect())).collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut rows = Vec::with_capacity(data.len());
    let (mut nll, mut eos) = (0.0, 0.0);
    for part in parts {
        for (s, a, b) in part? {
            rows.push(s);
            nll += a;
            eos += b;
        }
    }
    let steps: usize = data.iter().map(|u| {
        if cfg.model.unconditional { u.len().div_ceil(cfg.k()) } else { u.n_blocks(cfg.k(), cfg.model.n_pad) }
    }).sum();
    let n = rows.len() as f64;
    Ok(EvalReport {
        mcd: rows.iter().map(|r| r.mcd).sum::<f64>() / n,
        msd: rows.iter().map(|r| r.msd).sum::<f64>() / n,
        flow_nll_per_dim: nll / (steps * cfg.k()) as f64,
        eos_loss: eos / steps as f64,
        stop_rate: rows.iter().filter(|r| r.stopped_by_token).count() as f64 / n,
        utterances: rows,
    })
}
