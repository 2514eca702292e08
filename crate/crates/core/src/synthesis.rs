//! Free-running generation, spectrogram vocoding and the timing harness.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::config::Config;
use crate::dsp::{deemphasize, griffin_lim, mel_to_linear, Spectrogram, StftGeometry, Waveform};
use crate::error::{invalid, Result};
use crate::flow::{sample_latent, FlowCond};
use crate::model::TtsModel;
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::vocoder::Vocoder;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthesisOptions {
    pub temperature: f64,
    /// Generation stops after the first step whose stop probability exceeds
    /// this; values ≥ 1 never stop early.
    pub stop_threshold: f64,
    pub max_steps: usize,
}

impl SynthesisOptions {
    /// Options from the `synth` section; the default step cap is four times
    /// the longest training utterance.
    pub fn from_config(cfg: &Config, max_train_blocks: usize) -> Self {
        Self {
            temperature: cfg.synth_temperature(),
            stop_threshold: cfg.synth.stop_threshold,
            max_steps: cfg.synth.max_steps.unwrap_or(4 * max_train_blocks.max(1)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub waveform: Waveform,
    pub n_steps: usize,
    pub stopped_by_token: bool,
    pub stop_probs: Vec<f64>,
}

/// Generates audio block by block: decoder step, latent draw at the chosen
/// temperature, inverse flow, tail feedback. Blocks are concatenated and
/// de-emphasized when the model was trained on pre-emphasized audio.
pub fn synthesize<R: Rng + ?Sized>(
    model: &TtsModel,
    store: &ParamStore<f32>,
    tokens: &[usize],
    opts: &SynthesisOptions,
    rng: &mut R,
) -> Result<Synthesis> {
    if opts.max_steps == 0 {
        return Err(invalid("step cap must be at least 1"));
    }
    let (k, tail_len) = (model.k(), model.tail_len());
    let g = Graph::inference(store);
    let mut samples: Vec<f32> = Vec::with_capacity(opts.max_steps * k);
    let mut stop_probs = Vec::new();
    let mut stopped = false;
    let block = |cond: &FlowCond<f32>, rng: &mut R| -> Result<Var<f32>> {
        let z = sample_latent(k, opts.temperature, rng)?;
        model.flow.synthesis(&g, &g.constant(Tensor::new(&[1, k], z)?), cond)
    };
    match &model.seq {
        None => {
            for _ in 0..opts.max_steps {
                samples.extend_from_slice(block(&FlowCond::None, rng)?.data());
            }
        }
        Some(seq) => {
            let dec = &seq.decoder;
            let enc = seq.encoder.forward(&g, tokens)?;
            let mem = dec.memory(&g, &enc)?;
            let mut state = dec.initial_state(&g, &mem);
            let mut tail = g.constant(Tensor::zeros(&[1, tail_len]));
            for _ in 0..opts.max_steps {
                let pre = dec.prenet(&g, &tail, None)?;
                let (out, next) = dec.step(&g, &mem, &state, &pre)?;
                state = next;
                let cond = dec.conditioning(&g, &out.hidden, &out.ctx, &tail)?;
                let stop = dec.stop_prob(&g, &cond)?.item() as f64;
                let y = block(&FlowCond::Global(cond), rng)?;
                samples.extend_from_slice(y.data());
                tail = g.constant(Tensor::new(&[1, tail_len], y.data()[k - tail_len..].to_vec())?);
                stop_probs.push(stop);
                if stop > opts.stop_threshold {
                    stopped = true;
                    break;
                }
            }
        }
    }
    let n_steps = samples.len() / k;
    if model.config.ablations.preemphasis {
        samples = deemphasize(&samples);
    }
    Ok(Synthesis {
        waveform: Waveform::new(samples, model.config.model.sample_rate),
        n_steps,
        stopped_by_token: stopped,
        stop_probs,
    })
}

/// Largest absolute first difference across block boundaries divided by the
/// 99th percentile of first differences inside blocks.
pub fn seam_ratio(x: &[f32], k: usize) -> f64 {
    let mut inside = Vec::new();
    let mut seam = 0.0f64;
    for n in 1..x.len() {
        let d = (x[n] as f64 - x[n - 1] as f64).abs();
        if n % k == 0 {
            seam = seam.max(d);
        } else {
            inside.push(d);
        }
    }
    if inside.is_empty() {
        return 0.0;
    }
    inside.sort_by(f64::total_cmp);
    let p99 = inside[((inside.len() - 1) as f64 * 0.99).round() as usize];
    seam / p99.max(1e-12)
}

/// Mel-to-waveform back ends behind one interface.
pub enum VocoderBackend<'a> {
    GriffinLim { iterations: usize },
    Flowcoder { vocoder: &'a Vocoder, store: &'a ParamStore<f32>, temperature: f64, preemphasis: bool },
}

/// Inverts a log-mel spectrogram computed with
/// [`crate::vocoder::conditioning_mel`]. The output has `n_samples`
/// samples, or `F · hop` by default.
pub fn vocode<R: Rng + ?Sized>(
    mel: &Spectrogram,
    n_samples: Option<usize>,
    sample_rate: u32,
    backend: &VocoderBackend<'_>,
    rng: &mut R,
) -> Result<Waveform> {
    let geom = StftGeometry::for_rate(sample_rate);
    let n = n_samples.unwrap_or(mel.rows * geom.hop);
    let samples = match backend {
        VocoderBackend::GriffinLim { iterations } => {
            let mag = mel_to_linear(mel, &geom);
            let gl = griffin_lim(&mag, &geom, *iterations, rng.random())?;
            let left = (geom.win - geom.hop) / 2;
            let mut x: Vec<f32> = gl.samples.into_iter().skip(left).collect();
            x.resize(n, 0.0);
            x
        }
        VocoderBackend::Flowcoder { vocoder, store, temperature, preemphasis } => {
            if vocoder.sample_rate != sample_rate {
                return Err(invalid(format!("vocoder runs at {} Hz, features are {sample_rate} Hz", vocoder.sample_rate)));
            }
            let y = vocoder.sample(store, mel, Some(n), *temperature, rng)?;
            if *preemphasis {
                deemphasize(&y)
            } else {
                y
            }
        }
    };
    Ok(Waveform::new(samples, sample_rate))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub variant: String,
    /// Reduction factor for block-autoregressive variants.
    pub r: Option<usize>,
    pub mean_s: f64,
    pub std_s: f64,
    pub trials: usize,
}

/// Times `run` over `trials` calls after one untimed warm-up call.
pub fn bench_variant(variant: &str, r: Option<usize>, trials: usize, mut run: impl FnMut() -> Result<()>) -> Result<BenchRow> {
    if trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    run()?;
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        run()?;
        times.push(start.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / trials as f64;
    let std = if trials > 1 {
        (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(BenchRow { variant: variant.to_string(), r, mean_s: mean, std_s: std, trials })
}

/// Synthesis options producing exactly `duration_s` seconds (rounded up to
/// whole blocks) regardless of the stop head.
pub fn fixed_duration(model: &TtsModel, duration_s: f64, temperature: f64) -> SynthesisOptions {
    let samples = (duration_s * model.config.model.sample_rate as f64).ceil() as usize;
    SynthesisOptions { temperature, stop_threshold: f64::INFINITY, max_steps: samples.div_ceil(model.k()).max(1) }
}

pub const BENCH_HEADER: &str = "variant,R,mean_s,std_s,trials";

pub fn write_bench_csv(rows: &[BenchRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{BENCH_HEADER}")?;
    for r in rows {
        let rf = r.r.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{:.6},{:.6},{}", r.variant, rf, r.mean_s, r.std_s, r.trials)?;
    }
    Ok(())
}
