//! Non-autoregressive flow vocoder: log-mel frames are encoded by a dilated
//! convolution stack, repeated to the flow frame rate and used as per-frame
//! conditioning for a whole-utterance flow.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, Spectrogram, StftGeometry, N_MELS};
use crate::error::{config, invalid, Result};
use crate::flow::{sample_latent, Flow, FlowCond, FlowConfig, PositionMode};
use crate::numerics::{glorot, Graph, Padding, ParamId, ParamStore, Real, Tensor, Var};

/// Log-mel inputs are mapped to `(x − MEL_CENTER) / MEL_SCALE` so the floor
/// `ln 1e-5` lands near −1.3 and the first tanh layer is not saturated.
pub const MEL_CENTER: f64 = -5.0;
pub const MEL_SCALE: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocoderConfig {
    /// `flow.k` is the training segment length in samples.
    pub flow: FlowConfig,
    pub cond_channels: usize,
    pub dilations: Vec<usize>,
    pub cond_width: usize,
    /// Flow frames per second; `sample_rate / cond_rate` must equal `flow.l`.
    pub cond_rate: u32,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self {
            flow: FlowConfig { k: 4800, l: 15, m: 6, n: 10, ..FlowConfig::default() },
            cond_channels: 512,
            dilations: vec![1, 2, 4, 8, 16],
            cond_width: 3,
            cond_rate: 1600,
        }
    }
}

impl VocoderConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        self.flow.validate()?;
        if self.cond_channels == 0 || self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(config("vocoder conditioning stack needs positive channels and dilations"));
        }
        if self.cond_width % 2 == 0 {
            return Err(config("vocoder.cond_width must be odd"));
        }
        if self.cond_rate == 0 || sample_rate % self.cond_rate != 0 || (sample_rate / self.cond_rate) as usize != self.flow.l {
            return Err(config(format!(
                "sample rate {sample_rate} / cond_rate {} must equal vocoder flow.l = {}",
                self.cond_rate, self.flow.l
            )));
        }
        let hop = StftGeometry::for_rate(sample_rate).hop;
        if hop % self.flow.l != 0 {
            return Err(config(format!("mel hop {hop} is not a multiple of vocoder flow.l = {}", self.flow.l)));
        }
        if self.flow.k % hop != 0 {
            return Err(config(format!("vocoder segment {} is not a multiple of the mel hop {hop}", self.flow.k)));
        }
        Ok(())
    }
}

/// Log-mel frames aligned with the signal: frame `f` is centered on samples
/// `[f·hop, (f+1)·hop)`, giving `⌈n / hop⌉` frames.
pub fn conditioning_mel(x: &[f32], sample_rate: u32) -> Result<Spectrogram> {
    let geom = StftGeometry::for_rate(sample_rate);
    if x.is_empty() {
        return Err(invalid("cannot compute features of an empty signal"));
    }
    let frames = x.len().div_ceil(geom.hop);
    let left = (geom.win - geom.hop) / 2;
    let mut padded = vec![0.0f32; geom.span(frames)];
    padded[left..left + x.len()].copy_from_slice(x);
    let mel = dsp::log_mel(&padded, sample_rate)?;
    debug_assert_eq!(mel.rows, frames);
    Ok(mel)
}

#[derive(Clone, Debug)]
pub struct Vocoder {
    pub config: VocoderConfig,
    pub sample_rate: u32,
    /// Flow frames per mel frame.
    pub upsample: usize,
    convs: Vec<(ParamId, ParamId, usize)>,
    pub flow: Flow,
}

impl Vocoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &VocoderConfig,
        sample_rate: u32,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate(sample_rate)?;
        let upsample = StftGeometry::for_rate(sample_rate).hop / cfg.flow.l;
        let (w, c) = (cfg.cond_width, cfg.cond_channels);
        let mut d_in = N_MELS;
        let mut convs = Vec::with_capacity(cfg.dilations.len());
        for (i, &dil) in cfg.dilations.iter().enumerate() {
            let k = store.add(format!("voc.cond.{i}.k"), glorot(&[w, d_in, c], w * d_in, c, rng));
            let b = store.add(format!("voc.cond.{i}.b"), Tensor::zeros(&[c]));
            convs.push((k, b, dil));
            d_in = c;
        }
        let flow = Flow::new(store, "voc.flow", &cfg.flow, c, PositionMode::Subframe { period: upsample }, rng)?;
        Ok(Self { config: cfg.clone(), sample_rate, upsample, convs, flow })
    }

    /// Samples an input must be a multiple of.
    pub fn length_multiple(&self) -> usize {
        self.flow.config.l * self.flow.config.frame_multiple()
    }

    /// Zero-pads a waveform to a multiple of [`Self::length_multiple`].
    pub fn pad(&self, x: &[f32]) -> Vec<f32> {
        let mut out = x.to_vec();
        out.resize(x.len().div_ceil(self.length_multiple()).max(1) * self.length_multiple(), 0.0);
        out
    }

    /// Flow frames for a signal of `n` samples.
    pub fn frames_for(&self, n: usize) -> usize {
        n.div_ceil(self.length_multiple()) * self.flow.config.frame_multiple()
    }

    /// Conditioning stack over mel `[B, F, 80]`, upsampled to `[B, frames, C]`.
    pub fn encode_mel<T: Real>(&self, g: &Graph<'_, T>, mel: &Var<T>, frames: usize) -> Result<Var<T>> {
        let [batch, f, N_MELS] = *mel.shape() else {
            return Err(invalid(format!("mel {:?}, expected [B, F, {N_MELS}]", mel.shape())));
        };
        if f == 0 {
            return Err(invalid("empty mel spectrogram"));
        }
        let mut h = g.scale(&g.add_scalar(mel, -MEL_CENTER)?, 1.0 / MEL_SCALE)?;
        for &(k, b, dil) in &self.convs {
            h = g.tanh(&g.conv1d(&h, &g.param(k), Some(&g.param(b)), Padding::Same, dil)?)?;
        }
        let c = self.config.cond_channels;
        let flat = g.reshape(&h, &[batch * f, c])?;
        let idx: Vec<usize> =
            (0..batch).flat_map(|b| (0..frames).map(move |r| b * f + (r / self.upsample).min(f - 1))).collect();
        Ok(g.reshape(&g.gather_rows(&flat, &idx)?, &[batch, frames, c])?)
    }

    /// Per-utterance NLL `[B]` of waveforms `y: [B, n]` given mel `[B, F, 80]`.
    pub fn nll<T: Real>(&self, g: &Graph<'_, T>, y: &Var<T>, mel: &Var<T>) -> Result<Var<T>> {
        let frames = self.frames_of(y)?;
        let cond = self.encode_mel(g, mel, frames)?;
        self.flow.nll(g, y, &FlowCond::Frames(cond))
    }

    /// `(z, log-det)` for waveforms `y: [B, n]`.
    pub fn analysis<T: Real>(&self, g: &Graph<'_, T>, y: &Var<T>, mel: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let frames = self.frames_of(y)?;
        let cond = self.encode_mel(g, mel, frames)?;
        self.flow.analysis(g, y, &FlowCond::Frames(cond))
    }

    /// Inverse pass from latents `z: [B, n]`.
    pub fn synthesis<T: Real>(&self, g: &Graph<'_, T>, z: &Var<T>, mel: &Var<T>) -> Result<Var<T>> {
        let frames = self.frames_of(z)?;
        let cond = self.encode_mel(g, mel, frames)?;
        self.flow.synthesis(g, z, &FlowCond::Frames(cond))
    }

    fn frames_of<T: Real>(&self, y: &Var<T>) -> Result<usize> {
        match *y.shape() {
            [_, n] if n % self.length_multiple() == 0 && n > 0 => Ok(n / self.flow.config.l),
            _ => Err(invalid(format!(
                "waveform {:?} is not [B, n] with n a multiple of {}",
                y.shape(),
                self.length_multiple()
            ))),
        }
    }

    /// Generates a pre-emphasized-domain signal for `mel` in one inverse
    /// pass; the caller de-emphasizes. `n_samples` defaults to `F·hop`.
    pub fn sample<T: Real, R: Rng + ?Sized>(
        &self,
        store: &ParamStore<T>,
        mel: &Spectrogram,
        n_samples: Option<usize>,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Vec<f32>> {
        if mel.cols != N_MELS || mel.rows == 0 {
            return Err(invalid(format!("mel [{}, {}], expected [F, {N_MELS}]", mel.rows, mel.cols)));
        }
        let hop = self.upsample * self.flow.config.l;
        let n = n_samples.unwrap_or(mel.rows * hop);
        let padded = self.frames_for(n) * self.flow.config.l;
        let z = sample_latent(padded, temperature, rng)?;
        let g = Graph::inference(store);
        let m = g.constant(Tensor::new(&[1, mel.rows, N_MELS], mel.data.iter().map(|&v| T::of(v)).collect())?);
        let z = g.constant(Tensor::new(&[1, padded], z.into_iter().map(|v| T::of(v as f64)).collect())?);
        let y = self.synthesis(&g, &z, &m)?;
        Ok(y.data()[..n].iter().map(|v| v.f64() as f32).collect())
    }
}
