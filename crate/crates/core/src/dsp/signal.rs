use rand::Rng;

use super::{DspError, Result};

/// Zero of the pre-emphasis filter.
pub const PREEMPHASIS: f32 = 0.9;

/// Quantization level in `[0, 65535]` of a signed 16-bit sample.
pub fn level_of(pcm: i16) -> u16 {
    (pcm as i32 + 32768) as u16
}

/// `2·(q + u)/65536 − 1` with fresh `u ~ U[0, 1)` per sample.
pub fn dequantize<R: Rng + ?Sized>(levels: &[u16], rng: &mut R) -> Vec<f32> {
    levels
        .iter()
        .map(|&q| {
            let u: f64 = rng.random();
            (2.0 * (q as f64 + u) / 65536.0 - 1.0) as f32
        })
        .collect()
}

/// `y[n] = x[n] − 0.9·x[n−1]`.
pub fn preemphasize(x: &[f32]) -> Vec<f32> {
    let mut prev = 0.0;
    x.iter()
        .map(|&v| {
            let y = v - PREEMPHASIS * prev;
            prev = v;
            y
        })
        .collect()
}

/// `y[n] = x[n] + 0.9·y[n−1]`, the exact inverse of [`preemphasize`].
pub fn deemphasize(x: &[f32]) -> Vec<f32> {
    let mut prev = 0.0f64;
    x.iter()
        .map(|&v| {
            prev = v as f64 + PREEMPHASIS as f64 * prev;
            prev as f32
        })
        .collect()
}

/// A signal cut into `K`-sample blocks with end-of-sequence labels.
#[derive(Clone, Debug, PartialEq)]
pub struct StopLabeledBlocks {
    /// Row-major `[n_blocks, k]`.
    pub samples: Vec<f32>,
    pub labels: Vec<f32>,
    pub k: usize,
    /// Length of the signal before padding.
    pub signal_len: usize,
}

impl StopLabeledBlocks {
    pub fn n_blocks(&self) -> usize {
        self.labels.len()
    }

    pub fn block(&self, t: usize) -> &[f32] {
        &self.samples[t * self.k..(t + 1) * self.k]
    }

    /// The original signal: label-0 blocks concatenated, padding removed.
    pub fn signal(&self) -> &[f32] {
        &self.samples[..self.signal_len]
    }
}

/// Zero-pads to a multiple of `k` and appends `n_pad` zero blocks labeled 1.
pub fn block_partition(x: &[f32], k: usize, n_pad: usize) -> Result<StopLabeledBlocks> {
    if x.is_empty() {
        return Err(DspError::Invalid("cannot partition an empty waveform".into()));
    }
    if k == 0 || n_pad == 0 {
        return Err(DspError::Invalid(format!("block size {k} and padding {n_pad} must be positive")));
    }
    let body = x.len().div_ceil(k);
    let n = body + n_pad;
    let mut samples = vec![0.0; n * k];
    samples[..x.len()].copy_from_slice(x);
    let labels = (0..n).map(|t| if t < body { 0.0 } else { 1.0 }).collect();
    Ok(StopLabeledBlocks { samples, labels, k, signal_len: x.len() })
}
