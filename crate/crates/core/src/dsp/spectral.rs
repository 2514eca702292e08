use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{DspError, Result};

pub const N_MELS: usize = 80;
pub const N_MFCC: usize = 13;
pub const LOG_FLOOR: f64 = 1e-5;

/// Frame layout of the short-time transform: 50 ms periodic Hann window,
/// 12.5 ms hop, FFT size the next power of two, no centering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftGeometry {
    pub sample_rate: u32,
    pub win: usize,
    pub hop: usize,
    pub n_fft: usize,
}

impl StftGeometry {
    pub fn for_rate(sample_rate: u32) -> Self {
        let win = (sample_rate as f64 * 0.05).round() as usize;
        let hop = (sample_rate as f64 * 0.0125).round() as usize;
        Self { sample_rate, win, hop, n_fft: win.next_power_of_two() }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.win {
            0
        } else {
            (n_samples - self.win) / self.hop + 1
        }
    }

    /// Samples spanned by `frames` frames.
    pub fn span(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.win
        }
    }

    pub fn window(&self) -> Vec<f64> {
        (0..self.win).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / self.win as f64).cos()).collect()
    }

    pub(crate) fn fft(&self, inverse: bool) -> Arc<dyn Fft<f64>> {
        let mut planner = FftPlanner::new();
        if inverse {
            planner.plan_fft_inverse(self.n_fft)
        } else {
            planner.plan_fft_forward(self.n_fft)
        }
    }

    /// Complex spectra, `[n_frames][n_bins]`.
    pub fn stft(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let fft = self.fft(false);
        let window = self.window();
        let mut buf = vec![Complex64::default(); self.n_fft];
        (0..self.n_frames(x.len()))
            .map(|f| {
                buf.iter_mut().for_each(|c| *c = Complex64::default());
                for (n, w) in window.iter().enumerate() {
                    buf[n].re = x[f * self.hop + n] * w;
                }
                fft.process(&mut buf);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    pub fn magnitude(&self, x: &[f64]) -> Spectrogram {
        let frames = self.stft(x);
        let data = frames.iter().flat_map(|f| f.iter().map(|c| c.norm())).collect();
        Spectrogram { rows: frames.len(), cols: self.n_bins(), data }
    }
}

/// Row-major `[rows, cols]` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters from 0 Hz to Nyquist, `[n_mels][n_bins]`.
pub fn mel_filterbank(geom: &StftGeometry, n_mels: usize) -> Vec<Vec<f64>> {
    let nyquist = geom.sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let bin_hz = geom.sample_rate as f64 / geom.n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..geom.n_bins())
                .map(|b| {
                    let f = b as f64 * bin_hz;
                    ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid)).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// 80-channel natural-log mel magnitudes, floored at `1e-5`.
pub fn log_mel(x: &[f32], sample_rate: u32) -> Result<Spectrogram> {
    let geom = StftGeometry::for_rate(sample_rate);
    if x.len() < geom.win {
        return Err(DspError::TooShort { len: x.len(), win: geom.win });
    }
    let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let mag = geom.magnitude(&xs);
    let bank = mel_filterbank(&geom, N_MELS);
    let mut data = Vec::with_capacity(mag.rows * N_MELS);
    for r in 0..mag.rows {
        let row = mag.row(r);
        for filt in &bank {
            let e: f64 = filt.iter().zip(row).map(|(w, m)| w * m).sum();
            data.push(e.max(LOG_FLOOR).ln());
        }
    }
    Ok(Spectrogram { rows: mag.rows, cols: N_MELS, data })
}

/// Orthonormal DCT-II over the mel axis, keeping coefficients 1..=13.
pub fn mfcc(mel: &Spectrogram) -> Result<Spectrogram> {
    if mel.cols != N_MELS {
        return Err(DspError::Invalid(format!("mfcc expects {N_MELS} mel channels, got {}", mel.cols)));
    }
    let n = mel.cols as f64;
    let basis: Vec<Vec<f64>> = (1..=N_MFCC)
        .map(|k| (0..mel.cols).map(|i| (2.0 / n).sqrt() * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()).collect())
        .collect();
    let mut data = Vec::with_capacity(mel.rows * N_MFCC);
    for r in 0..mel.rows {
        let row = mel.row(r);
        for b in &basis {
            data.push(b.iter().zip(row).map(|(a, v)| a * v).sum());
        }
    }
    Ok(Spectrogram { rows: mel.rows, cols: N_MFCC, data })
}
