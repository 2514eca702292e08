use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::spectral::{mel_filterbank, Spectrogram, StftGeometry};
use super::{DspError, Result};

#[derive(Clone, Debug)]
pub struct GriffinLim {
    pub samples: Vec<f32>,
    /// `‖|STFT(x_k)| − M‖` after each iteration `k = 1..`.
    pub errors: Vec<f64>,
}

/// Least-squares inverse STFT.
fn istft(frames: &[Vec<Complex64>], geom: &StftGeometry) -> Vec<f64> {
    let ifft = geom.fft(true);
    let window = geom.window();
    let len = geom.span(frames.len());
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::default(); geom.n_fft];
    let scale = 1.0 / geom.n_fft as f64;
    for (f, spec) in frames.iter().enumerate() {
        buf[..spec.len()].copy_from_slice(spec);
        for k in spec.len()..geom.n_fft {
            buf[k] = spec[geom.n_fft - k].conj();
        }
        ifft.process(&mut buf);
        let base = f * geom.hop;
        for (n, w) in window.iter().enumerate() {
            out[base + n] += w * buf[n].re * scale;
            norm[base + n] += w * w;
        }
    }
    for (o, d) in out.iter_mut().zip(norm) {
        *o = if d > 1e-10 { *o / d } else { 0.0 };
    }
    out
}

fn frobenius_gap(frames: &[Vec<Complex64>], mag: &Spectrogram) -> f64 {
    frames
        .iter()
        .enumerate()
        .flat_map(|(r, f)| f.iter().zip(mag.row(r)).map(|(c, m)| (c.norm() - m).powi(2)))
        .sum::<f64>()
        .sqrt()
}

/// Iterative phase retrieval from a magnitude spectrogram laid out by `geom`.
pub fn griffin_lim(mag: &Spectrogram, geom: &StftGeometry, iterations: usize, seed: u64) -> Result<GriffinLim> {
    if mag.cols != geom.n_bins() {
        return Err(DspError::Invalid(format!("{} bins, geometry expects {}", mag.cols, geom.n_bins())));
    }
    if mag.data.iter().any(|&m| m < 0.0 || !m.is_finite()) {
        return Err(DspError::Invalid("magnitudes must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec: Vec<Vec<Complex64>> = (0..mag.rows)
        .map(|r| mag.row(r).iter().map(|&m| Complex64::from_polar(m, rng.random_range(0.0..std::f64::consts::TAU))).collect())
        .collect();
    let mut errors = Vec::with_capacity(iterations);
    let mut x = istft(&spec, geom);
    for _ in 0..iterations {
        let est = geom.stft(&x);
        errors.push(frobenius_gap(&est, mag));
        for (r, (row, e)) in spec.iter_mut().zip(&est).enumerate() {
            for ((c, z), &m) in row.iter_mut().zip(e).zip(mag.row(r)) {
                let n = z.norm();
                *c = if n > 0.0 { z * (m / n) } else { Complex64::new(m, 0.0) };
            }
        }
        x = istft(&spec, geom);
    }
    Ok(GriffinLim { samples: x.into_iter().map(|v| v as f32).collect(), errors })
}

/// Approximate linear magnitudes from natural-log mel energies: each FFT bin
/// takes the filter-weighted mean of the mel energies covering it.
pub fn mel_to_linear(log_mel: &Spectrogram, geom: &StftGeometry) -> Spectrogram {
    let bank = mel_filterbank(geom, log_mel.cols);
    let bins = geom.n_bins();
    let weight: Vec<f64> = (0..bins).map(|b| bank.iter().map(|f| f[b]).sum()).collect();
    let mut data = Vec::with_capacity(log_mel.rows * bins);
    for r in 0..log_mel.rows {
        let e: Vec<f64> = log_mel.row(r).iter().map(|v| v.exp()).collect();
        for b in 0..bins {
            let s: f64 = bank.iter().zip(&e).map(|(f, v)| f[b] * v).sum();
            data.push(if weight[b] > 0.0 { s / weight[b] } else { 0.0 });
        }
    }
    Spectrogram { rows: log_mel.rows, cols: bins, data }
}
