use super::spectral::{log_mel, mfcc, Spectrogram};
use super::{DspError, Result};

/// Minimal-cost monotone alignment of two feature sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub cost: f64,
    pub path: Vec<(usize, usize)>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Dynamic time warping with steps (1,0), (0,1), (1,1) and Euclidean frame
/// distance. Both endpoints are anchored; ties prefer the diagonal, then
/// advancing `a` alone.
pub fn dtw(a: &Spectrogram, b: &Spectrogram) -> Result<Alignment> {
    let (n, m) = (a.rows, b.rows);
    if n == 0 || m == 0 {
        return Err(DspError::Invalid("dtw needs non-empty sequences".into()));
    }
    if a.cols != b.cols {
        return Err(DspError::Invalid(format!("feature dims differ: {} vs {}", a.cols, b.cols)));
    }
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let d = dist(a.row(i), b.row(j));
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = d + best;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
        let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(Alignment { cost: acc[n * m - 1], path })
}

/// Mean over the alignment path of `‖a_i − b_j‖ / sqrt(d)`.
fn aligned_rmse(a: &Spectrogram, b: &Spectrogram) -> Result<f64> {
    let al = dtw(a, b)?;
    let scale = (a.cols as f64).sqrt();
    let total: f64 = al.path.iter().map(|&(i, j)| dist(a.row(i), b.row(j)) / scale).sum();
    Ok(total / al.path.len() as f64)
}

/// Mel cepstral distortion between two waveforms at the same rate.
pub fn mcd(reference: &[f32], synthesized: &[f32], sample_rate: u32) -> Result<f64> {
    aligned_rmse(&mfcc(&log_mel(reference, sample_rate)?)?, &mfcc(&log_mel(synthesized, sample_rate)?)?)
}

/// Mel spectral distortion: as [`mcd`] on the 80-channel log-mel features.
pub fn msd(reference: &[f32], synthesized: &[f32], sample_rate: u32) -> Result<f64> {
    aligned_rmse(&log_mel(reference, sample_rate)?, &log_mel(synthesized, sample_rate)?)
}
