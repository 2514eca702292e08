use super::spectral::StftGeometry;

const F_MIN: f64 = 50.0;
const F_MAX: f64 = 500.0;
const VOICING: f64 = 0.3;

/// Per-frame f0 in Hz (0 for unvoiced) over 50 ms frames with a 12.5 ms hop,
/// from the normalized autocorrelation peak in 50–500 Hz.
pub fn pitch_track(x: &[f32], sample_rate: u32) -> Vec<f64> {
    let geom = StftGeometry::for_rate(sample_rate);
    let sr = sample_rate as f64;
    let lag_min = (sr / F_MAX).floor().max(1.0) as usize;
    let lag_max = ((sr / F_MIN).ceil() as usize).min(geom.win - 2);
    (0..geom.n_frames(x.len()))
        .map(|f| {
            let frame: Vec<f64> = x[f * geom.hop..f * geom.hop + geom.win].iter().map(|&v| v as f64).collect();
            let r: Vec<f64> = (lag_min - 1..=lag_max + 1).map(|lag| nacf(&frame, lag)).collect();
            let inner = &r[1..r.len() - 1];
            let peak = inner.iter().copied().fold(0.0, f64::max);
            if peak < VOICING {
                return 0.0;
            }
            // The first local maximum close to the global one avoids octave errors.
            let k = (1..r.len() - 1)
                .find(|&k| r[k] >= 0.9 * peak && r[k] >= r[k - 1] && r[k] >= r[k + 1])
                .unwrap_or(1);
            let (a, b, c) = (r[k - 1], r[k], r[k + 1]);
            let denom = a - 2.0 * b + c;
            let shift = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
            sr / ((lag_min - 1 + k) as f64 + shift)
        })
        .collect()
}

fn nacf(frame: &[f64], lag: usize) -> f64 {
    let (a, b) = (&frame[..frame.len() - lag], &frame[lag..]);
    let num: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let den = (a.iter().map(|v| v * v).sum::<f64>() * b.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if den > 1e-12 {
        num / den
    } else {
        0.0
    }
}
