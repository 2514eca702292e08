use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

/// How each flow timestep is indexed for its sinusoidal embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    /// Index within the stage's own timesteps.
    Sequence,
    /// Index within a repeating group of `period` first-stage timesteps
    /// (the position of a flow frame inside its feature frame).
    Subframe { period: usize },
}

/// Sinusoid pairs `(sin ω_i j, cos ω_i j)` for `i < dim/2`, with `ω_i` spaced
/// linearly over `[2π/(4·span), π]`.
pub fn embedding(j: usize, span: usize, dim: usize) -> Vec<f64> {
    let pairs = dim / 2;
    let lo = 2.0 * PI / (4.0 * span.max(1) as f64);
    let step = if pairs > 1 { (PI - lo) / (pairs - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(dim);
    for i in 0..pairs {
        let w = lo + step * i as f64;
        out.push((w * j as f64).sin());
        out.push((w * j as f64).cos());
    }
    out
}

/// Embeddings for the `t_len` timesteps of stage `stage` (0-based), `[t_len, dim]`.
pub fn stage_positions(mode: PositionMode, dim: usize, t_len: usize, stage: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(t_len * dim);
    for r in 0..t_len {
        data.extend(match mode {
            PositionMode::Sequence => embedding(r, t_len, dim),
            PositionMode::Subframe { period } => embedding((r << stage) % period, period, dim),
        });
    }
    Tensor::new(&[t_len, dim], data).expect("position table shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_are_distinct() {
        let t = stage_positions(PositionMode::Sequence, 64, 96, 0);
        let rows: Vec<&[f64]> = t.data().chunks(64).collect();
        let mut min = f64::INFINITY;
        for a in 0..96 {
            for b in a + 1..96 {
                let d: f64 = rows[a].iter().zip(rows[b]).map(|(x, y)| (x - y).powi(2)).sum();
                min = min.min(d.sqrt());
            }
        }
        assert!(min > 1e-3, "{min}");
    }

    #[test]
    fn subframe_index_repeats() {
        let t = stage_positions(PositionMode::Subframe { period: 20 }, 8, 40, 0);
        assert_eq!(t.data()[..20 * 8], t.data()[20 * 8..]);
    }
}
