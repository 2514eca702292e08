//! Synthetic corpus: each token is a fixed-pitch tone segment, so audio can be
//! decoded back to text by its dominant frequency.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{save_wav, Waveform};
use crate::error::{invalid, Result};
use crate::model::Vocab;

/// Tone tokens followed by the silence token.
pub const TOY_TOKENS: [&str; 9] = ["A", "B", "C", "D", "E", "F", "G", "H", "_"];
pub const SILENCE: char = '_';

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyCorpusSpec {
    pub sample_rate: u32,
    pub segment_ms: f64,
    pub crossfade_ms: f64,
    pub trailing_silence_ms: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            segment_ms: 60.0,
            crossfade_ms: 5.0,
            trailing_silence_ms: 100.0,
            min_tokens: 3,
            max_tokens: 10,
            amplitude: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyUtterance {
    pub text: String,
    pub samples: Vec<f32>,
}

impl ToyCorpusSpec {
    pub fn vocab() -> Vocab {
        Vocab::new(TOY_TOKENS).expect("toy vocabulary is valid")
    }

    pub fn segment_len(&self) -> usize {
        (self.sample_rate as f64 * self.segment_ms / 1000.0).round() as usize
    }

    fn crossfade_len(&self) -> usize {
        (self.sample_rate as f64 * self.crossfade_ms / 1000.0).round() as usize
    }

    /// Tone frequency of token `i`, `200 · 2^(i/4)` Hz; `None` for silence.
    pub fn frequency(token: char) -> Option<f64> {
        let i = TOY_TOKENS.iter().position(|t| t.starts_with(token))?;
        (token != SILENCE).then(|| 200.0 * 2f64.powf(i as f64 / 4.0))
    }

    /// Random token string for utterance `index`.
    pub fn text(&self, index: u64) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let n = rng.random_range(self.min_tokens..=self.max_tokens);
        (0..n).map(|_| TOY_TOKENS[rng.random_range(0..TOY_TOKENS.len())].chars().next().unwrap()).collect()
    }

    /// Renders `text`: tone segments joined by linear crossfades, then
    /// trailing silence.
    pub fn render(&self, text: &str) -> Result<Vec<f32>> {
        let (seg, fade) = (self.segment_len(), self.crossfade_len());
        let sr = self.sample_rate as f64;
        let tokens: Vec<char> = text.chars().collect();
        if tokens.is_empty() {
            return Err(invalid("empty toy transcript"));
        }
        let trailing = (sr * self.trailing_silence_ms / 1000.0).round() as usize;
        let mut out = vec![0.0f64; tokens.len() * seg + trailing];
        for (i, &tok) in tokens.iter().enumerate() {
            let freq = match Self::frequency(tok) {
                Some(f) => f,
                None if tok == SILENCE => continue,
                None => return Err(invalid(format!("{tok:?} is not a toy token"))),
            };
            let start = i * seg;
            let last = i + 1 == tokens.len();
            // Each segment fades in over its first samples and fades out
            // over the first samples of the next segment.
            let len = if last { seg } else { seg + fade };
            for n in 0..len {
                let mut gain = 1.0;
                if i > 0 && n < fade {
                    gain = (n as f64 + 0.5) / fade as f64;
                }
                if !last && n >= seg {
                    gain = 1.0 - (n - seg) as f64 / fade as f64 - 0.5 / fade as f64;
                }
                out[start + n] += gain * self.amplitude * (2.0 * PI * freq * n as f64 / sr).sin();
            }
        }
        Ok(out.into_iter().map(|v| v as f32).collect())
    }

    pub fn utterance(&self, index: u64) -> ToyUtterance {
        let text = self.text(index);
        let samples = self.render(&text).expect("generated text renders");
        ToyUtterance { text, samples }
    }

    pub fn generate(&self, n: usize) -> Vec<ToyUtterance> {
        (0..n as u64).map(|i| self.utterance(i)).collect()
    }

    /// Writes `utt{index:05}.wav`/`.txt` pairs and `vocab.txt` to `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, n: usize) -> Result<()> {
        let dir = dir.as_ref();
        if n == 0 {
            return Err(crate::error::config("corpus size must be at least 1"));
        }
        std::fs::create_dir_all(dir)?;
        Self::vocab().save(dir.join("vocab.txt"))?;
        for (i, utt) in self.generate(n).into_iter().enumerate() {
            let stem = dir.join(format!("utt{i:05}"));
            save_wav(stem.with_extension("wav"), &Waveform::new(utt.samples, self.sample_rate))?;
            std::fs::write(stem.with_extension("txt"), format!("{}\n", utt.text))?;
        }
        Ok(())
    }

    /// Reads a token per segment from the strongest spectral peak, treating
    /// quiet segments as silence. The crossfade at the start of each segment
    /// is ignored.
    pub fn decode(&self, samples: &[f32]) -> String {
        let seg = self.segment_len();
        let skip = self.crossfade_len().min(seg / 2);
        let len = seg - skip;
        let freqs: Vec<(char, f64)> = TOY_TOKENS[..8]
            .iter()
            .map(|t| {
                let c = t.chars().next().unwrap();
                (c, Self::frequency(c).unwrap())
            })
            .collect();
        let n_fft = (4 * seg).next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let sr = self.sample_rate as f64;
        samples
            .chunks_exact(seg)
            .map(|chunk| {
                let chunk = &chunk[skip..];
                let rms = (chunk.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / len as f64).sqrt();
                if rms < 0.1 * self.amplitude {
                    return SILENCE;
                }
                let mut buf: Vec<Complex64> = (0..n_fft)
                    .map(|n| {
                        let w = if n < len { 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos() } else { 0.0 };
                        Complex64::new(chunk.get(n).map_or(0.0, |&v| v as f64) * w, 0.0)
                    })
                    .collect();
                fft.process(&mut buf);
                let peak = (1..n_fft / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap_or(0);
                let f = peak as f64 * sr / n_fft as f64;
                freqs
                    .iter()
                    .min_by(|a, b| (a.1.ln() - f.ln()).abs().total_cmp(&(b.1.ln() - f.ln()).abs()))
                    .map(|&(c, _)| c)
                    .unwrap()
            })
            .collect()
    }
}

/// Fraction of reference tokens reproduced at the same position.
pub fn token_accuracy(reference: &str, decoded: &str) -> f64 {
    let r: Vec<char> = reference.chars().collect();
    if r.is_empty() {
        return 1.0;
    }
    let hits = r.iter().zip(decoded.chars()).filter(|(a, b)| **a == *b).count();
    hits as f64 / r.len() as f64
}
