use std::path::{Path, PathBuf};

use rand::Rng;

use crate::config::Config;
use crate::dsp::{block_partition, dequantize, level_of, load_wav, preemphasize, StopLabeledBlocks, Waveform};
use crate::error::{invalid, Result};
use crate::model::{LossInput, Vocab};
use crate::numerics::Tensor;

/// A transcribed recording kept as 16-bit quantization levels; continuous
/// signals are drawn from it with fresh dequantization noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub tokens: Vec<usize>,
    pub levels: Vec<u16>,
    pub sample_rate: u32,
}

impl Utterance {
    pub fn from_pcm(id: impl Into<String>, text: &str, vocab: &Vocab, pcm: &[i16], sample_rate: u32) -> Result<Self> {
        if pcm.is_empty() {
            return Err(invalid("empty recording"));
        }
        Ok(Self {
            id: id.into(),
            text: text.to_string(),
            tokens: vocab.encode(text)?,
            levels: pcm.iter().map(|&s| level_of(s)).collect(),
            sample_rate,
        })
    }

    pub fn from_samples(id: impl Into<String>, text: &str, vocab: &Vocab, samples: &[f32], sample_rate: u32) -> Result<Self> {
        Self::from_pcm(id, text, vocab, &Waveform::new(samples.to_vec(), sample_rate).to_pcm(), sample_rate)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Bin centres of the quantized signal, without noise or emphasis.
    pub fn reference(&self) -> Vec<f32> {
        self.levels.iter().map(|&q| (2.0 * (q as f64 + 0.5) / 65536.0 - 1.0) as f32).collect()
    }

    /// Dequantized signal, pre-emphasized when requested.
    pub fn signal<R: Rng + ?Sized>(&self, preemphasis: bool, rng: &mut R) -> Vec<f32> {
        let x = dequantize(&self.levels, rng);
        if preemphasis {
            preemphasize(&x)
        } else {
            x
        }
    }

    pub fn blocks<R: Rng + ?Sized>(&self, k: usize, n_pad: usize, preemphasis: bool, rng: &mut R) -> Result<StopLabeledBlocks> {
        Ok(block_partition(&self.signal(preemphasis, rng), k, n_pad)?)
    }

    /// Decoder steps including end-of-sequence padding.
    pub fn n_blocks(&self, k: usize, n_pad: usize) -> usize {
        self.len().div_ceil(k) + n_pad
    }
}

/// Loss input with blocks padded to `t_max` rows; the extra rows are
/// masked out of the loss.
pub fn loss_input<R: Rng + ?Sized>(utt: &Utterance, cfg: &Config, t_max: usize, rng: &mut R) -> Result<LossInput<f32>> {
    let k = cfg.k();
    let b = utt.blocks(k, cfg.model.n_pad, cfg.ablations.preemphasis, rng)?;
    let valid = if cfg.model.unconditional { utt.len().div_ceil(k) } else { b.n_blocks() };
    let rows = t_max.max(b.n_blocks());
    let mut samples = b.samples;
    samples.resize(rows * k, 0.0);
    let mut labels = b.labels;
    labels.resize(rows, 1.0);
    Ok(LossInput {
        tokens: utt.tokens.clone(),
        blocks: Tensor::new(&[rows, k], samples)?,
        labels: Tensor::new(&[rows], labels)?,
        valid,
    })
}

/// A recording that could not be used, with the reason.
#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub vocab: Vocab,
    pub utterances: Vec<Utterance>,
    pub skipped: Vec<Skipped>,
}

/// Loads every `*.wav` with a sibling `*.txt` transcript from `dir`, using
/// the vocabulary in `dir/vocab.txt`. Unusable pairs are reported, not fatal.
pub fn ingest_directory(dir: impl AsRef<Path>) -> Result<Ingested> {
    let dir = dir.as_ref();
    let vocab_path = dir.join("vocab.txt");
    if !vocab_path.is_file() {
        return Err(invalid(format!("no vocabulary file at {}", vocab_path.display())));
    }
    let vocab = Vocab::load(&vocab_path)?;
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(invalid(format!("no .wav files in {}", dir.display())));
    }
    let mut utterances = Vec::new();
    let mut skipped = Vec::new();
    for wav in wavs {
        let txt = wav.with_extension("txt");
        let id = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let loaded = std::fs::read_to_string(&txt)
            .map_err(|e| format!("transcript {}: {e}", txt.display()))
            .and_then(|text| {
                let (pcm, sr) = load_wav(&wav).map_err(|e| e.to_string())?;
                Utterance::from_pcm(id, text.trim_end_matches(['\n', '\r']), &vocab, &pcm, sr).map_err(|e| e.to_string())
            });
        match loaded {
            Ok(u) => utterances.push(u),
            Err(reason) => skipped.push(Skipped { path: wav, reason }),
        }
    }
    Ok(Ingested { vocab, utterances, skipped })
}
