//! Run configuration: one JSON document with `model`, `train`, `synth` and
//! `ablations` sections. Unknown keys are rejected with their path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config, Error, Result};
use crate::flow::FlowConfig;
use crate::numerics::AdamConfig;
use crate::seq2seq::DecoderConfig;
use crate::vocoder::VocoderConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub ablations: Ablations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub sample_rate: u32,
    /// Block size per unit of reduction factor: `K = block_unit · R`.
    pub block_unit: usize,
    /// Zero blocks labeled as end of sequence after each utterance.
    pub n_pad: usize,
    /// Feed back the whole previous block instead of its last `K/R` samples.
    pub full_feedback: bool,
    /// Train the flow alone, without text conditioning or stop head.
    pub unconditional: bool,
    /// `flow.k` may be 0 (derived) or must equal `block_unit · R`;
    /// `flow.temperature` is overridden by `ablations.temperature`.
    pub flow: FlowConfig,
    pub decoder: DecoderConfig,
    pub vocoder: VocoderConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    pub preemphasis: bool,
    pub position_embeddings: bool,
    pub skip_connection: bool,
    pub reduction_factor: usize,
    pub temperature: f64,
}

impl Default for Ablations {
    fn default() -> Self {
        Self { preemphasis: true, position_embeddings: true, skip_connection: true, reduction_factor: 1, temperature: 0.7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: u64,
    pub checkpoint_interval: u64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Abort when the flow NLL exceeds this many nats per dimension.
    pub divergence_nll_per_dim: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            max_steps: 20_000,
            checkpoint_interval: 1000,
            seed: 0,
            adam: AdamConfig::default(),
            divergence_nll_per_dim: 50.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Overrides `ablations.temperature` when set.
    pub temperature: Option<f64>,
    pub stop_threshold: f64,
    /// Step cap; by default 4× the longest training utterance in blocks.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { temperature: None, stop_threshold: 0.5, max_steps: None, seed: 0 }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            block_unit: 320,
            n_pad: 2,
            full_feedback: false,
            unconditional: false,
            flow: FlowConfig { k: 0, l: 10, m: 3, n: 4, coupling_channels: 64, position_dim: 16, ..FlowConfig::default() },
            decoder: DecoderConfig {
                embed_dim: 64,
                bank_widths: 4,
                bank_channels: 64,
                highway_layers: 2,
                gru_units: 64,
                prenet: vec![128, 64],
                prenet_dropout: 0.5,
                attention_rnn: 128,
                attention_dim: 64,
                location_filters: 16,
                location_width: 15,
                decoder_rnn: 128,
                decoder_layers: 2,
                projection: 128,
            },
            vocoder: VocoderConfig {
                flow: FlowConfig { k: 1600, l: 5, m: 3, n: 4, coupling_channels: 32, position_dim: 8, ..FlowConfig::default() },
                cond_channels: 64,
                ..VocoderConfig::default()
            },
        }
    }
}

impl Config {
    /// Desk-scale defaults: 8 kHz, `K = 320`, `R = 1`, small networks.
    pub fn desk() -> Self {
        Self::default()
    }

    /// The full-size configuration at 24 kHz with `K = 960`, `R = 3`.
    pub fn paper() -> Self {
        Self {
            model: ModelConfig {
                sample_rate: 24_000,
                flow: FlowConfig { k: 0, ..FlowConfig::default() },
                decoder: DecoderConfig::default(),
                vocoder: VocoderConfig::default(),
                ..ModelConfig::default()
            },
            ablations: Ablations { reduction_factor: 3, ..Ablations::default() },
            train: TrainConfig { batch_size: 256, max_steps: 500_000, ..TrainConfig::default() },
            ..Self::default()
        }
    }

    /// Parses JSON, naming the offending key path on schema errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let (m, a) = (&self.model, &self.ablations);
        if m.sample_rate == 0 || m.block_unit == 0 || m.n_pad == 0 {
            return Err(config("model.sample_rate, model.block_unit and model.n_pad must be positive"));
        }
        if a.reduction_factor == 0 {
            return Err(config("ablations.reduction_factor must be at least 1"));
        }
        if !(a.temperature >= 0.0) {
            return Err(config("ablations.temperature must be non-negative"));
        }
        if m.flow.k != 0 && m.flow.k != self.k() {
            return Err(config(format!(
                "model.flow.k = {} contradicts block_unit · reduction_factor = {}; set it to 0 to derive it",
                m.flow.k,
                self.k()
            )));
        }
        self.flow().validate()?;
        m.decoder.validate()?;
        m.vocoder.validate(m.sample_rate)?;
        let t = &self.train;
        if t.batch_size == 0 || t.checkpoint_interval == 0 {
            return Err(config("train.batch_size and train.checkpoint_interval must be positive"));
        }
        if !(t.divergence_nll_per_dim > 0.0) {
            return Err(config("train.divergence_nll_per_dim must be positive"));
        }
        let s = &self.synth;
        if !(s.stop_threshold > 0.0 && s.stop_threshold < 1.0) {
            return Err(config("synth.stop_threshold must be in (0, 1)"));
        }
        if s.temperature.is_some_and(|t| !(t >= 0.0)) {
            return Err(config("synth.temperature must be non-negative"));
        }
        if s.max_steps == Some(0) {
            return Err(config("synth.max_steps must be at least 1"));
        }
        Ok(())
    }

    /// Samples per block.
    pub fn k(&self) -> usize {
        self.model.block_unit * self.ablations.reduction_factor
    }

    /// Autoregressive input length fed back to the decoder.
    pub fn tail_len(&self) -> usize {
        if self.model.full_feedback {
            self.k()
        } else {
            self.k() / self.ablations.reduction_factor
        }
    }

    /// The text-to-speech flow with ablation switches applied.
    pub fn flow(&self) -> FlowConfig {
        let a = &self.ablations;
        FlowConfig {
            k: self.k(),
            temperature: a.temperature,
            position_dim: if a.position_embeddings { self.model.flow.position_dim } else { 0 },
            ..self.model.flow.clone()
        }
    }

    pub fn synth_temperature(&self) -> f64 {
        self.synth.temperature.unwrap_or(self.ablations.temperature)
    }

    /// SHA-256 over the sections that determine model structure and signal
    /// processing (`model` and `ablations`).
    pub fn model_hash(&self) -> String {
        let doc = serde_json::json!({ "model": self.model, "ablations": self.ablations });
        let digest = Sha256::digest(doc.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl std::str::FromStr for Config {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_json(s)
    }
}
