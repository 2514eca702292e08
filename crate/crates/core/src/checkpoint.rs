//! Checkpoint files: the magic `WFCK`, a little-endian `u32` format version
//! and `u64` manifest length, a JSON manifest, then every parameter as raw
//! little-endian `f32` in store order, followed by the Adam first and second
//! moments in the same order when present.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{TtsModel, Vocab};
use crate::numerics::{Adam, AdamConfig, ParamStore, Tensor};
use crate::vocoder::Vocoder;

const MAGIC: &[u8; 4] = b"WFCK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Tts,
    Vocoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn of(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Checkpoint("malformed rng state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamEntry {
    config: AdamConfig,
    t: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    kind: ModelKind,
    config_hash: String,
    config: Config,
    vocab: Vec<String>,
    step: u64,
    max_train_blocks: usize,
    rng: RngState,
    tensors: Vec<TensorEntry>,
    adam: Option<AdamEntry>,
}

/// Everything needed to resume training or to synthesize.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: Config,
    /// Empty for vocoder checkpoints.
    pub vocab: Vec<String>,
    pub step: u64,
    /// Longest training utterance in blocks; sets the synthesis step cap.
    pub max_train_blocks: usize,
    pub rng: ChaCha8Rng,
    pub params: ParamStore<f32>,
    pub adam: Option<Adam<f32>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            kind: self.kind,
            config_hash: self.config.model_hash(),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            step: self.step,
            max_train_blocks: self.max_train_blocks,
            rng: RngState::of(&self.rng),
            tensors: self
                .params
                .ids()
                .map(|id| TensorEntry {
                    name: self.params.name(id).to_string(),
                    shape: self.params.get(id).shape().to_vec(),
                    frozen: self.params.is_frozen(id),
                })
                .collect(),
            adam: self.adam.as_ref().map(|a| AdamEntry { config: a.config, t: a.t }),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + 12 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |t: &Tensor<f32>| t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.params.params().iter().for_each(|p| put(&p.value));
        if let Some(adam) = &self.adam {
            adam.m.iter().chain(&adam.v).for_each(&mut put);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        if manifest.config.model_hash() != manifest.config_hash {
            return Err(bad("config hash does not match the stored config"));
        }
        let mut data = bytes[16 + len..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut take = |shape: &[usize]| -> Result<Tensor<f32>> {
            let n = shape.iter().product();
            let v: Vec<f32> = data.by_ref().take(n).collect();
            if v.len() != n {
                return Err(bad("truncated tensor data"));
            }
            Ok(Tensor::new(shape, v)?)
        };
        let mut params = ParamStore::new();
        for e in &manifest.tensors {
            let id = params.add(e.name.clone(), take(&e.shape)?);
            params.set_frozen(id, e.frozen);
        }
        let adam = match &manifest.adam {
            None => None,
            Some(a) => {
                let m = manifest.tensors.iter().map(|e| take(&e.shape)).collect::<Result<Vec<_>>>()?;
                let v = manifest.tensors.iter().map(|e| take(&e.shape)).collect::<Result<Vec<_>>>()?;
                Some(Adam { config: a.config, t: a.t, m, v })
            }
        };
        if (bytes.len() - 16 - len) != 4 * (params.num_scalars() * if adam.is_some() { 3 } else { 1 }) {
            return Err(bad("trailing bytes after tensor data"));
        }
        manifest.config.validate()?;
        Ok(Self {
            kind: manifest.kind,
            config: manifest.config,
            vocab: manifest.vocab,
            step: manifest.step,
            max_train_blocks: manifest.max_train_blocks,
            rng: manifest.rng.restore()?,
            params,
            adam,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Copies stored values into `store`, which must have identical names
    /// and shapes in the same order.
    pub fn restore_into(&self, store: &mut ParamStore<f32>) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, (src, p)) in ids.into_iter().zip(self.params.ids().zip(self.params.params())) {
            if store.name(id) != p.name || store.get(id).shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match model parameter {} {:?}",
                    p.name,
                    p.value.shape(),
                    store.name(id),
                    store.get(id).shape()
                )));
            }
            store.set(id, (*p.value).clone())?;
            store.set_frozen(id, self.params.is_frozen(src));
        }
        Ok(())
    }

    /// Rebuilds the text-to-speech model and its parameters.
    pub fn tts(&self) -> Result<(TtsModel, ParamStore<f32>)> {
        if self.kind != ModelKind::Tts {
            return Err(Error::Checkpoint("expected a text-to-speech checkpoint".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let model = TtsModel::new(&mut store, &self.config, Vocab::new(self.vocab.clone())?, &mut rng)?;
        self.restore_into(&mut store)?;
        Ok((model, store))
    }

    /// Rebuilds the vocoder and its parameters.
    pub fn vocoder(&self) -> Result<(Vocoder, ParamStore<f32>)> {
        if self.kind != ModelKind::Vocoder {
            return Err(Error::Checkpoint("expected a vocoder checkpoint".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let voc = Vocoder::new(&mut store, &self.config.model.vocoder, self.config.model.sample_rate, &mut rng)?;
        self.restore_into(&mut store)?;
        Ok((voc, store))
    }
}
