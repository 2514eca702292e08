use std::fs;
use std::path::{Path, PathBuf};

use super::spectral::{Spectrogram, StftGeometry};
use super::{DspError, Result};

/// Sidecar describing a flat little-endian `f32` feature file.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMeta {
    pub kind: String,
    pub shape: [usize; 2],
    pub geometry: StftGeometry,
    /// Samples in the signal the features were computed from.
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDump {
    pub meta: FeatureMeta,
    pub features: Spectrogram,
}

fn sidecar(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes `path` (raw `f32` LE) and `path` with a `.json` extension.
pub fn write_features(path: impl AsRef<Path>, dump: &FeatureDump) -> Result<()> {
    let path = path.as_ref();
    let f = &dump.features;
    if dump.meta.shape != [f.rows, f.cols] {
        return Err(DspError::Invalid(format!("meta shape {:?} vs [{}, {}]", dump.meta.shape, f.rows, f.cols)));
    }
    let bytes: Vec<u8> = f.data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes)?;
    let json = serde_json::to_string_pretty(&dump.meta).map_err(|e| DspError::Invalid(e.to_string()))?;
    fs::write(sidecar(path), json)?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureDump> {
    let path = path.as_ref();
    let meta: FeatureMeta = serde_json::from_slice(&fs::read(sidecar(path))?)
        .map_err(|e| DspError::Invalid(format!("{}: {e}", sidecar(path).display())))?;
    let bytes = fs::read(path)?;
    let [rows, cols] = meta.shape;
    if bytes.len() != rows * cols * 4 {
        return Err(DspError::Invalid(format!("{} bytes for shape [{rows}, {cols}]", bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok(FeatureDump { meta, features: Spectrogram { rows, cols, data } })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let features = Spectrogram { rows: 2, cols: 3, data: vec![0.5, -1.0, 2.0, 3.25, 0.0, -7.5] };
        let meta = FeatureMeta { kind: "log_mel".into(), shape: [2, 3], geometry: StftGeometry::for_rate(8000), n_samples: 500 };
        let dump = FeatureDump { meta, features };
        write_features(&p, &dump).unwrap();
        assert_eq!(read_features(&p).unwrap(), dump);
    }
}
