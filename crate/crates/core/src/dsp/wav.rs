use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::{DspError, Result};

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Symmetric 16-bit quantization after clamping to `[-1, 1]`.
    pub fn to_pcm(&self) -> Vec<i16> {
        self.samples.iter().map(|&x| (x.clamp(-1.0, 1.0) * 32767.0).round() as i16).collect()
    }
}

/// Reads a 16-bit PCM mono file, returning the raw integer samples.
pub fn load_wav(path: impl AsRef<Path>) -> Result<(Vec<i16>, u32)> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(DspError::Unsupported(format!("{:?} with {} bits per sample", spec.sample_format, spec.bits_per_sample)));
    }
    if spec.channels != 1 {
        return Err(DspError::Unsupported(format!("{} channels", spec.channels)));
    }
    let pcm = reader.into_samples::<i16>().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((pcm, spec.sample_rate))
}

pub fn save_wav_pcm(path: impl AsRef<Path>, pcm: &[i16], sample_rate: u32) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut w = WavWriter::create(path, spec)?;
    let mut i16w = w.get_i16_writer(pcm.len() as u32);
    for &s in pcm {
        i16w.write_sample(s);
    }
    i16w.flush()?;
    w.finalize()?;
    Ok(())
}

pub fn save_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    save_wav_pcm(path, &wave.to_pcm(), wave.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let pcm: Vec<i16> = (0..1000).map(|i| ((i * 7919) % 65536 - 32768) as i16).collect();
        save_wav_pcm(&p, &pcm, 24_000).unwrap();
        assert_eq!(load_wav(&p).unwrap(), (pcm, 24_000));
    }

    #[test]
    fn silence_loads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        save_wav(&p, &Waveform::new(vec![0.0; 24_000], 24_000)).unwrap();
        let (pcm, sr) = load_wav(&p).unwrap();
        assert_eq!((pcm.len(), sr), (24_000, 24_000));
        assert!(pcm.iter().all(|&s| s == 0));
    }

    #[test]
    fn eight_bit_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let spec = WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 8, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&p), Err(DspError::Unsupported(_))));
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let spec = WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(1i16).unwrap();
        w.write_sample(1i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&p), Err(DspError::Unsupported(_))));
    }
}
