//! Waveform I/O, pre/post-processing, spectral features and the objective
//! distance measures.

mod dtw;
mod features;
mod griffin_lim;
mod pitch;
mod signal;
mod spectral;
mod wav;

pub use dtw::{dtw, mcd, msd, Alignment};
pub use features::{read_features, write_features, FeatureDump, FeatureMeta};
pub use griffin_lim::{griffin_lim, mel_to_linear, GriffinLim};
pub use pitch::pitch_track;
pub use signal::{block_partition, deemphasize, dequantize, level_of, preemphasize, StopLabeledBlocks, PREEMPHASIS};
pub use spectral::{log_mel, mel_filterbank, mfcc, Spectrogram, StftGeometry, LOG_FLOOR, N_MELS, N_MFCC};
pub use wav::{load_wav, save_wav, save_wav_pcm, Waveform};

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported wav encoding: {0}")]
    Unsupported(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("signal of {len} samples is shorter than one {win}-sample window")]
    TooShort { len: usize, win: usize },
}

pub type Result<T> = std::result::Result<T, DspError>;
