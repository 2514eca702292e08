//! C interface to waveflow.
//!
//! Every fallible function returns a [`WfStatus`]; on failure the message is
//! available from [`wf_last_error`] on the same thread until the next call.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use waveflow::checkpoint::{Checkpoint, ModelKind};
use waveflow::dsp::DspError;
use waveflow::model::TtsModel;
use waveflow::numerics::ParamStore;
use waveflow::synthesis::{synthesize, SynthesisOptions};
use waveflow::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad configuration or argument values.
    InvalidArgument = 3,
    /// The checkpoint is missing, corrupt or of the wrong kind.
    Checkpoint = 4,
    Io = 5,
    /// A numerical or internal failure.
    Runtime = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// A loaded text-to-speech model.
pub struct WfModel {
    model: TtsModel,
    store: ParamStore<f32>,
    max_train_blocks: usize,
}

/// Synthesized mono audio.
pub struct WfAudio {
    samples: Vec<f32>,
    sample_rate: u32,
    n_steps: usize,
    stopped_by_token: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> WfStatus {
    match e {
        Error::Config(_) | Error::Invalid(_) => WfStatus::InvalidArgument,
        Error::Checkpoint(_) | Error::Json(_) => WfStatus::Checkpoint,
        Error::Io(_) | Error::Dsp(DspError::Io(_)) => WfStatus::Io,
        Error::Dsp(DspError::Invalid(_) | DspError::TooShort { .. } | DspError::Unsupported(_)) => WfStatus::InvalidArgument,
        _ => WfStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (WfStatus, String)>) -> WfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            WfStatus::Panic
        }
    }
}

fn lib(e: impl Into<Error>) -> (WfStatus, String) {
    let e = e.into();
    (status_of(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (WfStatus, String)> {
    if p.is_null() {
        return Err((WfStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (WfStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), (WfStatus, String)> {
    if p.is_null() {
        Err((WfStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn wf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn wf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a text-to-speech checkpoint.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wf_model_load(path: *const c_char, out: *mut *mut WfModel) -> WfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let ck = Checkpoint::load(path).map_err(lib)?;
        if ck.kind != ModelKind::Tts {
            return Err((WfStatus::Checkpoint, format!("{path} is not a text-to-speech checkpoint")));
        }
        let (model, store) = ck.tts().map_err(lib)?;
        *out = Box::into_raw(Box::new(WfModel { model, store, max_train_blocks: ck.max_train_blocks }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`wf_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wf_model_free(model: *mut WfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Output sample rate in Hz, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wf_model_sample_rate(model: *const WfModel) -> u32 {
    model.as_ref().map_or(0, |m| m.model.config.model.sample_rate)
}

/// Samples generated per decoder step, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wf_model_block_size(model: *const WfModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.k())
}

/// Synthesizes `text`. A negative `temperature` uses the model default and
/// `max_steps == 0` the default step cap.
///
/// # Safety
/// `model` must be a live handle, `text` nul-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn wf_synthesize(
    model: *const WfModel,
    text: *const c_char,
    temperature: f64,
    max_steps: usize,
    seed: u64,
    out: *mut *mut WfAudio,
) -> WfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        non_null(model, "model")?;
        let m = &*model;
        let text = str_arg(text, "text")?;
        let tokens = m.model.vocab.encode(text).map_err(lib)?;
        let mut opts = SynthesisOptions::from_config(&m.model.config, m.max_train_blocks);
        if temperature.is_nan() {
            return Err((WfStatus::InvalidArgument, "temperature is NaN".into()));
        }
        if temperature >= 0.0 {
            opts.temperature = temperature;
        }
        if max_steps > 0 {
            opts.max_steps = max_steps;
        }
        let s = synthesize(&m.model, &m.store, &tokens, &opts, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(lib)?;
        *out = Box::into_raw(Box::new(WfAudio {
            samples: s.waveform.samples,
            sample_rate: s.waveform.sample_rate,
            n_steps: s.n_steps,
            stopped_by_token: s.stopped_by_token,
        }));
        Ok(())
    })
}

/// Borrowed pointer to the samples; the count is written to `len`.
/// Returns null for a null handle.
///
/// # Safety
/// `audio` must be null or a live handle; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn wf_audio_samples(audio: *const WfAudio, len: *mut usize) -> *const f32 {
    let Some(a) = audio.as_ref() else { return ptr::null() };
    if let Some(len) = len.as_mut() {
        *len = a.samples.len();
    }
    a.samples.as_ptr()
}

/// # Safety
/// `audio` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wf_audio_sample_rate(audio: *const WfAudio) -> u32 {
    audio.as_ref().map_or(0, |a| a.sample_rate)
}

/// Decoder steps taken.
///
/// # Safety
/// `audio` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wf_audio_steps(audio: *const WfAudio) -> usize {
    audio.as_ref().map_or(0, |a| a.n_steps)
}

/// Whether generation ended on the stop token rather than the step cap.
///
/// # Safety
/// `audio` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wf_audio_stopped_by_token(audio: *const WfAudio) -> bool {
    audio.as_ref().is_some_and(|a| a.stopped_by_token)
}

/// Writes the audio as 16-bit PCM WAV.
///
/// # Safety
/// `audio` must be a live handle and `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn wf_audio_save_wav(audio: *const WfAudio, path: *const c_char) -> WfStatus {
    guard(|| {
        non_null(audio, "audio")?;
        let path = str_arg(path, "path")?;
        let a = &*audio;
        let w = waveflow::dsp::Waveform { samples: a.samples.clone(), sample_rate: a.sample_rate };
        waveflow::dsp::save_wav(path, &w).map_err(lib)
    })
}

/// Releases audio. Null is ignored.
///
/// # Safety
/// `audio` must come from [`wf_synthesize`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wf_audio_free(audio: *mut WfAudio) {
    if !audio.is_null() {
        drop(Box::from_raw(audio));
    }
}

/// Mel cepstral distortion between two signals at `sample_rate`.
///
/// # Safety
/// `x` and `y` must point to `nx` and `ny` floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wf_mcd(
    x: *const f32,
    nx: usize,
    y: *const f32,
    ny: usize,
    sample_rate: u32,
    out: *mut f64,
) -> WfStatus {
    guard(|| {
        non_null(x, "x")?;
        non_null(y, "y")?;
        non_null(out, "out")?;
        let (x, y) = (std::slice::from_raw_parts(x, nx), std::slice::from_raw_parts(y, ny));
        *out = waveflow::dsp::mcd(x, y, sample_rate).map_err(lib)?;
        Ok(())
    })
}
