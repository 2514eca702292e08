use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use waveflow::config::Config;
use waveflow::flow::FlowConfig;
use waveflow::seq2seq::DecoderConfig;
use waveflow::trainer::{ToyCorpusSpec, Trainer};
use waveflow_ffi::*;

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let mut cfg = Config::desk();
    cfg.model.block_unit = 8;
    cfg.model.flow = FlowConfig { k: 0, l: 2, m: 2, n: 1, coupling_channels: 4, position_dim: 2, ..FlowConfig::default() };
    cfg.model.decoder = DecoderConfig {
        embed_dim: 4,
        bank_widths: 2,
        bank_channels: 3,
        highway_layers: 1,
        gru_units: 2,
        prenet: vec![4, 3],
        prenet_dropout: 0.0,
        attention_rnn: 4,
        attention_dim: 3,
        location_filters: 2,
        location_width: 3,
        decoder_rnn: 4,
        decoder_layers: 1,
        projection: 4,
    };
    let path = dir.join("tiny.wfck");
    Trainer::new(&cfg, ToyCorpusSpec::vocab(), 1).unwrap().checkpoint().save(&path).unwrap();
    path
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = wf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(path: &Path) -> *mut WfModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { wf_model_load(cstr(path).as_ptr(), &mut m) }, WfStatus::Ok);
    assert!(wf_last_error().is_null());
    m
}

fn samples(a: *const WfAudio) -> Vec<f32> {
    let mut n = 0;
    let p = unsafe { wf_audio_samples(a, &mut n) };
    unsafe { std::slice::from_raw_parts(p, n) }.to_vec()
}

#[test]
fn synthesis_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = load(&tiny_checkpoint(dir.path()));
    unsafe {
        assert_eq!(wf_model_sample_rate(m), 8000);
        let k = wf_model_block_size(m);
        assert_eq!(k, 8);
        let text = CString::new("ABCA").unwrap();
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(wf_synthesize(m, text.as_ptr(), 0.0, 4, 1, &mut a), WfStatus::Ok);
        assert_eq!(wf_synthesize(m, text.as_ptr(), 0.0, 4, 2, &mut b), WfStatus::Ok);
        assert_eq!(samples(a), samples(b));
        assert_eq!(samples(a).len(), wf_audio_steps(a) * k);
        assert!(wf_audio_steps(a) <= 4);
        assert_eq!(wf_audio_sample_rate(a), 8000);
        let wav = dir.path().join("a.wav");
        assert_eq!(wf_audio_save_wav(a, cstr(&wav).as_ptr()), WfStatus::Ok);
        assert_eq!(waveflow::dsp::load_wav(&wav).unwrap().0.len(), samples(a).len());
        wf_audio_free(a);
        wf_audio_free(b);
        wf_model_free(m);
    }
}

#[test]
fn errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        let missing = cstr(&dir.path().join("missing.wfck"));
        assert_ne!(wf_model_load(missing.as_ptr(), &mut m), WfStatus::Ok);
        assert!(m.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(wf_model_load(ptr::null(), &mut m), WfStatus::NullArgument);
        assert_eq!(wf_model_load(missing.as_ptr(), ptr::null_mut()), WfStatus::NullArgument);

        let junk = dir.path().join("junk.wfck");
        std::fs::write(&junk, b"WFCK garbage").unwrap();
        assert_eq!(wf_model_load(cstr(&junk).as_ptr(), &mut m), WfStatus::Checkpoint);

        let m = load(&tiny_checkpoint(dir.path()));
        let mut a = ptr::null_mut();
        let bad = CString::new("AZ").unwrap();
        assert_eq!(wf_synthesize(m, bad.as_ptr(), 0.0, 2, 0, &mut a), WfStatus::InvalidArgument);
        assert!(a.is_null());
        assert!(last_error().contains('Z'), "{}", last_error());
        let not_utf8 = [0xffu8, 0];
        assert_eq!(wf_synthesize(m, not_utf8.as_ptr().cast(), 0.0, 2, 0, &mut a), WfStatus::InvalidUtf8);
        let ok = CString::new("A").unwrap();
        assert_eq!(wf_synthesize(m, ok.as_ptr(), f64::NAN, 2, 0, &mut a), WfStatus::InvalidArgument);
        assert_eq!(wf_synthesize(ptr::null(), ok.as_ptr(), 0.0, 2, 0, &mut a), WfStatus::NullArgument);
        wf_model_free(m);

        assert_eq!(wf_model_sample_rate(ptr::null()), 0);
        assert!(wf_audio_samples(ptr::null(), ptr::null_mut()).is_null());
        wf_model_free(ptr::null_mut());
        wf_audio_free(ptr::null_mut());
    }
}

#[test]
fn mcd_of_identical_signals_is_zero() {
    let x: Vec<f32> = (0..2000).map(|i| (0.07 * i as f32).sin() * 0.3).collect();
    let mut d = -1.0;
    unsafe {
        assert_eq!(wf_mcd(x.as_ptr(), x.len(), x.as_ptr(), x.len(), 8000, &mut d), WfStatus::Ok);
        assert_eq!(d, 0.0);
        assert_eq!(wf_mcd(x.as_ptr(), 10, x.as_ptr(), 10, 8000, &mut d), WfStatus::InvalidArgument);
    }
    let v = unsafe { CStr::from_ptr(wf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/waveflow.h")).unwrap();
    for name in ["wf_model_load", "wf_synthesize", "wf_audio_samples", "wf_audio_free", "wf_last_error", "WF_STATUS_OK"] {
        assert!(header.contains(name), "{name}");
    }
}

fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    [deps.join("libwaveflow_ffi.a"), deps.parent()?.join("libwaveflow_ffi.a")].into_iter().find(|p| p.is_file())
}

#[test]
fn c_program_links_against_the_static_library() {
    let Some(lib) = static_lib() else {
        panic!("libwaveflow_ffi.a not found next to the test binary");
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success());
    let ckpt = tiny_checkpoint(dir.path());
    let out = Command::new(&exe).arg(&ckpt).arg(dir.path().join("c.wav")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["samples"], 480);
    assert_eq!(report["mcd"], 0.0);
}
