mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waveflow::config::Config;
use waveflow::dsp::{deemphasize, load_wav, save_wav, StftGeometry};
use waveflow::model::TtsModel;
use waveflow::numerics::ParamStore;
use waveflow::synthesis::{
    bench_variant, fixed_duration, seam_ratio, synthesize, vocode, write_bench_csv, SynthesisOptions, VocoderBackend,
    BENCH_HEADER,
};
use waveflow::trainer::ToyCorpusSpec;
use waveflow::vocoder::{conditioning_mel, Vocoder};

fn model(cfg: &Config) -> (TtsModel, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let m = TtsModel::new(&mut store, cfg, ToyCorpusSpec::vocab(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    common::perturb(&mut store, 5, 0.05);
    (m, store)
}

fn opts(t: f64, cap: usize) -> SynthesisOptions {
    SynthesisOptions { temperature: t, stop_threshold: f64::INFINITY, max_steps: cap }
}

fn tokens(m: &TtsModel) -> Vec<usize> {
    m.vocab.encode("ABCA").unwrap()
}

#[test]
fn zero_temperature_is_bitwise_deterministic() {
    let (m, s) = model(&common::tiny_config());
    let a = synthesize(&m, &s, &tokens(&m), &opts(0.0, 6), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = synthesize(&m, &s, &tokens(&m), &opts(0.0, 6), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a, b);
    let c = synthesize(&m, &s, &tokens(&m), &opts(0.7, 6), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_ne!(a.waveform, c.waveform);
}

#[test]
fn output_is_whole_blocks() {
    let (m, s) = model(&common::tiny_config());
    let out = synthesize(&m, &s, &tokens(&m), &opts(0.7, 5), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(out.n_steps, 5);
    assert_eq!(out.waveform.len(), 5 * m.k());
    assert_eq!(out.stop_probs.len(), 5);
    assert!(!out.stopped_by_token);
    assert_eq!(out.waveform.sample_rate, 8000);
}

#[test]
fn earlier_blocks_do_not_depend_on_the_cap() {
    let (m, s) = model(&common::tiny_config());
    let short = synthesize(&m, &s, &tokens(&m), &opts(0.7, 3), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let long = synthesize(&m, &s, &tokens(&m), &opts(0.7, 7), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(short.waveform.samples[..], long.waveform.samples[..short.waveform.len()]);
}

#[test]
fn stop_head_ends_generation() {
    let (m, store) = {
        let mut store = ParamStore::new();
        let m = TtsModel::new(&mut store, &common::tiny_config(), ToyCorpusSpec::vocab(), &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        (m, store)
    };
    // A freshly built stop head outputs exactly one half.
    let eager = SynthesisOptions { temperature: 0.0, stop_threshold: 0.4, max_steps: 9 };
    let out = synthesize(&m, &store, &tokens(&m), &eager, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!((out.n_steps, out.stopped_by_token), (1, true));
    assert_eq!(out.stop_probs, vec![0.5]);
    let strict = SynthesisOptions { stop_threshold: 0.5, ..eager };
    let out = synthesize(&m, &store, &tokens(&m), &strict, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!((out.n_steps, out.stopped_by_token), (9, false));
    assert!(synthesize(&m, &store, &tokens(&m), &SynthesisOptions { max_steps: 0, ..eager }, &mut ChaCha8Rng::seed_from_u64(0))
        .is_err());
}

#[test]
fn deemphasis_applies_once_and_only_with_preemphasis() {
    let with = common::tiny_config();
    let mut without = with.clone();
    without.ablations.preemphasis = false;
    let (m1, s1) = model(&with);
    let (m0, s0) = model(&without);
    let a = synthesize(&m1, &s1, &tokens(&m1), &opts(0.5, 4), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = synthesize(&m0, &s0, &tokens(&m0), &opts(0.5, 4), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a.waveform.samples, deemphasize(&b.waveform.samples));
}

#[test]
fn unconditional_model_generates_blocks() {
    let mut cfg = common::tiny_config();
    cfg.model.unconditional = true;
    let (m, s) = model(&cfg);
    assert!(m.seq.is_none());
    let out = synthesize(&m, &s, &[], &opts(0.7, 3), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out.waveform.len(), 3 * m.k());
    assert!(out.stop_probs.is_empty());
}

#[test]
fn fixed_duration_rounds_up_to_blocks() {
    let (m, _) = model(&common::tiny_config());
    let o = fixed_duration(&m, 0.01, 0.7);
    assert_eq!(o.max_steps, 10);
    assert!(o.stop_threshold > 1.0);
    let cfg = Config::desk();
    let from_cfg = SynthesisOptions::from_config(&cfg, 12);
    assert_eq!((from_cfg.max_steps, from_cfg.temperature, from_cfg.stop_threshold), (48, 0.7, 0.5));
}

#[test]
fn seam_ratio_flags_block_discontinuities() {
    let smooth: Vec<f32> = (0..400).map(|n| (0.05 * n as f32).sin()).collect();
    assert!(seam_ratio(&smooth, 40) < 1.5);
    let mut jumpy = smooth.clone();
    for (n, v) in jumpy.iter_mut().enumerate() {
        *v += if (n / 40) % 2 == 0 { 0.5 } else { -0.5 };
    }
    assert!(seam_ratio(&jumpy, 40) > 3.0);
}

fn tone(sr: u32, n: usize) -> Vec<f32> {
    (0..n).map(|i| 0.5 * (2.0 * std::f32::consts::PI * 440.0 * i as f32 / sr as f32).sin()).collect()
}

#[test]
fn griffin_lim_path_emits_mel_implied_length() {
    let mel = conditioning_mel(&tone(8000, 4000), 8000).unwrap();
    let hop = StftGeometry::for_rate(8000).hop;
    let backend = VocoderBackend::GriffinLim { iterations: 100 };
    let w = vocode(&mel, None, 8000, &backend, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(w.len(), mel.rows * hop);
    assert!(w.samples.iter().all(|v| v.is_finite()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gl.wav");
    save_wav(&path, &w).unwrap();
    assert_eq!(load_wav(&path).unwrap().1, 8000);
}

#[test]
fn flowcoder_path_is_deterministic_at_zero_temperature() {
    let cfg = Config::desk();
    let mut store = ParamStore::new();
    let mut vcfg = cfg.model.vocoder.clone();
    vcfg.cond_channels = 8;
    vcfg.flow.coupling_channels = 8;
    let voc = Vocoder::new(&mut store, &vcfg, 8000, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mel = conditioning_mel(&tone(8000, 2000), 8000).unwrap();
    let backend = VocoderBackend::Flowcoder { vocoder: &voc, store: &store, temperature: 0.0, preemphasis: true };
    let a = vocode(&mel, Some(2000), 8000, &backend, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = vocode(&mel, Some(2000), 8000, &backend, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.len(), a.sample_rate), (2000, 8000));
    assert!(vocode(&mel, Some(2000), 24_000, &backend, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn bench_rows_and_csv() {
    let mut calls = 0;
    let row = bench_variant("noop", Some(2), 3, || {
        calls += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(calls, 4, "one warm-up call plus the trials");
    assert_eq!((row.trials, row.r), (3, Some(2)));
    assert!(row.mean_s >= 0.0 && row.std_s >= 0.0);
    assert!(bench_variant("noop", None, 0, || Ok(())).is_err());
    let mut out = Vec::new();
    write_bench_csv(&[row], &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(BENCH_HEADER));
    assert!(lines.next().unwrap().starts_with("noop,2,"));
}

#[test]
fn standard_error_shrinks_with_trials() {
    // Quadrupling the trials should halve std/sqrt(n).
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut draw = move || {
        let us = rng.random_range(200..1800);
        std::thread::sleep(std::time::Duration::from_micros(us));
        Ok(())
    };
    let a = bench_variant("sleep", None, 40, &mut draw).unwrap();
    let b = bench_variant("sleep", None, 160, &mut draw).unwrap();
    let ratio = (b.std_s / 160f64.sqrt()) / (a.std_s / 40f64.sqrt());
    assert!((ratio - 0.5).abs() < 0.15, "ratio {ratio}");
}
