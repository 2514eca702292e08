//! Command-line driver. Every command prints one JSON object to stdout;
//! exit status is 0 on success, 1 on runtime failure and 2 on usage or
//! configuration errors.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::config::Config;
use crate::dsp::{load_wav, mcd, msd, read_features, save_wav, write_features, FeatureDump, FeatureMeta, StftGeometry};
use crate::error::Error;
use crate::synthesis::{
    bench_variant, fixed_duration, synthesize, vocode, write_bench_csv, BenchRow, SynthesisOptions, VocoderBackend,
};
use crate::trainer::{
    evaluate, fit, ingest_directory, latest_checkpoint, Losses, ToyCorpusSpec, Trainer, Utterance, VocoderTrainer,
};
use crate::vocoder::conditioning_mel;

#[derive(Parser, Debug)]
#[command(name = "waveflow", version, about = "Block-autoregressive flow text-to-speech")]
pub struct Cli {
    /// Random seed; overrides the seed in the config where one applies.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for training and evaluation; 1 is fully deterministic.
    #[arg(long, global = true, env = "WAVEFLOW_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Write a synthetic tone corpus (wav + txt pairs and vocab.txt).
    ToyData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
    },
    /// Train the text-to-speech model or the vocoder.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Target::Tts)]
        target: Target,
        /// Override `train.max_steps`.
        #[arg(long)]
        max_steps: Option<u64>,
        /// Continue from `OUT/latest.wfck` when present.
        #[arg(long)]
        resume: bool,
    },
    /// Synthesize a transcript to a WAV file.
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[command(flatten)]
        hook: Transcriber,
    },
    /// Invert a feature dump (from `features`) to audio.
    Vocode {
        /// Vocoder checkpoint; omit to use Griffin-Lim.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        mel: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        temperature: f64,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
    },
    /// Score a checkpoint on a corpus, or compare two directories of audio.
    Eval {
        #[arg(long, required_unless_present = "compare")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Compare WAVs in DATA with same-named WAVs here instead of synthesizing.
        #[arg(long, conflicts_with = "ckpt")]
        compare: Option<PathBuf>,
        #[arg(long)]
        temperature: Option<f64>,
        /// Write synthesized audio here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        hook: Transcriber,
    },
    /// Time fixed-duration generation for every checkpoint in a directory.
    Bench {
        #[arg(long)]
        ckpt_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// Input transcript; defaults to 90 tokens cycling through the vocabulary.
        #[arg(long)]
        text: Option<String>,
        #[arg(long)]
        temperature: Option<f64>,
        /// Also time the Griffin-Lim pipeline.
        #[arg(long)]
        griffin_lim: bool,
        /// CSV output path; the report is also printed as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the conditioning log-mel spectrogram of a WAV file.
    Features {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a configuration preset as JSON.
    Config {
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Tts,
    Vocoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Args, Debug, Default)]
pub struct Transcriber {
    /// Shell command that reads a WAV path on stdin and prints a transcript.
    #[arg(long)]
    pub transcriber: Option<String>,
}

impl Transcriber {
    fn run(&self, wav: &Path) -> anyhow::Result<Option<String>> {
        let Some(cmd) = &self.transcriber else { return Ok(None) };
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .with_context(|| format!("starting transcriber `{cmd}`"))?;
        writeln!(child.stdin.take().expect("piped stdin"), "{}", wav.display())?;
        let out = child.wait_with_output()?;
        if !out.status.success() {
            bail!("transcriber `{cmd}` exited with {}", out.status);
        }
        Ok(Some(String::from_utf8_lossy(&out.stdout).trim().to_string()))
    }
}

/// Runs the CLI on `args` and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(v) => {
            let _ = writeln!(std::io::stdout().lock(), "{v}");
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    let usage = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_usage) || c.is::<UsageError>());
    if usage {
        2
    } else {
        1
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn threads(cli: &Cli) -> anyhow::Result<usize> {
    match cli.threads {
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(n) => Ok(n),
        None => Ok(1),
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<Config> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::desk(),
    })
}

fn load_kind(path: &Path, kind: ModelKind) -> anyhow::Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if ck.kind != kind {
        return Err(usage(format!("{} is a {:?} checkpoint, expected {kind:?}", path.display(), ck.kind)));
    }
    Ok(ck)
}

fn ingest(dir: &Path) -> anyhow::Result<(crate::model::Vocab, Vec<Utterance>)> {
    let got = ingest_directory(dir).with_context(|| format!("reading corpus {}", dir.display()))?;
    for s in &got.skipped {
        eprintln!("skipped {}: {}", s.path.display(), s.reason);
    }
    if got.utterances.is_empty() {
        bail!("no usable utterances in {}", dir.display());
    }
    Ok((got.vocab, got.utterances))
}

pub fn execute(cli: &Cli) -> anyhow::Result<serde_json::Value> {
    match &cli.command {
        Cmd::ToyData { out, n } => {
            if *n == 0 {
                return Err(usage("--n must be at least 1"));
            }
            let spec = ToyCorpusSpec { seed: cli.seed.unwrap_or(0), ..ToyCorpusSpec::default() };
            spec.write(out, *n).with_context(|| format!("writing corpus to {}", out.display()))?;
            Ok(json!({ "out": out, "utterances": n, "seed": spec.seed }))
        }
        Cmd::Train { config, data, out, target, max_steps, resume } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            if let Some(m) = max_steps {
                cfg.train.max_steps = *m;
            }
            let threads = threads(cli)?;
            let (vocab, utts) = ingest(data)?;
            let latest = latest_checkpoint(out);
            let resume_from = (*resume && latest.is_file()).then(|| Checkpoint::load(&latest)).transpose()?;
            let progress = |l: &Losses| {
                if l.step % 100 == 0 {
                    eprintln!("step {} nll/dim {:.4} eos {:.4}", l.step, l.flow_nll_per_dim, l.eos_loss);
                }
            };
            let last = match target {
                Target::Tts => {
                    let mut t = match &resume_from {
                        Some(ck) => Trainer::from_checkpoint(ck, threads)?,
                        None => Trainer::new(&cfg, vocab, threads)?,
                    };
                    t.config.train.max_steps = cfg.train.max_steps;
                    fit(&mut t, &utts, out, progress)?
                }
                Target::Vocoder => {
                    let mut t = match &resume_from {
                        Some(ck) => VocoderTrainer::from_checkpoint(ck, threads)?,
                        None => VocoderTrainer::new(&cfg, threads)?,
                    };
                    t.config.train.max_steps = cfg.train.max_steps;
                    fit(&mut t, &utts, out, progress)?
                }
            };
            Ok(json!({
                "step": last.step,
                "flow_nll_per_dim": last.flow_nll_per_dim,
                "eos_loss": last.eos_loss,
                "checkpoint": latest,
            }))
        }
        Cmd::Synth { ckpt, text, out, temperature, max_steps, hook } => {
            let ck = load_kind(ckpt, ModelKind::Tts)?;
            let (model, store) = ck.tts()?;
            let tokens = model.vocab.encode(text).map_err(|e| usage(e.to_string()))?;
            let mut opts = SynthesisOptions::from_config(&ck.config, ck.max_train_blocks);
            if let Some(t) = temperature {
                if !(*t >= 0.0) {
                    return Err(usage("--temperature must be non-negative"));
                }
                opts.temperature = *t;
            }
            if let Some(m) = max_steps {
                opts.max_steps = *m;
            }
            let seed = cli.seed.unwrap_or(ck.config.synth.seed);
            let s = synthesize(&model, &store, &tokens, &opts, &mut ChaCha8Rng::seed_from_u64(seed))?;
            save_wav(out, &s.waveform)?;
            let transcript = hook.run(out)?;
            Ok(json!({
                "out": out,
                "n_steps": s.n_steps,
                "stopped_by_token": s.stopped_by_token,
                "samples": s.waveform.len(),
                "duration_s": s.waveform.duration_s(),
                "temperature": opts.temperature,
                "seed": seed,
                "transcript": transcript,
            }))
        }
        Cmd::Vocode { ckpt, mel, out, temperature, iterations } => {
            let dump = read_features(mel)?;
            let sr = dump.meta.geometry.sample_rate;
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
            let n = Some(dump.meta.n_samples);
            let wave = match ckpt {
                Some(path) => {
                    let ck = load_kind(path, ModelKind::Vocoder)?;
                    let (voc, store) = ck.vocoder()?;
                    let backend = VocoderBackend::Flowcoder {
                        vocoder: &voc,
                        store: &store,
                        temperature: *temperature,
                        preemphasis: ck.config.ablations.preemphasis,
                    };
                    vocode(&dump.features, n, sr, &backend, &mut rng)?
                }
                None => vocode(&dump.features, n, sr, &VocoderBackend::GriffinLim { iterations: *iterations }, &mut rng)?,
            };
            save_wav(out, &wave)?;
            Ok(json!({ "out": out, "samples": wave.len(), "sample_rate": sr }))
        }
        Cmd::Eval { ckpt, data, compare, temperature, out, hook } => match (ckpt, compare) {
            (_, Some(other)) => compare_dirs(data, other),
            (Some(path), None) => {
                let ck = load_kind(path, ModelKind::Tts)?;
                let (model, store) = ck.tts()?;
                let got = ingest_directory(data)?;
                if got.utterances.is_empty() {
                    bail!("no usable utterances in {}", data.display());
                }
                let mut opts = SynthesisOptions::from_config(&ck.config, ck.max_train_blocks);
                if let Some(t) = temperature {
                    opts.temperature = *t;
                }
                let seed = cli.seed.unwrap_or(ck.config.synth.seed);
                let report = evaluate(&model, &store, &got.utterances, &opts, seed, threads(cli)?)?;
                let mut value = serde_json::to_value(&report)?;
                if let Some(dir) = out {
                    std::fs::create_dir_all(dir)?;
                    let mut transcripts = Vec::new();
                    for (i, u) in got.utterances.iter().enumerate() {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(i as u64);
                        let s = synthesize(&model, &store, &u.tokens, &opts, &mut rng)?;
                        let wav = dir.join(format!("{}.wav", u.id));
                        save_wav(&wav, &s.waveform)?;
                        transcripts.push(json!({ "id": u.id, "reference": u.text, "transcript": hook.run(&wav)? }));
                    }
                    value["transcripts"] = json!(transcripts);
                } else if hook.transcriber.is_some() {
                    return Err(usage("--transcriber needs --out for the synthesized audio"));
                }
                Ok(value)
            }
            (None, None) => Err(usage("eval needs --ckpt or --compare")),
        },
        Cmd::Bench { ckpt_dir, trials, duration, text, temperature, griffin_lim, out } => {
            let rows = bench(ckpt_dir, *trials, *duration, text.as_deref(), *temperature, *griffin_lim, cli.seed.unwrap_or(0))?;
            if let Some(path) = out {
                write_bench_csv(&rows, std::fs::File::create(path)?)?;
            }
            Ok(json!({ "rows": rows }))
        }
        Cmd::Features { wav, out } => {
            let (pcm, sr) = load_wav(wav)?;
            let x: Vec<f32> = pcm.iter().map(|&s| s as f32 / 32768.0).collect();
            let mel = conditioning_mel(&x, sr)?;
            let meta = FeatureMeta {
                kind: "log_mel".into(),
                shape: [mel.rows, mel.cols],
                geometry: StftGeometry::for_rate(sr),
                n_samples: x.len(),
            };
            write_features(out, &FeatureDump { meta, features: mel })?;
            Ok(json!({ "out": out, "frames": x.len().div_ceil(StftGeometry::for_rate(sr).hop), "sample_rate": sr }))
        }
        Cmd::Config { preset } => {
            let cfg = match preset {
                Preset::Desk => Config::desk(),
                Preset::Paper => Config::paper(),
            };
            Ok(serde_json::to_value(&cfg)?)
        }
    }
}

/// Mean MCD and MSD over same-named WAV files in two directories.
fn compare_dirs(a: &Path, b: &Path) -> anyhow::Result<serde_json::Value> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(a)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    names.sort();
    let (mut sum_mcd, mut sum_msd, mut n) = (0.0, 0.0, 0usize);
    for p in &names {
        let other = b.join(p.file_name().expect("file name"));
        if !other.is_file() {
            continue;
        }
        let (x, sr) = load_wav(p)?;
        let (y, sr2) = load_wav(&other)?;
        if sr != sr2 {
            bail!("{} is {sr} Hz but {} is {sr2} Hz", p.display(), other.display());
        }
        let to_f = |v: &[i16]| -> Vec<f32> {
            let mut f: Vec<f32> = v.iter().map(|&s| s as f32 / 32768.0).collect();
            f.resize(f.len().max(StftGeometry::for_rate(sr).win), 0.0);
            f
        };
        let (x, y) = (to_f(&x), to_f(&y));
        sum_mcd += mcd(&x, &y, sr)?;
        sum_msd += msd(&x, &y, sr)?;
        n += 1;
    }
    if n == 0 {
        bail!("no WAV files in {} have a counterpart in {}", a.display(), b.display());
    }
    Ok(json!({ "mcd": sum_mcd / n as f64, "msd": sum_msd / n as f64, "pairs": n }))
}

/// A fixed test signal standing in for predicted spectrograms in the
/// vocoder pipelines: a slow tone sweep of `n` samples.
fn sweep(n: usize, sr: u32) -> Vec<f32> {
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let f = 150.0 + 250.0 * i as f64 / n.max(1) as f64;
            phase += 2.0 * std::f64::consts::PI * f / sr as f64;
            (0.4 * phase.sin()) as f32
        })
        .collect()
}

fn bench(
    dir: &Path,
    trials: usize,
    duration: f64,
    text: Option<&str>,
    temperature: Option<f64>,
    griffin_lim: bool,
    seed: u64,
) -> anyhow::Result<Vec<BenchRow>> {
    if trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    if !(duration > 0.0) {
        return Err(usage("--duration must be positive"));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wfck"))
        .collect();
    paths.sort();
    let mut tts = Vec::new();
    let mut vocoders = Vec::new();
    for p in &paths {
        let ck = Checkpoint::load(p)?;
        match ck.kind {
            ModelKind::Tts => tts.push(ck),
            ModelKind::Vocoder => vocoders.push(ck),
        }
    }
    tts.sort_by_key(|c| c.config.ablations.reduction_factor);
    let mut rows = Vec::new();
    for ck in &tts {
        let (model, store) = ck.tts()?;
        let r = ck.config.ablations.reduction_factor;
        let tokens = match text {
            Some(t) => model.vocab.encode(t).map_err(|e| usage(e.to_string()))?,
            None => (0..90).map(|i| i % model.vocab.len()).collect(),
        };
        let opts = fixed_duration(&model, duration, temperature.unwrap_or(ck.config.synth_temperature()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rows.push(bench_variant("wave-tacotron", Some(r), trials, || {
            synthesize(&model, &store, &tokens, &opts, &mut rng).map(|_| ())
        })?);
    }
    for ck in &vocoders {
        let (voc, store) = ck.vocoder()?;
        let sr = ck.config.model.sample_rate;
        let n = (duration * sr as f64).round() as usize;
        let mel = conditioning_mel(&sweep(n, sr), sr)?;
        let backend = VocoderBackend::Flowcoder {
            vocoder: &voc,
            store: &store,
            temperature: temperature.unwrap_or(ck.config.synth_temperature()),
            preemphasis: ck.config.ablations.preemphasis,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rows.push(bench_variant("flowcoder", None, trials, || vocode(&mel, Some(n), sr, &backend, &mut rng).map(|_| ()))?);
    }
    if griffin_lim {
        let sr = tts.first().or(vocoders.first()).map_or(8000, |c| c.config.model.sample_rate);
        let n = (duration * sr as f64).round() as usize;
        let mel = conditioning_mel(&sweep(n, sr), sr)?;
        let backend = VocoderBackend::GriffinLim { iterations: 100 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rows.push(bench_variant("griffin-lim", None, trials, || vocode(&mel, Some(n), sr, &backend, &mut rng).map(|_| ()))?);
    }
    if rows.is_empty() {
        return Err(anyhow!("no checkpoints in {} and --griffin-lim not set", dir.display()));
    }
    Ok(rows)
}
