//! Command-line front end: `train`, `enhance`, `evaluate`, `flops`, `synth`.
//!
//! [`run`] returns the process exit code: 0 on success, 1 on a usage error,
//! 2 on a runtime error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{Map, Value};

use crate::dsp::{read_wav, write_wav, WavFormat};
use crate::error::{Error, Result};
use crate::model::{build_model, count_flops, load_checkpoint, save_checkpoint, ModelConfig};
use crate::train::{evaluate, load_paired_dirs, synthetic_pair, train_model, Split, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Final checkpoint path when the config names none.
pub const DEFAULT_CHECKPOINT: &str = "biosen.ckpt";

#[derive(Parser, Debug)]
#[command(name = "biosen", version, about = "Bioacoustic enhancement: train, enhance, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from a flat JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Enhance one WAV file.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Score a checkpoint on same-named noisy/clean WAV pairs.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        noisy_dir: PathBuf,
        #[arg(long)]
        clean_dir: PathBuf,
        /// JSON report destination.
        #[arg(long)]
        report: PathBuf,
    },
    /// Per-layer FLOPs table for a config and frame count.
    Flops {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        frames: usize,
    },
    /// Write synthetic noisy/clean pairs into `<out-dir>/noisy` and `<out-dir>/clean`.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        n: usize,
        /// Mixing SNR range in dB, `lo,hi`.
        #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
        snr: (f64, f64),
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        seconds: f64,
    },
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    let (lo, hi) = (p(lo)?, p(hi)?);
    if lo > hi {
        return Err(format!("range {lo},{hi} is reversed"));
    }
    Ok((lo, hi))
}

/// Splits a flat JSON object into model and training configs.
///
/// Keys must be fields of [`ModelConfig`] or [`TrainConfig`]; `seed` feeds both.
pub fn parse_config(text: &str) -> Result<(ModelConfig, TrainConfig)> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::ParseError(format!("config: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(Error::ParseError("config must be a JSON object".into()));
    };
    let keys = |v: Value| -> Map<String, Value> {
        match v {
            Value::Object(m) => m,
            _ => Map::new(),
        }
    };
    let known_model = keys(serde_json::to_value(ModelConfig::default()).expect("config serializes"));
    let known_train = keys(serde_json::to_value(TrainConfig::default()).expect("config serializes"));
    let unknown: Vec<&str> = obj
        .keys()
        .filter(|k| !known_model.contains_key(*k) && !known_train.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !unknown.is_empty() {
        return Err(Error::InvalidConfig(format!("unknown config keys: {}", unknown.join(", "))));
    }
    let pick = |known: &Map<String, Value>| -> Value {
        Value::Object(obj.iter().filter(|(k, _)| known.contains_key(*k)).map(|(k, v)| (k.clone(), v.clone())).collect())
    };
    let model: ModelConfig =
        serde_json::from_value(pick(&known_model)).map_err(|e| Error::ParseError(format!("config: {e}")))?;
    let train: TrainConfig =
        serde_json::from_value(pick(&known_train)).map_err(|e| Error::ParseError(format!("config: {e}")))?;
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

fn read_config(path: &Path) -> Result<(ModelConfig, TrainConfig)> {
    parse_config(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Train { config } => {
            let (model_cfg, mut train_cfg) = read_config(&config)?;
            let ckpt = train_cfg
                .checkpoint
                .get_or_insert_with(|| PathBuf::from(DEFAULT_CHECKPOINT))
                .clone();
            let mut write_err = None;
            let (model, _) = train_model(build_model(&model_cfg)?, &train_cfg, |r| {
                if let Err(e) = writeln!(
                    out,
                    "step {:>6}  loss {:>9.4}  val_si_sdri {:>8.3} dB  lr {:.3e}",
                    r.step, r.train_loss, r.val_si_sdri, r.lr
                ) {
                    write_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = write_err {
                return Err(io_err(e));
            }
            save_checkpoint(&model, &ckpt)?;
            writeln!(out, "saved {}", ckpt.display()).map_err(io_err)
        }
        Command::Enhance { checkpoint, input, output } => {
            let model = load_checkpoint(&checkpoint)?;
            let enhanced = model.enhance(&read_wav(&input)?)?;
            write_wav(&output, &enhanced, WavFormat::Float32)?;
            writeln!(out, "wrote {} ({} samples)", output.display(), enhanced.len()).map_err(io_err)
        }
        Command::Evaluate { checkpoint, noisy_dir, clean_dir, report } => {
            let model = load_checkpoint(&checkpoint)?;
            let pairs = load_paired_dirs(&noisy_dir, &clean_dir, model.config().sample_rate)?;
            let r = evaluate(&model, &pairs)?;
            write_file(&report, &r.to_json())?;
            write!(out, "{}", r.to_text()).map_err(io_err)
        }
        Command::Flops { config, frames } => {
            let (model_cfg, _) = read_config(&config)?;
            let r = count_flops(&model_cfg, (model_cfg.stft.n_bins(), frames))?;
            write!(out, "{}", r.to_table()).map_err(io_err)
        }
        Command::Synth { out_dir, n, snr, seed, seconds } => {
            let cfg = TrainConfig {
                seed,
                snr_range_db: snr,
                segment_seconds: seconds,
                ..TrainConfig::default()
            };
            cfg.validate()?;
            let sample_rate = ModelConfig::default().sample_rate;
            let (noisy_dir, clean_dir) = (out_dir.join("noisy"), out_dir.join("clean"));
            for d in [&noisy_dir, &clean_dir] {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            for i in 0..n {
                let p = synthetic_pair(&cfg, sample_rate, Split::Validation, i as u64)?;
                let name = format!("{}.wav", p.id);
                write_wav(noisy_dir.join(&name), &p.noisy, WavFormat::Float32)?;
                write_wav(clean_dir.join(&name), &p.clean, WavFormat::Float32)?;
            }
            writeln!(out, "wrote {n} pairs under {}", out_dir.display()).map_err(io_err)
        }
    }
}

/// Parses `args` (program name first) and runs the subcommand, writing normal
/// output to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}
