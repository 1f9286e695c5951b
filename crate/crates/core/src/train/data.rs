use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{DatasetKind, TrainConfig};
use crate::autodiff::Tensor;
use crate::dsp::{mix_at_snr, read_wav, synth_chirp, synth_noise, ChirpParams, Envelope, NoiseKind, Waveform};
use crate::error::{Error, Result};

/// One noisy/clean example.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: String,
    pub noisy: Waveform,
    pub clean: Waveform,
}

/// Equal-length examples stacked as `(B, L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedBatch {
    pub noisy: Tensor,
    pub clean: Tensor,
    pub ids: Vec<String>,
}

impl PairedBatch {
    pub fn from_pairs(pairs: &[Pair]) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::InvalidLength("empty batch".into()))?;
        let len = first.clean.len();
        let mut noisy = Vec::with_capacity(pairs.len() * len);
        let mut clean = Vec::with_capacity(pairs.len() * len);
        for p in pairs {
            if p.clean.len() != len || p.noisy.len() != len {
                return Err(Error::InvalidLength(format!(
                    "item `{}` has length {}, batch length is {len}",
                    p.id,
                    p.clean.len()
                )));
            }
            noisy.extend_from_slice(&p.noisy.samples);
            clean.extend_from_slice(&p.clean.samples);
        }
        Ok(Self {
            noisy: Tensor::new(&[pairs.len(), len], noisy)?,
            clean: Tensor::new(&[pairs.len(), len], clean)?,
            ids: pairs.iter().map(|p| p.id.clone()).collect(),
        })
    }
}

/// Independent item streams drawn from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

fn item_rng(seed: u64, split: Split, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = match split {
        Split::Train => 0u64,
        Split::Validation => 1u64,
    };
    rng.set_stream((tag << 48) | index);
    rng
}

/// Draws one synthetic call and noise pair. Deterministic in `(seed, split, index)`.
pub fn synthetic_pair(cfg: &TrainConfig, sample_rate: u32, split: Split, index: u64) -> Result<Pair> {
    let mut rng = item_rng(cfg.seed, split, index);
    let f0_start = rng.random_range(cfg.f0_min..=cfg.f0_max);
    let f0_end = (f0_start * rng.random_range(0.7..=1.5)).clamp(cfg.f0_min, cfg.f0_max);
    let nyquist = sample_rate as f64 / 2.0;
    let mut n_harmonics = rng.random_range(1..=cfg.max_harmonics);
    while n_harmonics > 1 && f0_start.max(f0_end) * n_harmonics as f64 >= nyquist {
        n_harmonics -= 1;
    }
    let period = rng.random_range(0.15..=0.4);
    let chirp = ChirpParams {
        sample_rate,
        duration: cfg.segment_seconds,
        f0_start,
        f0_end,
        n_harmonics,
        harmonic_decay: rng.random_range(0.3..=0.7),
        envelope: Envelope::OnOffBursts {
            period,
            duty: rng.random_range(0.3..=0.7),
        },
    };
    let clean = synth_chirp(&chirp)?;
    let kind = NoiseKind::ALL[rng.random_range(0..NoiseKind::ALL.len())];
    let noise = synth_noise(kind, sample_rate, cfg.segment_seconds, rng.random())?;
    let (lo, hi) = cfg.snr_range_db;
    let snr_db = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let (noisy, _) = mix_at_snr(&clean, &noise, snr_db)?;
    let tag = match split {
        Split::Train => "train",
        Split::Validation => "val",
    };
    Ok(Pair {
        id: format!("{tag}-{index:06}"),
        noisy,
        clean,
    })
}

fn wav_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = BTreeSet::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let p = e.path();
        if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            if let Some(n) = p.file_name().and_then(|n| n.to_str()) {
                names.insert(n.to_string());
            }
        }
    }
    Ok(names)
}

/// Loads matching files from two directories at full length.
///
/// Every `.wav` in one directory needs a same-named partner in the other.
pub fn load_paired_dirs(noisy_dir: &Path, clean_dir: &Path, sample_rate: u32) -> Result<Vec<Pair>> {
    let noisy = wav_names(noisy_dir)?;
    let clean = wav_names(clean_dir)?;
    if let Some(n) = noisy.symmetric_difference(&clean).next() {
        return Err(Error::DatasetMismatch(format!(
            "`{n}` has no counterpart in {} / {}",
            noisy_dir.display(),
            clean_dir.display()
        )));
    }
    if noisy.is_empty() {
        return Err(Error::DatasetMismatch(format!("no .wav files in {}", noisy_dir.display())));
    }
    noisy
        .iter()
        .map(|name| {
            let n = read_wav(noisy_dir.join(name))?;
            let c = read_wav(clean_dir.join(name))?;
            for w in [&n, &c] {
                if w.sample_rate != sample_rate {
                    return Err(Error::InvalidConfig(format!(
                        "`{name}` is at {} Hz, expected {sample_rate} Hz",
                        w.sample_rate
                    )));
                }
            }
            if n.len() != c.len() {
                return Err(Error::DatasetMismatch(format!(
                    "`{name}`: noisy has {} samples, clean has {}",
                    n.len(),
                    c.len()
                )));
            }
            Ok(Pair {
                id: name.clone(),
                noisy: n,
                clean: c,
            })
        })
        .collect()
}

/// Cuts a pair to `len` samples: zero-padded at the tail when short,
/// otherwise cropped at an offset drawn from `rng`.
pub fn fit_segment(p: &Pair, len: usize, rng: &mut impl Rng) -> Result<Pair> {
    let n = p.clean.len();
    let cut = |w: &Waveform, start: usize| -> Result<Waveform> {
        let mut s: Vec<f64> = w.samples.iter().skip(start).take(len).copied().collect();
        s.resize(len, 0.0);
        Waveform::new(s, w.sample_rate)
    };
    let start = if n > len { rng.random_range(0..=n - len) } else { 0 };
    Ok(Pair {
        id: p.id.clone(),
        noisy: cut(&p.noisy, start)?,
        clean: cut(&p.clean, start)?,
    })
}

/// Source of training batches and held-out pairs.
pub enum Dataset {
    Synthetic { cfg: TrainConfig, sample_rate: u32 },
    Files { pairs: Vec<Pair>, cfg: TrainConfig, sample_rate: u32 },
}

impl Dataset {
    pub fn from_config(cfg: &TrainConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.dataset {
            DatasetKind::Synthetic => Dataset::Synthetic {
                cfg: cfg.clone(),
                sample_rate,
            },
            DatasetKind::PairedDirs => {
                let (n, c) = (cfg.noisy_dir.as_ref(), cfg.clean_dir.as_ref());
                let (n, c): (&PathBuf, &PathBuf) = n.zip(c).ok_or_else(|| {
                    Error::InvalidConfig("paired_dirs needs noisy_dir and clean_dir".into())
                })?;
                Dataset::Files {
                    pairs: load_paired_dirs(n, c, sample_rate)?,
                    cfg: cfg.clone(),
                    sample_rate,
                }
            }
        })
    }

    fn segment_len(cfg: &TrainConfig, sample_rate: u32) -> usize {
        ((cfg.segment_seconds * sample_rate as f64).round() as usize).max(1)
    }

    /// Items `index·B .. (index+1)·B` of the training stream.
    pub fn train_batch(&self, index: usize) -> Result<PairedBatch> {
        match self {
            Dataset::Synthetic { cfg, sample_rate } => {
                let b = cfg.batch_size;
                let pairs = (0..b)
                    .map(|j| synthetic_pair(cfg, *sample_rate, Split::Train, (index * b + j) as u64))
                    .collect::<Result<Vec<_>>>()?;
                PairedBatch::from_pairs(&pairs)
            }
            Dataset::Files { pairs, cfg, sample_rate } => {
                let len = Self::segment_len(cfg, *sample_rate);
                let mut rng = item_rng(cfg.seed, Split::Train, index as u64);
                let picked = (0..cfg.batch_size)
                    .map(|_| fit_segment(&pairs[rng.random_range(0..pairs.len())], len, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                PairedBatch::from_pairs(&picked)
            }
        }
    }

    /// Held-out pairs: a separate synthetic stream, or every file segment.
    pub fn validation(&self) -> Result<Vec<Pair>> {
        match self {
            Dataset::Synthetic { cfg, sample_rate } => (0..cfg.val_items)
                .map(|i| synthetic_pair(cfg, *sample_rate, Split::Validation, i as u64))
                .collect(),
            Dataset::Files { pairs, cfg, sample_rate } => {
                let len = Self::segment_len(cfg, *sample_rate);
                let mut rng = item_rng(cfg.seed, Split::Validation, 0);
                pairs
                    .iter()
                    .take(cfg.val_items)
                    .map(|p| fit_segment(p, len, &mut rng))
                    .collect()
            }
        }
    }
}
