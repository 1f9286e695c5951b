use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayPolicy {
    /// Decay after `plateau_patience` evaluations without a new best
    /// validation loss.
    Plateau,
    /// Decay after every `decay_every` evaluations.
    EveryNEpochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    PairedDirs,
}

/// Training schedule and data source; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub lr_floor: f64,
    pub decay_policy: DecayPolicy,
    pub plateau_patience: usize,
    pub decay_every: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Held-out items used for validation.
    pub val_items: usize,
    pub seed: u64,
    pub segment_seconds: f64,
    pub snr_range_db: (f64, f64),
    pub dataset: DatasetKind,
    pub noisy_dir: Option<PathBuf>,
    pub clean_dir: Option<PathBuf>,
    /// Fundamental range of synthetic calls, Hz.
    pub f0_min: f64,
    pub f0_max: f64,
    pub max_harmonics: usize,
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            decay: 0.7,
            lr_floor: 1e-6,
            decay_policy: DecayPolicy::Plateau,
            plateau_patience: 2,
            decay_every: 1,
            batch_size: 16,
            max_steps: 1000,
            eval_every: 50,
            val_items: 16,
            seed: 0,
            segment_seconds: 2.0,
            snr_range_db: (-10.0, -5.0),
            dataset: DatasetKind::Synthetic,
            noisy_dir: None,
            clean_dir: None,
            f0_min: 800.0,
            f0_max: 2000.0,
            max_harmonics: 3,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr0 > 0.0) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad(format!("decay must lie in (0, 1), got {}", self.decay));
        }
        if !(self.lr_floor >= 0.0) {
            return bad("lr_floor must be nonnegative".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 || self.val_items == 0 {
            return bad("eval_every and val_items must be positive".into());
        }
        if self.plateau_patience == 0 || self.decay_every == 0 {
            return bad("plateau_patience and decay_every must be positive".into());
        }
        if !(self.segment_seconds > 0.0) {
            return bad("segment_seconds must be positive".into());
        }
        let (lo, hi) = self.snr_range_db;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return bad(format!("snr_range_db ({lo}, {hi}) is not an interval"));
        }
        if !(self.f0_min > 0.0 && self.f0_min <= self.f0_max) || self.max_harmonics == 0 {
            return bad("synthetic call ranges are empty".into());
        }
        if self.dataset == DatasetKind::PairedDirs && (self.noisy_dir.is_none() || self.clean_dir.is_none()) {
            return bad("paired_dirs needs noisy_dir and clean_dir".into());
        }
        Ok(())
    }
}
