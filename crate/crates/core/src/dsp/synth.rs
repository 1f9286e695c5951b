//! Synthetic vocalizations and field-noise models.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::waveform::Waveform;
use crate::error::{Error, Result};

/// Peak level of every synthesized signal.
pub const SYNTH_PEAK: f64 = 0.9;

/// Fade length at burst edges, in seconds.
const BURST_FADE_SECS: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Envelope {
    Constant,
    /// On for `duty * period` seconds at the start of every `period`.
    OnOffBursts { period: f64, duty: f64 },
}

impl Envelope {
    fn gain(&self, t: f64) -> f64 {
        match *self {
            Envelope::Constant => 1.0,
            Envelope::OnOffBursts { period, duty } => {
                let on = duty * period;
                let phase = t.rem_euclid(period);
                if phase >= on {
                    return 0.0;
                }
                let fade = BURST_FADE_SECS.min(on / 2.0);
                let edge = phase.min(on - phase);
                if edge < fade {
                    0.5 - 0.5 * (PI * edge / fade).cos()
                } else {
                    1.0
                }
            }
        }
    }
}

/// Harmonic chirp with a linear fundamental ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpParams {
    pub sample_rate: u32,
    pub duration: f64,
    pub f0_start: f64,
    pub f0_end: f64,
    pub n_harmonics: usize,
    /// Amplitude ratio between consecutive harmonics.
    pub harmonic_decay: f64,
    pub envelope: Envelope,
}

impl Default for ChirpParams {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            duration: 1.0,
            f0_start: 1000.0,
            f0_end: 1500.0,
            n_harmonics: 3,
            harmonic_decay: 0.5,
            envelope: Envelope::OnOffBursts {
                period: 0.25,
                duty: 0.6,
            },
        }
    }
}

impl ChirpParams {
    /// Analytic fundamental at time `t` seconds.
    pub fn f0_at(&self, t: f64) -> f64 {
        self.f0_start + (self.f0_end - self.f0_start) * t / self.duration
    }
}

fn sample_count(sr: u32, duration: f64) -> Result<usize> {
    if !(duration > 0.0) || sr == 0 {
        return Err(Error::InvalidLength(format!(
            "duration {duration}s at {sr} Hz yields no samples"
        )));
    }
    let n = (duration * sr as f64).round() as usize;
    if n == 0 {
        return Err(Error::InvalidLength(format!(
            "duration {duration}s at {sr} Hz yields no samples"
        )));
    }
    Ok(n)
}

/// Sum of harmonics `h = 1..=n` with amplitude `decay^(h-1)` riding the
/// integrated f0 ramp, gated by the envelope and peak-normalized.
pub fn synth_chirp(p: &ChirpParams) -> Result<Waveform> {
    let nyquist = p.sample_rate as f64 / 2.0;
    let top = p.f0_start.max(p.f0_end) * p.n_harmonics as f64;
    if p.n_harmonics == 0 || p.f0_start <= 0.0 || p.f0_end <= 0.0 {
        return Err(Error::InvalidFrequency(
            "need at least one harmonic and positive fundamentals".into(),
        ));
    }
    if top >= nyquist {
        return Err(Error::InvalidFrequency(format!(
            "harmonic {} reaches {top} Hz, at or above Nyquist {nyquist} Hz",
            p.n_harmonics
        )));
    }
    let n = sample_count(p.sample_rate, p.duration)?;
    let sr = p.sample_rate as f64;
    let slope = (p.f0_end - p.f0_start) / p.duration;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let phase = p.f0_start * t + 0.5 * slope * t * t;
            let mut s = 0.0;
            let mut amp = 1.0;
            for h in 1..=p.n_harmonics {
                s += amp * (2.0 * PI * h as f64 * phase).sin();
                amp *= p.harmonic_decay;
            }
            s * p.envelope.gain(t)
        })
        .collect();
    let mut w = Waveform::new(samples, p.sample_rate)?;
    w.peak_normalize(SYNTH_PEAK);
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    RainImpulses,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::RainImpulses];
}

/// Mean drop rate of the rain model, per second.
const RAIN_RATE: f64 = 40.0;
/// Level of the white bed under the rain drops relative to a unit drop.
const RAIN_BED: f64 = 0.02;

pub fn synth_noise(kind: NoiseKind, sample_rate: u32, duration: f64, seed: u64) -> Result<Waveform> {
    let n = sample_count(sample_rate, duration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let samples: Vec<f64> = match kind {
        NoiseKind::White => (0..n).map(|_| normal.sample(&mut rng)).collect(),
        NoiseKind::Pink => {
            // Kellet's refined 1/f filter bank.
            let mut b = [0.0f64; 7];
            (0..n)
                .map(|_| {
                    let w = normal.sample(&mut rng);
                    b[0] = 0.99886 * b[0] + w * 0.0555179;
                    b[1] = 0.99332 * b[1] + w * 0.0750759;
                    b[2] = 0.96900 * b[2] + w * 0.1538520;
                    b[3] = 0.86650 * b[3] + w * 0.3104856;
                    b[4] = 0.55000 * b[4] + w * 0.5329522;
                    b[5] = -0.7616 * b[5] - w * 0.0168980;
                    let out = b.iter().sum::<f64>() + w * 0.5362;
                    b[6] = w * 0.115926;
                    out
                })
                .collect()
        }
        NoiseKind::RainImpulses => {
            let sr = sample_rate as f64;
            let mut x: Vec<f64> = (0..n).map(|_| RAIN_BED * normal.sample(&mut rng)).collect();
            let gaps = Exp::new(RAIN_RATE).expect("positive rate");
            let mut t = gaps.sample(&mut rng);
            while ((t * sr) as usize) < n {
                let start = (t * sr) as usize;
                let amp = rng.random_range(0.2..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let tau = rng.random_range(0.001..0.004) * sr;
                let len = ((5.0 * tau) as usize).max(1);
                for k in 0..len.min(n - start) {
                    x[start + k] += amp * (-(k as f64) / tau).exp() * normal.sample(&mut rng);
                }
                t += gaps.sample(&mut rng);
            }
            x
        }
    };
    let mut w = Waveform::new(samples, sample_rate)?;
    w.peak_normalize(SYNTH_PEAK);
    Ok(w)
}
