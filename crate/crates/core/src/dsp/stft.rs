use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::waveform::Waveform;
use crate::autodiff::{CustomOp, Tensor, Var};
use crate::error::{Error, Result};

/// Overlap-add sums below this are treated as uncovered samples.
const WINDOW_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
    pub center: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 512,
            hop: 128,
            window: Window::Hann,
            center: true,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.n_fft % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "n_fft must be even and >= 2, got {}",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.n_fft % self.hop != 0 || self.hop > self.n_fft / 2 {
            return Err(Error::InvalidConfig(format!(
                "hop {} must divide n_fft {} and be at most n_fft/2",
                self.hop, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        if self.center {
            len.div_ceil(self.hop)
        } else if len >= self.n_fft {
            (len - self.n_fft) / self.hop + 1
        } else {
            0
        }
    }

    /// Periodic window of length `n_fft`.
    pub fn window_coefficients(&self) -> Vec<f64> {
        let n = self.n_fft as f64;
        match self.window {
            Window::Hann => (0..self.n_fft)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos())
                .collect(),
        }
    }

    fn pad(&self) -> usize {
        if self.center {
            self.n_fft / 2
        } else {
            0
        }
    }
}

/// One-sided complex spectrogram, `(F, T, 2)` row-major with `(re, im)` last.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpec {
    pub data: Vec<f64>,
    pub n_bins: usize,
    pub n_frames: usize,
    pub sample_rate: u32,
    pub config: StftConfig,
}

impl ComplexSpec {
    pub fn bin(&self, f: usize, t: usize) -> (f64, f64) {
        let i = (f * self.n_frames + t) * 2;
        (self.data[i], self.data[i + 1])
    }

    pub fn magnitude(&self, f: usize, t: usize) -> f64 {
        let (re, im) = self.bin(f, t);
        re.hypot(im)
    }

    /// Frequency bin with the largest magnitude in frame `t`.
    pub fn peak_bin(&self, t: usize) -> usize {
        (0..self.n_bins)
            .max_by(|&a, &b| self.magnitude(a, t).total_cmp(&self.magnitude(b, t)))
            .unwrap_or(0)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.n_bins, self.n_frames, 2], self.data.clone())
            .expect("spectrogram dimensions are positive")
    }

    pub fn from_tensor(t: &Tensor, sample_rate: u32, config: StftConfig) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[2] != 2 || s[0] != config.n_bins() {
            return Err(Error::InvalidConfig(format!(
                "tensor {s:?} is not a ({}, T, 2) spectrogram",
                config.n_bins()
            )));
        }
        Ok(Self {
            data: t.data().to_vec(),
            n_bins: s[0],
            n_frames: s[1],
            sample_rate,
            config,
        })
    }

    fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `a·self + b·other`, for linearity checks and mixing in the
    /// time-frequency domain.
    pub fn combine(&self, a: f64, other: &ComplexSpec, b: f64) -> Result<Self> {
        if self.n_bins != other.n_bins || self.n_frames != other.n_frames {
            return Err(Error::InvalidConfig("spectrogram sizes differ".into()));
        }
        let mut out = self.scaled(a);
        for (o, v) in out.data.iter_mut().zip(&other.data) {
            *o += b * v;
        }
        Ok(out)
    }
}

/// Cached FFT plans and window for one [`StftConfig`].
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: config.window_coefficients(),
            forward: planner.plan_fft_forward(config.n_fft),
            inverse: planner.plan_fft_inverse(config.n_fft),
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// Analysis with reflect padding when `center` is set.
    pub fn analyze(&self, w: &Waveform) -> Result<ComplexSpec> {
        let cfg = &self.config;
        let n = cfg.n_fft;
        let len = w.len();
        let padded: Vec<f64> = if cfg.center {
            let p = n / 2;
            if len <= p {
                return Err(Error::InvalidLength(format!(
                    "centered STFT needs more than {p} samples, got {len}"
                )));
            }
            let x = &w.samples;
            let mut v = Vec::with_capacity(len + 2 * p);
            v.extend((1..=p).rev().map(|i| x[i]));
            v.extend_from_slice(x);
            v.extend((1..=p).map(|i| x[len - 1 - i]));
            v
        } else {
            if len < n {
                return Err(Error::InvalidLength(format!(
                    "STFT needs at least n_fft={n} samples, got {len}"
                )));
            }
            w.samples.clone()
        };
        let frames = cfg.n_frames(len);
        let bins = cfg.n_bins();
        let mut data = vec![0.0; bins * frames * 2];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            let seg = &padded[t * cfg.hop..t * cfg.hop + n];
            for ((b, &s), &wv) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex64::new(s * wv, 0.0);
            }
            self.forward.process(&mut buf);
            for (f, c) in buf[..bins].iter().enumerate() {
                let i = (f * frames + t) * 2;
                data[i] = c.re;
                data[i + 1] = c.im;
            }
        }
        Ok(ComplexSpec {
            data,
            n_bins: bins,
            n_frames: frames,
            sample_rate: w.sample_rate,
            config: *cfg,
        })
    }

    fn padded_len(&self, frames: usize) -> usize {
        self.config.hop * frames.saturating_sub(1) + self.config.n_fft
    }

    /// Largest `out_len` that `synthesize` accepts for `frames` frames.
    pub fn max_output_len(&self, frames: usize) -> usize {
        self.padded_len(frames) - self.config.pad()
    }

    fn check_out_len(&self, frames: usize, out_len: usize) -> Result<()> {
        if out_len == 0 || out_len > self.max_output_len(frames) {
            return Err(Error::InvalidLength(format!(
                "output length {out_len} not reachable from {frames} frames (max {})",
                self.max_output_len(frames)
            )));
        }
        Ok(())
    }

    /// Squared-window overlap-add normalizer over the padded timeline.
    fn window_sum(&self, frames: usize) -> Vec<f64> {
        let mut ws = vec![0.0; self.padded_len(frames)];
        for t in 0..frames {
            for (k, wv) in self.window.iter().enumerate() {
                ws[t * self.config.hop + k] += wv * wv;
            }
        }
        ws
    }

    /// Inverse of a flat `(F, T, 2)` buffer into `out_len` samples.
    fn synthesize_raw(&self, spec: &[f64], frames: usize, out_len: usize) -> Vec<f64> {
        let cfg = &self.config;
        let n = cfg.n_fft;
        let bins = cfg.n_bins();
        let mut acc = vec![0.0; self.padded_len(frames)];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            for f in 0..bins {
                let i = (f * frames + t) * 2;
                buf[f] = Complex64::new(spec[i], spec[i + 1]);
            }
            // Hermitian completion; imaginary parts at DC and Nyquist drop out
            // of the real part of the inverse.
            for f in 1..n / 2 {
                buf[n - f] = buf[f].conj();
            }
            self.inverse.process(&mut buf);
            let scale = 1.0 / n as f64;
            for (k, (b, wv)) in buf.iter().zip(&self.window).enumerate() {
                acc[t * cfg.hop + k] += b.re * scale * wv;
            }
        }
        let ws = self.window_sum(frames);
        let start = cfg.pad();
        (start..start + out_len)
            .map(|i| if ws[i] > WINDOW_FLOOR { acc[i] / ws[i] } else { 0.0 })
            .collect()
    }

    /// Adjoint of [`Self::synthesize_raw`] with respect to the spectrum.
    fn synthesize_adjoint(&self, grad: &[f64], frames: usize) -> Vec<f64> {
        let cfg = &self.config;
        let n = cfg.n_fft;
        let bins = cfg.n_bins();
        let ws = self.window_sum(frames);
        let start = cfg.pad();
        let mut gpad = vec![0.0; ws.len()];
        for (i, g) in grad.iter().enumerate() {
            let j = start + i;
            if ws[j] > WINDOW_FLOOR {
                gpad[j] = g / ws[j];
            }
        }
        let mut out = vec![0.0; bins * frames * 2];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            for (k, (b, wv)) in buf.iter_mut().zip(&self.window).enumerate() {
                *b = Complex64::new(gpad[t * cfg.hop + k] * wv, 0.0);
            }
            self.forward.process(&mut buf);
            for f in 0..bins {
                let edge = f == 0 || f == n / 2;
                let c = if edge { 1.0 } else { 2.0 } / n as f64;
                let i = (f * frames + t) * 2;
                out[i] = c * buf[f].re;
                out[i + 1] = if edge { 0.0 } else { c * buf[f].im };
            }
        }
        out
    }

    pub fn synthesize(&self, spec: &ComplexSpec, out_len: usize) -> Result<Waveform> {
        if spec.config != self.config || spec.n_bins != self.config.n_bins() {
            return Err(Error::InvalidConfig(
                "spectrogram was produced with a different STFT configuration".into(),
            ));
        }
        self.check_out_len(spec.n_frames, out_len)?;
        let samples = self.synthesize_raw(&spec.data, spec.n_frames, out_len);
        Ok(Waveform {
            samples,
            sample_rate: spec.sample_rate,
        })
    }

    /// Differentiable inverse for a batch of spectrograms shaped `(B, F, T, 2)`;
    /// returns `(B, out_len)`.
    pub fn synthesize_var<'t>(&self, spec: Var<'t>, out_len: usize) -> Result<Var<'t>> {
        let shape = spec.shape();
        if shape.len() != 4 || shape[1] != self.config.n_bins() || shape[3] != 2 {
            return Err(Error::InvalidShape(format!(
                "expected (B, {}, T, 2) spectrogram, got {shape:?}",
                self.config.n_bins()
            )));
        }
        let (batch, frames) = (shape[0], shape[2]);
        self.check_out_len(frames, out_len)?;
        let value = spec.value();
        let per_item = shape[1] * frames * 2;
        let mut out = Vec::with_capacity(batch * out_len);
        for b in 0..batch {
            out.extend(self.synthesize_raw(
                &value.data()[b * per_item..(b + 1) * per_item],
                frames,
                out_len,
            ));
        }
        let op = IstftOp {
            stft: self.clone(),
            frames,
        };
        spec.tape()
            .custom(&[spec], Tensor::new(&[batch, out_len], out)?, Box::new(op))
    }
}

struct IstftOp {
    stft: Stft,
    frames: usize,
}

impl CustomOp for IstftOp {
    fn name(&self) -> &str {
        "istft"
    }

    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _output: &Tensor) -> Vec<Tensor> {
        let shape = inputs[0].shape();
        let out_len = grad.shape()[1];
        let mut d = Vec::with_capacity(inputs[0].len());
        for g in grad.data().chunks(out_len) {
            d.extend(self.stft.synthesize_adjoint(g, self.frames));
        }
        vec![Tensor::new(shape, d).expect("adjoint matches input shape")]
    }
}

/// One-shot analysis.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpec> {
    Stft::new(*cfg)?.analyze(w)
}

/// One-shot synthesis.
pub fn istft(spec: &ComplexSpec, cfg: &StftConfig, out_len: usize) -> Result<Waveform> {
    Stft::new(*cfg)?.synthesize(spec, out_len)
}
