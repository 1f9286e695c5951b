//! Analysis/synthesis round trip of the default STFT on one second of noise.

use biosen::dsp::{istft, stft, synth_noise, NoiseKind, StftConfig};

fn main() -> biosen::Result<()> {
    let cfg = StftConfig::default();
    let w = synth_noise(NoiseKind::White, 16000, 1.0, 3)?;
    let spec = stft(&w, &cfg)?;
    let back = istft(&spec, &cfg, w.len())?;
    let err: f64 = w.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = w.samples.iter().map(|a| a * a).sum::<f64>().sqrt();
    println!("n_fft {} hop {} -> {} bins x {} frames", cfg.n_fft, cfg.hop, spec.n_bins, spec.n_frames);
    println!("relative L2 reconstruction error: {:.3e}", err / norm);
    Ok(())
}
