//! Per-layer FLOPs of the default model for two seconds of 16 kHz audio.

use biosen::model::{count_flops, ModelConfig};

fn main() -> biosen::Result<()> {
    let cfg = ModelConfig::default();
    let frames = cfg.stft.n_frames(2 * cfg.sample_rate as usize);
    let report = count_flops(&cfg, (cfg.stft.n_bins(), frames))?;
    print!("{}", report.to_table());
    println!("{}", report.convention);
    println!("{:.3} GFLOPs for {frames} frames", report.total as f64 / 1e9);
    Ok(())
}
