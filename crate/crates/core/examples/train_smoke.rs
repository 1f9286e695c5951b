//! Trains the default model on synthetic chirp+noise pairs and scores it on
//! held-out one-second clips.
//!
//! ```text
//! cargo run --release --example train_smoke -- [steps] [segment_seconds]
//! ```

use std::time::Instant;

use biosen::model::{build_model, ModelConfig};
use biosen::train::{evaluate, evaluate_with, train_model, Dataset, TrainConfig};

fn main() -> biosen::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(500, |s| s.parse().expect("steps"));
    let segment: f64 = args.next().map_or(0.064, |s| s.parse().expect("segment seconds"));

    let model_cfg = ModelConfig::default();
    let train_cfg = TrainConfig {
        max_steps: steps,
        eval_every: 100,
        segment_seconds: segment,
        ..TrainConfig::default()
    };
    let held_out = Dataset::from_config(
        &TrainConfig { segment_seconds: 1.0, seed: 1, ..train_cfg.clone() },
        model_cfg.sample_rate,
    )?
    .validation()?;

    let start = Instant::now();
    let (model, _) = train_model(build_model(&model_cfg)?, &train_cfg, |r| {
        println!(
            "[{:>7.1}s] step {:>4}  loss {:>8.3}  val SI-SDRi {:>7.3} dB  lr {:.2e}",
            start.elapsed().as_secs_f64(),
            r.step,
            r.train_loss,
            r.val_si_sdri,
            r.lr
        );
    })?;
    let noisy = evaluate_with(&held_out, |p| Ok(p.noisy.clone()))?;
    let report = evaluate(&model, &held_out)?;
    println!("noisy input:   SI-SDR {:.2} dB  SNR {:.2} dB", noisy.si_sdr, noisy.snr);
    println!("enhanced:      SI-SDR {:.2} dB  SNR {:.2} dB", report.si_sdr, report.snr);
    println!("improvement:   SI-SDRi {:.2} dB  SNRi {:.2} dB", report.si_sdri, report.snri);
    println!("total time {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
