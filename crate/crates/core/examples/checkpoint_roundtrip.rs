//! Saves a freshly built model, loads it back and checks that enhancement is
//! bitwise identical; then enhances a synthetic noisy call.

use biosen::dsp::{mix_at_snr, synth_chirp, synth_noise, ChirpParams, NoiseKind};
use biosen::metrics::si_sdri;
use biosen::model::{build_model, load_checkpoint, save_checkpoint, ModelConfig};

fn main() -> biosen::Result<()> {
    let model = build_model(&ModelConfig::default())?;
    let dir = std::env::temp_dir().join("biosen_checkpoint_example");
    std::fs::create_dir_all(&dir).map_err(|e| biosen::Error::io(&dir, e))?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&model, &path)?;
    let size = std::fs::metadata(&path).map_err(|e| biosen::Error::io(&path, e))?.len();
    println!("saved {} ({} bytes, {} parameters)", path.display(), size, model.params().n_scalars());

    let clean = synth_chirp(&ChirpParams { duration: 0.5, ..ChirpParams::default() })?;
    let noise = synth_noise(NoiseKind::Pink, clean.sample_rate, 0.5, 4)?;
    let (noisy, _) = mix_at_snr(&clean, &noise, -7.0)?;

    let loaded = load_checkpoint(&path)?;
    let a = model.enhance(&noisy)?;
    let b = loaded.enhance(&noisy)?;
    println!("outputs bitwise identical: {}", a.samples == b.samples);
    println!("untrained SI-SDRi: {:.2} dB", si_sdri(&a, &clean, &noisy)?);
    Ok(())
}
