//! Synthesizes a rising harmonic call and each noise type, mixes them at
//! −7.5 dB and writes the results as WAV files.
//!
//! ```text
//! cargo run --release --example synth_mix -- [out_dir]
//! ```

use biosen::dsp::{mix_at_snr, synth_chirp, synth_noise, write_wav, ChirpParams, NoiseKind, WavFormat};
use biosen::metrics::snr;

fn main() -> biosen::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synth_out".into()));
    std::fs::create_dir_all(&out).map_err(|e| biosen::Error::io(&out, e))?;

    let call = ChirpParams { duration: 1.0, ..ChirpParams::default() };
    let clean = synth_chirp(&call)?;
    println!("call: f0 {:.0} -> {:.0} Hz, {} harmonics", call.f0_at(0.0), call.f0_at(call.duration), call.n_harmonics);
    write_wav(out.join("clean.wav"), &clean, WavFormat::Float32)?;

    for (i, kind) in NoiseKind::ALL.into_iter().enumerate() {
        let noise = synth_noise(kind, clean.sample_rate, call.duration, 100 + i as u64)?;
        let (noisy, gain) = mix_at_snr(&clean, &noise, -7.5)?;
        let name = format!("noisy_{kind:?}.wav").to_lowercase();
        write_wav(out.join(&name), &noisy, WavFormat::Float32)?;
        println!("{name:<26} gain {gain:.3}  measured SNR {:.3} dB", snr(&noisy, &clean)?);
    }
    println!("wrote files under {}", out.display());
    Ok(())
}
