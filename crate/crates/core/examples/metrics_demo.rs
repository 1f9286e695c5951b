//! SI-SDR, SNR and their improvements on hand-built signals, including a
//! pair constructed to land on the 11.27 dB / 13.54 dB improvements reported
//! for the full BioSEN model.

use biosen::dsp::Waveform;
use biosen::metrics::{si_sdr, si_sdri, snr, snri};

/// `reference + e` with `e ⟂ reference` scaled so both metrics equal `db`.
fn at_level(reference: &Waveform, orth: &[f64], db: f64) -> biosen::Result<Waveform> {
    let ps: f64 = reference.samples.iter().map(|v| v * v).sum();
    let pe: f64 = orth.iter().map(|v| v * v).sum();
    let g = (ps / pe / 10f64.powf(db / 10.0)).sqrt();
    Waveform::new(reference.samples.iter().zip(orth).map(|(s, e)| s + g * e).collect(), reference.sample_rate)
}

fn main() -> biosen::Result<()> {
    let s = Waveform::new(vec![1.0, 0.0], 16000)?;
    let e = Waveform::new(vec![1.0, 1.0], 16000)?;
    println!("s = [1, 0], est = [1, 1]: SI-SDR = {:.3e} dB", si_sdr(&e, &s)?);
    let scaled = Waveform::new(e.samples.iter().map(|v| -2.0 * v).collect(), 16000)?;
    println!("scaled by -2: SI-SDR = {:.3e} dB", si_sdr(&scaled, &s)?);

    let n = 4096;
    let reference = Waveform::new((0..n).map(|i| (i as f64 * 0.05).sin()).collect(), 16000)?;
    let raw: Vec<f64> = (0..n).map(|i| ((i * 7919) % 211) as f64 / 105.0 - 1.0).collect();
    let proj = raw.iter().zip(&reference.samples).map(|(a, b)| a * b).sum::<f64>()
        / reference.samples.iter().map(|v| v * v).sum::<f64>();
    let orth: Vec<f64> = raw.iter().zip(&reference.samples).map(|(a, b)| a - proj * b).collect();

    let noisy_sisdr = at_level(&reference, &orth, -7.80)?;
    let est_sisdr = at_level(&reference, &orth, 3.47)?;
    println!(
        "SI-SDR {:.2} -> {:.2} dB: SI-SDRi = {:.2} dB",
        si_sdr(&noisy_sisdr, &reference)?,
        si_sdr(&est_sisdr, &reference)?,
        si_sdri(&est_sisdr, &reference, &noisy_sisdr)?
    );
    let noisy_snr = at_level(&reference, &orth, -7.81)?;
    let est_snr = at_level(&reference, &orth, 5.73)?;
    println!(
        "SNR {:.2} -> {:.2} dB: SNRi = {:.2} dB",
        snr(&noisy_snr, &reference)?,
        snr(&est_snr, &reference)?,
        snri(&est_snr, &reference, &noisy_snr)?
    );
    Ok(())
}
