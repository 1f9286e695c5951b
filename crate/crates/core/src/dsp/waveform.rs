use crate::error::{Error, Result};

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidLength("waveform must hold at least one sample".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateSignal("waveform contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    /// Scales so that the largest absolute sample equals `peak`.
    /// Silent signals are returned unchanged.
    pub fn peak_normalize(&mut self, peak: f64) {
        let m = self.samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m > 0.0 {
            let g = peak / m;
            self.samples.iter_mut().for_each(|v| *v *= g);
        }
    }
}

pub(crate) fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Adds `gain * noise` to `clean` so that `10 log10(|clean|² / |gain·noise|²)`
/// equals `snr_db`.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<(Waveform, f64)> {
    if clean.len() != noise.len() {
        return Err(Error::InvalidLength(format!(
            "clean has {} samples, noise has {}",
            clean.len(),
            noise.len()
        )));
    }
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::InvalidConfig(format!(
            "sample rates differ: {} vs {}",
            clean.sample_rate, noise.sample_rate
        )));
    }
    let es = clean.energy();
    let en = noise.energy();
    if es == 0.0 {
        return Err(Error::DegenerateSignal("clean signal has zero power".into()));
    }
    if en == 0.0 {
        return Err(Error::DegenerateSignal("noise signal has zero power".into()));
    }
    let gain = (es / (en * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = clean
        .samples
        .iter()
        .zip(&noise.samples)
        .map(|(s, n)| s + gain * n)
        .collect();
    Ok((
        Waveform {
            samples,
            sample_rate: clean.sample_rate,
        },
        gain,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wf(v: &[f64]) -> Waveform {
        Waveform::new(v.to_vec(), 16000).unwrap()
    }

    #[test]
    fn equal_power_at_zero_db_gives_unit_gain() {
        let s = wf(&[1.0, -1.0, 0.5, 0.5]);
        let n = wf(&[0.5, 0.5, -1.0, 1.0]);
        let (_, g) = mix_at_snr(&s, &n, 0.0).unwrap();
        assert!((g - 1.0).abs() < 1e-15);
    }

    #[test]
    fn minus_ten_db_scales_noise_to_ten_times_power() {
        let s = wf(&[0.3, -0.2, 0.1, 0.4, -0.5]);
        let n = wf(&[0.1, 0.1, -0.3, 0.2, 0.05]);
        let (mix, g) = mix_at_snr(&s, &n, -10.0).unwrap();
        let scaled: f64 = n.samples.iter().map(|v| (g * v).powi(2)).sum();
        assert!((scaled / s.energy() - 10.0).abs() < 1e-12);
        let resid: Vec<f64> = mix.samples.iter().zip(&s.samples).map(|(m, c)| m - c).collect();
        let measured = 10.0 * (s.energy() / energy(&resid)).log10();
        assert!((measured + 10.0).abs() < 1e-9);
    }

    #[test]
    fn zero_clean_is_degenerate() {
        let s = wf(&[0.0, 0.0, 0.0]);
        let n = wf(&[0.1, 0.2, 0.3]);
        assert!(matches!(mix_at_snr(&s, &n, 0.0), Err(Error::DegenerateSignal(_))));
        assert!(matches!(mix_at_snr(&n, &s, 0.0), Err(Error::DegenerateSignal(_))));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let s = wf(&[0.1, 0.2]);
        let n = wf(&[0.1, 0.2, 0.3]);
        assert!(matches!(mix_at_snr(&s, &n, 0.0), Err(Error::InvalidLength(_))));
    }
}
