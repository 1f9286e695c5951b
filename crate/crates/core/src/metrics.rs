//! SI-SDR and SNR, their improvements over the noisy input, and the
//! negative SI-SDR training loss.

use serde::Serialize;

use crate::autodiff::{Tensor, Var};
use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Floor for both powers of every ratio: a perfect estimate scores about
/// 120 dB instead of infinity, while equal powers still score exactly 0 dB.
pub const EPS_DIV: f64 = 1e-12;

fn check_pair(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::InvalidLength(format!(
            "estimate has {} samples, reference has {}",
            est.len(),
            reference.len()
        )));
    }
    let power: f64 = reference.iter().map(|v| v * v).sum();
    if power == 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok(power)
}

fn db(num: f64, den: f64) -> f64 {
    10.0 * (num.max(EPS_DIV) / den.max(EPS_DIV)).log10()
}

/// SI-SDR in dB of `est` against `reference` over raw sample slices.
pub fn si_sdr_samples(est: &[f64], reference: &[f64]) -> Result<f64> {
    let power = check_pair(est, reference)?;
    let dot: f64 = est.iter().zip(reference).map(|(e, s)| e * s).sum();
    let a = dot / power;
    let (mut target, mut noise) = (0.0, 0.0);
    for (e, s) in est.iter().zip(reference) {
        let t = a * s;
        target += t * t;
        noise += (e - t) * (e - t);
    }
    Ok(db(target, noise))
}

/// SNR in dB of `est` against `reference` over raw sample slices.
pub fn snr_samples(est: &[f64], reference: &[f64]) -> Result<f64> {
    let power = check_pair(est, reference)?;
    let err: f64 = est.iter().zip(reference).map(|(e, s)| (s - e) * (s - e)).sum();
    Ok(db(power, err))
}

pub fn si_sdr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    si_sdr_samples(&est.samples, &reference.samples)
}

pub fn si_sdri(est: &Waveform, reference: &Waveform, noisy: &Waveform) -> Result<f64> {
    Ok(si_sdr(est, reference)? - si_sdr(noisy, reference)?)
}

pub fn snr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    snr_samples(&est.samples, &reference.samples)
}

pub fn snri(est: &Waveform, reference: &Waveform, noisy: &Waveform) -> Result<f64> {
    Ok(snr(est, reference)? - snr(noisy, reference)?)
}

/// Mean over the batch of `-SI-SDR`, differentiable in `est`.
///
/// `est` is `(B, L)` on the tape; `refs` is a constant `(B, L)` batch.
pub fn neg_sisdr_loss<'t>(est: Var<'t>, refs: &Tensor) -> Result<Var<'t>> {
    let s = est.shape();
    if s.len() != 2 || s != refs.shape() {
        return Err(Error::InvalidShape(format!(
            "loss needs matching (B, L) batches, got {s:?} and {:?}",
            refs.shape()
        )));
    }
    let (b, l) = (s[0], s[1]);
    let powers: Vec<f64> = refs
        .data()
        .chunks(l)
        .map(|row| row.iter().map(|v| v * v).sum())
        .collect();
    if powers.contains(&0.0) {
        return Err(Error::DegenerateReference);
    }
    let tape = est.tape();
    let r = tape.constant(refs.clone());
    let inv_power = tape.constant(Tensor::new(&[b, 1], powers.iter().map(|p| 1.0 / p).collect())?);
    let scale = est.mul(r)?.sum(&[1], true)?.mul(inv_power)?;
    let target = r.mul(scale)?;
    let noise = est.sub(target)?;
    let num = target.mul(target)?.sum(&[1], false)?.clamp_min(EPS_DIV)?;
    let den = noise.mul(noise)?.sum(&[1], false)?.clamp_min(EPS_DIV)?;
    let ratio_db = num.ln()?.sub(den.ln()?)?.scale(10.0 / std::f64::consts::LN_10)?;
    ratio_db.mean(&[], false)?.scale(-1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemMetrics {
    pub id: String,
    pub si_sdr: f64,
    pub si_sdri: f64,
    pub snr: f64,
    pub snri: f64,
}

impl ItemMetrics {
    pub fn compute(id: impl Into<String>, est: &Waveform, reference: &Waveform, noisy: &Waveform) -> Result<Self> {
        let si = si_sdr(est, reference)?;
        let sn = snr(est, reference)?;
        Ok(Self {
            id: id.into(),
            si_sdr: si,
            si_sdri: si - si_sdr(noisy, reference)?,
            snr: sn,
            snri: sn - snr(noisy, reference)?,
        })
    }
}

/// Per-item metrics and their unweighted means, all in dB.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub si_sdr: f64,
    pub si_sdri: f64,
    pub snr: f64,
    pub snri: f64,
    pub n_items: usize,
    pub items: Vec<ItemMetrics>,
}

impl MetricsReport {
    pub fn from_items(items: Vec<ItemMetrics>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidLength("metrics report needs at least one item".into()));
        }
        let n = items.len() as f64;
        let mean = |f: fn(&ItemMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            si_sdr: mean(|m| m.si_sdr),
            si_sdri: mean(|m| m.si_sdri),
            snr: mean(|m| m.snr),
            snri: mean(|m| m.snri),
            n_items: items.len(),
            items,
        })
    }

    /// `key = value` lines for the aggregates.
    pub fn to_text(&self) -> String {
        format!(
            "si_sdr = {:.4}\nsi_sdri = {:.4}\nsnr = {:.4}\nsnri = {:.4}\nn_items = {}\n",
            self.si_sdr, self.si_sdri, self.snr, self.snri, self.n_items
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, Tape};
    use crate::dsp::mix_at_snr;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wf(v: &[f64]) -> Waveform {
        Waveform::new(v.to_vec(), 16000).unwrap()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn hand_cases() {
        assert!(si_sdr(&wf(&[1.0, 1.0]), &wf(&[1.0, 0.0])).unwrap().abs() < 1e-12);
        let s = random(100, 1);
        let twice: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert!(si_sdr(&wf(&s), &wf(&s)).unwrap() >= 100.0);
        assert!(si_sdr(&wf(&twice), &wf(&s)).unwrap() >= 100.0);
        assert!(snr(&wf(&s), &wf(&s)).unwrap() >= 100.0);
        assert!(snr(&wf(&twice), &wf(&s)).unwrap().abs() < 1e-9);
    }

    #[test]
    fn equal_power_noise_is_zero_db_snr() {
        let est = wf(&[1.0, 1.0]);
        let s = wf(&[1.0, 0.0]);
        // n = [0, 1], |n|² = |s|²
        assert!(snr(&est, &s).unwrap().abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(si_sdr(&wf(&[1.0]), &wf(&[0.0])), Err(Error::DegenerateReference)));
        assert!(matches!(snr(&wf(&[1.0, 2.0]), &wf(&[1.0])), Err(Error::InvalidLength(_))));
    }

    #[test]
    fn improvements_over_self_are_zero() {
        let s = wf(&random(64, 2));
        let x = wf(&random(64, 3));
        assert_eq!(si_sdri(&x, &s, &x).unwrap(), 0.0);
        assert_eq!(snri(&x, &s, &x).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn si_sdr_ignores_scale(seed in 0u64..1000, c in prop::sample::select(vec![0.1, 3.0, -2.0])) {
            let s = random(256, seed);
            let e = random(256, seed + 7);
            let base = si_sdr_samples(&e, &s).unwrap();
            let scaled: Vec<f64> = e.iter().map(|v| c * v).collect();
            prop_assert!((si_sdr_samples(&scaled, &s).unwrap() - base).abs() < 1e-6);
        }

        #[test]
        fn mixing_snr_is_recovered(seed in 0u64..1000, v in -10.0f64..10.0) {
            let clean = wf(&random(200, seed));
            let noise = wf(&random(200, seed + 1));
            let (noisy, _) = mix_at_snr(&clean, &noise, v).unwrap();
            prop_assert!((snr(&noisy, &clean).unwrap() - v).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_matches_metric_path() {
        for seed in 0..5 {
            let (b, l) = (3, 50);
            let refs = Tensor::new(&[b, l], random(b * l, seed)).unwrap();
            let est = Tensor::new(&[b, l], random(b * l, seed + 100)).unwrap();
            let tape = Tape::new();
            let loss = neg_sisdr_loss(tape.param(est.clone()), &refs).unwrap().value().item().unwrap();
            let mean: f64 = (0..b)
                .map(|i| si_sdr_samples(&est.data()[i * l..(i + 1) * l], &refs.data()[i * l..(i + 1) * l]).unwrap())
                .sum::<f64>()
                / b as f64;
            assert!((loss + mean).abs() < 1e-9);
        }
    }

    #[test]
    fn perfect_estimate_gives_most_negative_loss() {
        let refs = Tensor::new(&[2, 16], random(32, 4)).unwrap();
        let tape = Tape::new();
        let loss = neg_sisdr_loss(tape.param(refs.clone()), &refs).unwrap().value().item().unwrap();
        assert!(loss <= -100.0);
    }

    #[test]
    fn loss_gradient_check() {
        for seed in 0..5 {
            let refs = Tensor::new(&[2, 64], random(128, seed)).unwrap();
            let est = Tensor::new(&[2, 64], random(128, seed + 50)).unwrap();
            let err = finite_diff_check(|_, v| neg_sisdr_loss(v[0], &refs), &[est], 1e-6).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn zero_reference_in_batch_rejected() {
        let mut r = random(32, 5);
        r[16..].fill(0.0);
        let refs = Tensor::new(&[2, 16], r).unwrap();
        let tape = Tape::new();
        let est = tape.param(Tensor::full(&[2, 16], 0.1));
        assert!(matches!(neg_sisdr_loss(est, &refs), Err(Error::DegenerateReference)));
    }

    #[test]
    fn report_aggregates_and_serializes() {
        let s = wf(&random(64, 6));
        let x = wf(&random(64, 7));
        let items = vec![
            ItemMetrics::compute("a", &s, &s, &x).unwrap(),
            ItemMetrics::compute("b", &x, &s, &x).unwrap(),
        ];
        let r = MetricsReport::from_items(items.clone()).unwrap();
        assert_eq!(r.n_items, 2);
        assert!((r.si_sdri - (items[0].si_sdri + items[1].si_sdri) / 2.0).abs() < 1e-12);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for k in ["si_sdr", "si_sdri", "snr", "snri", "n_items"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert!(r.to_text().contains("n_items = 2"));
    }
}
