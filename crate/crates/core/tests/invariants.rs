use biosen::autodiff::{Tape, Tensor};
use biosen::dsp::{istft, mix_at_snr, read_wav, stft, write_wav, StftConfig, WavFormat, Waveform};
use biosen::metrics::{si_sdr, snr};
use biosen::model::{count_flops, LayerKind, ModelConfig};
use proptest::prelude::*;

fn wave(v: Vec<f64>) -> Waveform {
    Waveform::new(v, 16000).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stft_round_trip_any_length(samples in prop::collection::vec(-1.0f64..1.0, 33..800)) {
        let cfg = StftConfig { n_fft: 64, hop: 16, ..Default::default() };
        let w = wave(samples);
        let back = istft(&stft(&w, &cfg).unwrap(), &cfg, w.len()).unwrap();
        let err: f64 = back.samples.iter().zip(&w.samples).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-10 * w.energy().sqrt().max(1e-300));
    }

    #[test]
    fn mixing_hits_requested_snr(
        clean in prop::collection::vec(-1.0f64..1.0, 64..256),
        seed in 0u64..1000,
        snr_db in -20.0f64..20.0,
    ) {
        prop_assume!(clean.iter().any(|v| v.abs() > 1e-3));
        let n = clean.len();
        let noise: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1009) as f64 / 504.5 - 1.0).collect();
        let clean = wave(clean);
        let (mix, _) = mix_at_snr(&clean, &wave(noise), snr_db).unwrap();
        prop_assert!((snr(&mix, &clean).unwrap() - snr_db).abs() < 1e-9);
    }

    #[test]
    fn si_sdr_ignores_gain(
        pair in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16..128),
        gain in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
    ) {
        let (s, e): (Vec<f64>, Vec<f64>) = pair.into_iter().unzip();
        let s = wave(s);
        let est = wave(s.samples.iter().zip(&e).map(|(a, b)| a + 0.5 * b).collect());
        let scaled = wave(est.samples.iter().map(|v| v * gain).collect());
        let a = si_sdr(&est, &s).unwrap();
        prop_assume!(a.abs() < 60.0);
        prop_assert!((si_sdr(&scaled, &s).unwrap() - a).abs() < 1e-6);
    }

    #[test]
    fn permute_then_inverse_is_identity(data in prop::collection::vec(-10.0f64..10.0, 24)) {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2, 3, 4], data.clone()).unwrap());
        let y = x.permute(&[2, 0, 1]).unwrap().permute(&[1, 2, 0]).unwrap();
        prop_assert_eq!(y.value().data().to_vec(), data);
    }

    #[test]
    fn float_wav_round_trip_is_bitwise(samples in prop::collection::vec(-1.0f32..1.0, 1..200)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let w = wave(samples.iter().map(|&v| v as f64).collect());
        write_wav(&path, &w, WavFormat::Float32).unwrap();
        prop_assert_eq!(read_wav(&path).unwrap(), w);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn conv_flops_linear_in_frames(frames in 1usize..400, depth in 1usize..4) {
        let cfg = ModelConfig { encoder_channels: [8, 16, 32][..depth].to_vec(), ..ModelConfig::default() };
        let f = cfg.stft.n_bins();
        let one = count_flops(&cfg, (f, frames)).unwrap();
        let two = count_flops(&cfg, (f, 2 * frames)).unwrap();
        for (a, b) in one.layers.iter().zip(&two.layers) {
            if a.kind == LayerKind::Conv {
                prop_assert_eq!(2 * a.flops, b.flops, "{}", a.name);
            } else {
                prop_assert!(b.flops > a.flops, "{}", a.name);
            }
        }
    }
}
