mod common;

use biosen::model::{build_model, load_checkpoint, save_checkpoint, ModelConfig, OutputHead};
use biosen::train::{evaluate, evaluate_with, loss_and_grads, synthetic_pair, PairedBatch, Split, TrainConfig};
use common::{tiny_model, tiny_train};

fn pairs(cfg: &TrainConfig, n: u64) -> Vec<biosen::train::Pair> {
    (0..n).map(|i| synthetic_pair(cfg, 16000, Split::Train, i).unwrap()).collect()
}

#[test]
fn every_parameter_receives_gradient() {
    let data = TrainConfig { segment_seconds: 0.05, ..tiny_train() };
    for head in [OutputHead::Mask, OutputHead::Direct] {
        let mut model = build_model(&ModelConfig { output_head: head, ..ModelConfig::default() }).unwrap();
        // the harmonic branches are inert while alpha_b is zero
        model.params_mut().get_mut("bottleneck.alpha_b").unwrap().data_mut()[0] = 0.1;
        let batch = PairedBatch::from_pairs(&pairs(&data, 2)).unwrap();
        let (loss, grads) = loss_and_grads(&model, &batch).unwrap();
        assert!(loss.is_finite());
        assert_eq!(grads.len(), model.params().len());
        for (name, g) in &grads {
            assert!(g.is_finite(), "{head:?} {name}");
            assert!(g.data().iter().any(|v| *v != 0.0), "{head:?}: no gradient reaches {name}");
        }
    }
}

#[test]
fn enhance_keeps_length_and_stays_finite() {
    let model = build_model(&tiny_model(OutputHead::default())).unwrap();
    for len in [33usize, 48, 333, 1600] {
        let cfg = TrainConfig { segment_seconds: len as f64 / 16000.0, ..tiny_train() };
        let p = synthetic_pair(&cfg, 16000, Split::Validation, 0).unwrap();
        let y = model.enhance(&p.noisy).unwrap();
        assert_eq!(y.len(), p.noisy.len());
        assert!(y.samples.iter().all(|v| v.is_finite()));
    }
    let short = biosen::dsp::Waveform::new(vec![0.1; 32], 16000).unwrap();
    assert!(matches!(model.enhance(&short), Err(biosen::Error::InvalidLength(_))));
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = build_model(&tiny_model(OutputHead::Direct)).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config(), model.config());
    let p = &pairs(&tiny_train(), 1)[0];
    let (a, b) = (model.enhance(&p.noisy).unwrap(), back.enhance(&p.noisy).unwrap());
    assert!(a.samples.iter().zip(&b.samples).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn passthrough_scores_the_mixing_snr() {
    for snr_db in [-10.0, -7.5, 0.0, 6.0] {
        let cfg = TrainConfig {
            snr_range_db: (snr_db, snr_db),
            segment_seconds: 0.5,
            ..tiny_train()
        };
        let r = evaluate_with(&pairs(&cfg, 3), |p| Ok(p.noisy.clone())).unwrap();
        assert!((r.snr - snr_db).abs() < 1e-9, "{} vs {snr_db}", r.snr);
        assert_eq!((r.snri, r.si_sdri), (0.0, 0.0));
    }
}

#[test]
fn evaluate_reports_every_item() {
    let model = build_model(&tiny_model(OutputHead::default())).unwrap();
    let ps = pairs(&tiny_train(), 3);
    let r = evaluate(&model, &ps).unwrap();
    assert_eq!(r.n_items, 3);
    assert_eq!(r.items.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), ["train-000000", "train-000001", "train-000002"]);
}
