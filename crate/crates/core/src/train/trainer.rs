use serde::Serialize;

use super::config::TrainConfig;
use super::data::{Dataset, Pair, PairedBatch};
use super::optim::{Adam, LrSchedule};
use crate::autodiff::Tape;
use crate::dsp::Waveform;
use crate::error::Result;
use crate::metrics::{neg_sisdr_loss, ItemMetrics, MetricsReport};
use crate::model::{build_model, save_checkpoint, ModelConfig, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub step: usize,
    /// Mean negative SI-SDR of the last training batch, dB.
    pub train_loss: f64,
    pub val_si_sdri: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

/// Loss of `model` on one batch and the gradients of every parameter.
pub fn loss_and_grads(
    model: &ModelState,
    batch: &PairedBatch,
) -> Result<(f64, std::collections::BTreeMap<String, crate::autodiff::Tensor>)> {
    let tape = Tape::new();
    let bound = model.params().bind(&tape, true);
    let est = model.enhance_var(&bound, &tape, &batch.noisy)?;
    let loss = neg_sisdr_loss(est, &batch.clean)?;
    let value = loss.value().item().expect("scalar loss");
    let grads = tape.backward(loss)?;
    Ok((value, bound.collect_grads(&grads)))
}

/// Loss of `model` on one batch without gradients.
pub fn batch_loss(model: &ModelState, batch: &PairedBatch) -> Result<f64> {
    let tape = Tape::new();
    let bound = model.params().bind(&tape, false);
    let est = model.enhance_var(&bound, &tape, &batch.noisy)?;
    Ok(neg_sisdr_loss(est, &batch.clean)?.value().item().expect("scalar loss"))
}

/// Enhances a set of equal-length pairs in one batched pass.
fn enhance_pairs(model: &ModelState, pairs: &[Pair]) -> Result<Vec<Waveform>> {
    let batch = PairedBatch::from_pairs(pairs)?;
    let tape = Tape::new();
    let bound = model.params().bind(&tape, false);
    let est = model.enhance_var(&bound, &tape, &batch.noisy)?.value();
    let len = batch.noisy.shape()[1];
    est.data()
        .chunks(len)
        .map(|row| Waveform::new(row.to_vec(), model.config().sample_rate))
        .collect()
}

/// Metrics of an arbitrary enhancer over `pairs`.
pub fn evaluate_with(pairs: &[Pair], mut enhance: impl FnMut(&Pair) -> Result<Waveform>) -> Result<MetricsReport> {
    let items = pairs
        .iter()
        .map(|p| ItemMetrics::compute(p.id.clone(), &enhance(p)?, &p.clean, &p.noisy))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_items(items)
}

/// Upper bound on the samples enhanced in one batched pass during evaluation.
pub const EVAL_BATCH_SAMPLES: usize = 64_000;

/// Per-item enhancement and all four metrics. Runs of equal-length items are
/// enhanced together, at most [`EVAL_BATCH_SAMPLES`] samples per pass.
pub fn evaluate(model: &ModelState, pairs: &[Pair]) -> Result<MetricsReport> {
    let mut estimates = Vec::with_capacity(pairs.len());
    let mut rest = pairs;
    while let Some(first) = rest.first() {
        let len = first.noisy.len();
        let cap = (EVAL_BATCH_SAMPLES / len).max(1);
        let n = rest
            .iter()
            .take(cap)
            .take_while(|p| p.noisy.len() == len && p.clean.len() == len)
            .count()
            .max(1);
        if n == 1 {
            estimates.push(model.enhance(&rest[0].noisy)?);
        } else {
            estimates.extend(enhance_pairs(model, &rest[..n])?);
        }
        rest = &rest[n..];
    }
    let mut it = estimates.into_iter();
    evaluate_with(pairs, |_| Ok(it.next().expect("one estimate per pair")))
}

/// Trains from a fresh model built from `model_cfg`.
pub fn train(model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(ModelState, TrainLog)> {
    train_model(build_model(model_cfg)?, cfg, |_| {})
}

/// Trains `model` in place of a fresh build; `on_record` sees every log record
/// as it is produced.
pub fn train_model(
    mut model: ModelState,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&LogRecord),
) -> Result<(ModelState, TrainLog)> {
    cfg.validate()?;
    let mut log = TrainLog::default();
    if cfg.max_steps == 0 {
        return Ok((model, log));
    }
    let data = Dataset::from_config(cfg, model.config().sample_rate)?;
    let val = data.validation()?;
    let mut opt = Adam::new();
    let mut sched = LrSchedule::new(cfg);
    for step in 1..=cfg.max_steps {
        let batch = data.train_batch(step - 1)?;
        let (loss, grads) = loss_and_grads(&model, &batch)?;
        opt.step(model.params_mut(), &grads, sched.lr())?;
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let report = evaluate(&model, &val)?;
            let lr = sched.lr();
            sched.observe(-report.si_sdr);
            let rec = LogRecord {
                step,
                train_loss: loss,
                val_si_sdri: report.si_sdri,
                lr,
            };
            on_record(&rec);
            log.records.push(rec);
            if let Some(path) = &cfg.checkpoint {
                save_checkpoint(&model, path)?;
            }
        }
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;
    use crate::metrics::si_sdr_samples;
    use crate::model::encode_checkpoint;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            stft: StftConfig { n_fft: 64, hop: 16, ..Default::default() },
            encoder_channels: vec![2, 4],
            msda_heads: 2,
            eagc_width: 8,
            ..Default::default()
        }
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            segment_seconds: 0.05,
            max_steps: 4,
            eval_every: 2,
            val_items: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let cfg = TrainConfig { max_steps: 0, ..tiny_train() };
        let (m, log) = train(&tiny_model(), &cfg).unwrap();
        assert_eq!(m.params(), build_model(&tiny_model()).unwrap().params());
        assert!(log.records.is_empty());
    }

    #[test]
    fn step_zero_loss_is_minus_mean_si_sdr() {
        let model = build_model(&tiny_model()).unwrap();
        let data = Dataset::from_config(&tiny_train(), 16000).unwrap();
        let batch = data.train_batch(0).unwrap();
        let loss = batch_loss(&model, &batch).unwrap();
        let l = batch.noisy.shape()[1];
        let mut mean = 0.0;
        for i in 0..2 {
            let noisy = Waveform::new(batch.noisy.data()[i * l..(i + 1) * l].to_vec(), 16000).unwrap();
            let est = model.enhance(&noisy).unwrap();
            mean += si_sdr_samples(&est.samples, &batch.clean.data()[i * l..(i + 1) * l]).unwrap() / 2.0;
        }
        assert!((loss + mean).abs() < 1e-6);
    }

    #[test]
    fn overfits_one_fixed_batch() {
        let mut model = build_model(&tiny_model()).unwrap();
        let batch = Dataset::from_config(&tiny_train(), 16000).unwrap().train_batch(0).unwrap();
        let start = batch_loss(&model, &batch).unwrap();
        let mut opt = Adam::new();
        for _ in 0..200 {
            let (_, g) = loss_and_grads(&model, &batch).unwrap();
            opt.step(model.params_mut(), &g, 1e-3).unwrap();
        }
        let end = batch_loss(&model, &batch).unwrap();
        assert!(end <= start - 3.0, "loss {start} -> {end}");
    }

    #[test]
    fn runs_are_reproducible() {
        let (a, la) = train(&tiny_model(), &tiny_train()).unwrap();
        let (b, lb) = train(&tiny_model(), &tiny_train()).unwrap();
        assert_eq!(la, lb);
        assert_eq!(la.records.len(), 2);
        assert_eq!(encode_checkpoint(&a).unwrap(), encode_checkpoint(&b).unwrap());
    }

    #[test]
    fn passthrough_and_oracle_baselines() {
        let data = Dataset::from_config(&tiny_train(), 16000).unwrap();
        let val = data.validation().unwrap();
        let r = evaluate_with(&val, |p| Ok(p.noisy.clone())).unwrap();
        assert_eq!((r.si_sdri, r.snri, r.n_items), (0.0, 0.0, 2));
        let o = evaluate_with(&val, |p| Ok(p.clean.clone())).unwrap();
        assert!(o.si_sdr >= 100.0 && o.snr >= 100.0);
        let noisy_level = r.snr;
        assert!((o.snri - (o.snr - noisy_level)).abs() < 1e-9);
    }

    #[test]
    fn model_evaluation_counts_items() {
        let m = build_model(&tiny_model()).unwrap();
        let val = Dataset::from_config(&tiny_train(), 16000).unwrap().validation().unwrap();
        let batched = evaluate(&m, &val).unwrap();
        assert_eq!(batched.n_items, 2);
        let single = evaluate_with(&val, |p| m.enhance(&p.noisy)).unwrap();
        for (a, b) in batched.items.iter().zip(&single.items) {
            assert!((a.si_sdr - b.si_sdr).abs() < 1e-9);
        }
    }
}
