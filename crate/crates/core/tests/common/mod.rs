#![allow(dead_code)]

use biosen::autodiff::{finite_diff_check_sampled, Tape, Tensor, Var};
use biosen::dsp::StftConfig;
use biosen::layers::{Bound, Initializer, ParamStore};
use biosen::model::{build_model, ModelConfig, ModelState, OutputHead};
use biosen::train::TrainConfig;

/// Two-level network small enough for exhaustive gradient checks.
pub fn tiny_model(head: OutputHead) -> ModelConfig {
    ModelConfig {
        stft: StftConfig {
            n_fft: 64,
            hop: 16,
            ..Default::default()
        },
        encoder_channels: vec![2, 4],
        msda_heads: 2,
        bhme_kernels: vec![3, 5],
        eagc_width: 8,
        output_head: head,
        ..Default::default()
    }
}

pub fn tiny_train() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        segment_seconds: 0.05,
        max_steps: 4,
        eval_every: 2,
        val_items: 2,
        ..Default::default()
    }
}

/// Depth-1, one-channel model whose parameters make it an exact pass-through
/// of its STFT round trip.
pub fn identity_model(head: OutputHead) -> ModelState {
    let cfg = ModelConfig {
        encoder_channels: vec![1],
        msda_heads: 1,
        eps_w: 1.0,
        output_head: head,
        ..Default::default()
    };
    let mut m = build_model(&cfg).expect("identity config builds");
    let p = m.params_mut();
    let mut set = |name: &str, f: &dyn Fn(usize) -> f64| {
        let t = p.get_mut(name).unwrap_or_else(|| panic!("missing {name}"));
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = f(i);
        }
    };
    let zero = |_: usize| 0.0;
    set("enc1.msda.fuse.w_re", &zero);
    set("enc1.msda.fuse.w_im", &zero);
    set("enc1.msda.fuse.b_re", &zero);
    set("enc1.msda.fuse.b_im", &zero);
    set("bottleneck.alpha_b", &zero);
    // sigmoid(40) rounds to exactly 1.0
    set("dec1.eagc.gate_w", &zero);
    set("dec1.eagc.gate_b", &|_| 40.0);
    set("dec1.eagc.mod_w", &zero);
    set("dec1.eagc.mod_b", &|_| 40.0);
    set("dec1.eagc.attn.wo", &zero);
    // merge input channels are [gated skip, decoder]
    set("dec1.merge.w_re", &|i| if i == 0 { 1.0 } else { 0.0 });
    set("dec1.merge.w_im", &zero);
    set("dec1.merge.b_re", &zero);
    set("dec1.merge.b_im", &zero);
    match head {
        OutputHead::Direct => {
            set("out.w_re", &|_| 1.0);
            set("out.b_re", &zero);
        }
        OutputHead::Mask => {
            // tanh(40) rounds to exactly 1.0
            set("out.w_re", &zero);
            set("out.b_re", &|_| 40.0);
        }
    }
    set("out.w_im", &zero);
    set("out.b_im", &zero);
    m
}

/// Worst relative central-difference error of `loss(input features, params)`
/// with respect to both the inputs and every registered parameter.
///
/// Parameters are shifted by 0.05 first so zero-initialized biases and the
/// harmonic residual scale carry gradient.
pub fn check_module<F>(store: &ParamStore, inputs: Vec<Tensor>, coords: usize, seed: u64, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>], &Bound<'t>) -> biosen::Result<Var<'t>>,
{
    let names: Vec<String> = store.iter().map(|(k, _)| k.to_string()).collect();
    let n_in = inputs.len();
    let mut all = inputs;
    all.extend(store.iter().map(|(_, t)| t.map(|v| v + 0.05)));
    finite_diff_check_sampled(
        |tape, v| {
            let b = Bound::from_pairs(names.iter().cloned().zip(v[n_in..].iter().copied()));
            f(tape, &v[..n_in], &b)
        },
        &all,
        1e-6,
        Some(coords),
        seed,
    )
    .expect("gradient check runs")
}

/// Contracts `y` against a fixed random probe of its shape.
pub fn probe_sum<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> biosen::Result<Var<'t>> {
    let probe = Initializer::new(seed).fan_in(&y.shape(), 1);
    y.mul(tape.constant(probe))?.sum(&[], false)
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// `reference + g·e` with `e ⟂ reference` and `g` chosen so that both SI-SDR
/// and SNR of the result equal `db`.
pub fn at_level(reference: &[f64], orth: &[f64], db: f64) -> Vec<f64> {
    let ps: f64 = reference.iter().map(|v| v * v).sum();
    let pe: f64 = orth.iter().map(|v| v * v).sum();
    let g = (ps / pe / 10f64.powf(db / 10.0)).sqrt();
    reference.iter().zip(orth).map(|(s, e)| s + g * e).collect()
}

/// Component of `x` orthogonal to `r`.
pub fn orthogonalize(x: &[f64], r: &[f64]) -> Vec<f64> {
    let c = x.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / r.iter().map(|v| v * v).sum::<f64>();
    x.iter().zip(r).map(|(a, b)| a - c * b).collect()
}
