use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares tape gradients against central differences.
///
/// `f` must build a one-element output from the given inputs on the tape it
/// receives. Returns the largest relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)` over all
/// coordinates.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    finite_diff_check_sampled(f, inputs, h, None, 0)
}

/// Like [`finite_diff_check`], but probes at most `max_coords` randomly chosen
/// coordinates per input (all of them when `None`).
pub fn finite_diff_check_sampled<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| grads.get(*v).cloned().expect("leaf gradient"))
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        out.value()
            .item()
            .ok_or_else(|| Error::InvalidLoss("gradient check needs a scalar output".into()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match max_coords {
            Some(m) if m < input.len() => sample(&mut rng, input.len(), m).into_vec(),
            _ => (0..input.len()).collect(),
        };
        for c in coords {
            let orig = input.data()[c];
            probe[k].data_mut()[c] = orig + h;
            let fp = eval(&probe)?;
            probe[k].data_mut()[c] = orig - h;
            let fm = eval(&probe)?;
            probe[k].data_mut()[c] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[k].data()[c];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
