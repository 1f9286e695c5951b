//! Reverse-mode gradients of a small attention-plus-convolution graph,
//! compared against central differences.

use biosen::autodiff::{finite_diff_check, multi_head_attention, Init, Tape, Tensor, Var};

/// `sum(attention(h, h, h) ⊙ h)` with `h = tanh(conv(x, w))`.
fn f<'t>(_: &'t Tape, v: &[Var<'t>]) -> biosen::Result<Var<'t>> {
    let h = v[0].conv2d(v[1], None, (1, 1), (1, 1))?.tanh()?;
    let seq = h.reshape(&[3, 5, 4])?;
    let a = multi_head_attention(seq, seq, seq, 2)?;
    a.mul(seq)?.sum(&[], false)
}

fn main() -> biosen::Result<()> {
    let x = Tensor::create(&[1, 2, 5, 4], Init::Uniform { lo: -1.0, hi: 1.0, seed: 1 })?;
    let w = Tensor::create(&[3, 2, 3, 3], Init::Uniform { lo: -0.5, hi: 0.5, seed: 2 })?;

    let tape = Tape::new();
    let (xv, wv) = (tape.var(x.clone(), true), tape.var(w.clone(), true));
    let loss = f(&tape, &[xv, wv])?;
    let grads = tape.backward(loss)?;
    println!("loss = {:.6}", loss.value().item().unwrap_or(f64::NAN));
    println!("|dL/dx|max = {:.6}", grads.get(xv).map_or(0.0, |g| g.data().iter().fold(0.0f64, |a, v| a.max(v.abs()))));

    let err = finite_diff_check(f, &[x, w], 1e-6)?;
    println!("max relative error vs central differences: {err:.3e}");
    Ok(())
}
