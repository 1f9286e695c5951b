//! Runs MSDA, BHME and EAGC on a random complex feature map and shows the
//! identity properties of their residual paths.

use biosen::autodiff::{Init, Tape, Tensor};
use biosen::layers::{
    bhme_forward, eagc_forward, eagc_gate, msda_forward, BhmeParams, ComplexFeature, GateParams, Initializer,
    MsdaParams, ParamStore, DEFAULT_BHME_KERNELS,
};

fn main() -> biosen::Result<()> {
    let (c, f, t) = (4, 16, 10);
    let mut store = ParamStore::new();
    let mut init = Initializer::new(5);
    MsdaParams::register(&mut store, &mut init, "msda", c, 2, 4)?;
    BhmeParams::register(&mut store, &mut init, "bhme", c, &DEFAULT_BHME_KERNELS)?;
    GateParams::register(&mut store, &mut init, "eagc", c, f, 32)?;
    println!("{} tensors, {} scalars", store.len(), store.n_scalars());

    let tape = Tape::new();
    let b = store.bind(&tape, false);
    let x = ComplexFeature::from_planar(tape.constant(Tensor::create(
        &[2, 2 * c, f, t],
        Init::Uniform { lo: -1.0, hi: 1.0, seed: 9 },
    )?))?;

    let m = msda_forward(&x, &MsdaParams::bind(&b, "msda", 2)?)?;
    println!("msda  {:?} -> {:?}, max |Y - X| = {:.3}", x.dims(), m.dims(), m.value().max_abs_diff(&x.value()));

    // α_b starts at zero, so the harmonic block is the identity until trained
    let h = bhme_forward(&x, &BhmeParams::bind(&b, "bhme", &DEFAULT_BHME_KERNELS)?)?;
    println!("bhme  identity at init: {}", h.value().max_abs_diff(&x.value()) == 0.0);

    let gp = GateParams::bind(&b, "eagc", 0.1)?;
    let gated = eagc_gate(&x, &gp)?;
    let w = gated.w_freq.value();
    let (lo, hi) = w.data().iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    println!("eagc  W_freq range [{lo:.3}, {hi:.3}]");
    let s = eagc_forward(&x, &m, &gp)?;
    println!("eagc  skip {:?} aligned to decoder {:?}", s.dims(), m.dims());
    Ok(())
}
