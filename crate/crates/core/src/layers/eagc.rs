use super::attention::{attend, AttentionParams};
use super::feature::ComplexFeature;
use super::params::{Bound, Initializer, ParamStore};
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS_W: f64 = 0.1;
pub const DEFAULT_EAGC_WIDTH: usize = 64;

/// Energy-aware gated skip connection.
///
/// The gate and the modulating conv are real 1×1 convs reading all `2C`
/// real and imaginary planes: `gate_w` is `(1, 2C, 1, 1)` and `mod_w` is
/// `(C, 2C, 1, 1)`. The cross-attention reads `2C·F_d` features per frame.
#[derive(Clone, Copy)]
pub struct GateParams<'t> {
    pub gate_w: Var<'t>,
    pub gate_b: Var<'t>,
    pub mod_w: Var<'t>,
    pub mod_b: Var<'t>,
    pub attn: AttentionParams<'t>,
    pub eps_w: f64,
}

impl<'t> GateParams<'t> {
    /// `c` is the channel count shared by encoder and decoder features and
    /// `f_dec` the decoder's frequency size.
    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        c: usize,
        f_dec: usize,
        width: usize,
    ) -> Result<()> {
        store.insert(format!("{prefix}.gate_w"), init.fan_in(&[1, 2 * c, 1, 1], 2 * c))?;
        store.insert(format!("{prefix}.gate_b"), Tensor::zeros(&[1]))?;
        store.insert(format!("{prefix}.mod_w"), init.fan_in(&[c, 2 * c, 1, 1], 2 * c))?;
        store.insert(format!("{prefix}.mod_b"), Tensor::zeros(&[c]))?;
        AttentionParams::register(store, init, &format!("{prefix}.attn"), 2 * c * f_dec, width, 1)
    }

    pub fn bind(b: &Bound<'t>, prefix: &str, eps_w: f64) -> Result<Self> {
        if !(eps_w > 0.0 && eps_w <= 1.0) {
            return Err(Error::InvalidConfig(format!("frequency weight floor {eps_w} outside (0, 1]")));
        }
        Ok(Self {
            gate_w: b.get(&format!("{prefix}.gate_w"))?,
            gate_b: b.get(&format!("{prefix}.gate_b"))?,
            mod_w: b.get(&format!("{prefix}.mod_w"))?,
            mod_b: b.get(&format!("{prefix}.mod_b"))?,
            attn: AttentionParams::bind(b, &format!("{prefix}.attn"), 1)?,
            eps_w,
        })
    }
}

/// Result of the gating stage.
pub struct GatedSkip<'t> {
    /// `E_f`, same shape as the encoder input.
    pub filtered: ComplexFeature<'t>,
    /// `W_freq` as `(B, F)`.
    pub w_freq: Var<'t>,
    /// Gate `G` as `(B, 1, F, T)`.
    pub gate: Var<'t>,
}

/// Gate, frequency-energy weighting and modulation of the encoder features.
pub fn eagc_gate<'t>(e: &ComplexFeature<'t>, p: &GateParams<'t>) -> Result<GatedSkip<'t>> {
    let (b, c, f, t) = e.dims();
    let gate = e.planar().conv2d(p.gate_w, Some(p.gate_b), (1, 1), (0, 0))?.sigmoid()?;
    let eo = e.map_planar(|v| v.mul(gate))?;
    let sq = eo.planar().mul(eo.planar())?;
    let energy = sq.sum(&[1, 3], false)?.scale(1.0 / (c * t) as f64)?;
    let peak = energy.max(&[1], true)?.add_scalar(f64::MIN_POSITIVE)?;
    let w_freq = energy.div(peak)?.clamp_min(p.eps_w)?;
    let modulation = eo
        .planar()
        .conv2d(p.mod_w, Some(p.mod_b), (1, 1), (0, 0))?
        .sigmoid()?
        .mul(w_freq.reshape(&[b, 1, f, 1])?)?;
    Ok(GatedSkip {
        filtered: eo.scale_channels(modulation)?,
        w_freq,
        gate,
    })
}

/// Gated skip features aligned to the decoder state `d`.
pub fn eagc_forward<'t>(
    e: &ComplexFeature<'t>,
    d: &ComplexFeature<'t>,
    p: &GateParams<'t>,
) -> Result<ComplexFeature<'t>> {
    let (b, c, fd, td) = d.dims();
    let (_, ce, fe, te) = e.dims();
    if ce != c {
        return Err(Error::InvalidShape(format!(
            "skip has {ce} channels but decoder state has {c}"
        )));
    }
    let ef = eagc_gate(e, p)?.filtered;
    let ea = if (fe, te) == (fd, td) {
        ef
    } else {
        ef.map_planar(|v| v.bilinear_resize((fd, td), true))?
    };
    let frames = |x: &ComplexFeature<'t>| -> Result<Var<'t>> {
        x.planar().permute(&[0, 3, 1, 2])?.reshape(&[b, td, 2 * c * fd])
    };
    let ctx = attend(frames(d)?, frames(&ea)?, &p.attn)?
        .reshape(&[b, td, 2 * c, fd])?
        .permute(&[0, 2, 3, 1])?;
    ea.add(&ComplexFeature::from_planar(ctx)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check_sampled, Tape};

    fn store(c: usize, f_dec: usize, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        GateParams::register(&mut s, &mut Initializer::new(seed), "g", c, f_dec, 8).unwrap();
        s
    }

    fn feat<'t>(tape: &'t Tape, t: Tensor) -> ComplexFeature<'t> {
        ComplexFeature::from_planar(tape.constant(t)).unwrap()
    }

    #[test]
    fn concentrated_band_gets_full_weight() {
        // two bands: bins 1-2 loud, bin 4 quiet, everything else silent
        let (c, f, t) = (1, 6, 4);
        let mut x = Tensor::zeros(&[1, 2 * c, f, t]);
        for tt in 0..t {
            for (bin, amp) in [(1, 2.0), (2, 2.0), (4, 1.0)] {
                x.data_mut()[bin * t + tt] = amp;
                x.data_mut()[f * t + bin * t + tt] = -amp;
            }
        }
        let mut s = store(c, f, 1);
        // a constant gate keeps the hand computation simple
        s.get_mut("g.gate_w").unwrap().data_mut().fill(0.0);
        let tape = Tape::new();
        let p = GateParams::bind(&s.bind(&tape, false), "g", 0.1).unwrap();
        let w = eagc_gate(&feat(&tape, x), &p).unwrap().w_freq.value();
        // |E_o|² per bin: 8·G² at bins 1-2, 2·G² at bin 4
        let want = [0.1, 1.0, 1.0, 0.1, 0.25, 0.1];
        for (got, want) in w.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn w_freq_bounds_for_random_inputs() {
        let s = store(2, 5, 2);
        let tape = Tape::new();
        let p = GateParams::bind(&s.bind(&tape, false), "g", 0.1).unwrap();
        for seed in 0..10 {
            let x = Initializer::new(seed).fan_in(&[3, 4, 5, 6], 1);
            let w = eagc_gate(&feat(&tape, x), &p).unwrap().w_freq.value();
            for row in w.data().chunks(5) {
                assert!(row.iter().all(|&v| (0.1..=1.0).contains(&v)));
                assert_eq!(row.iter().cloned().fold(0.0, f64::max), 1.0);
            }
        }
    }

    #[test]
    fn silent_skip_gives_zero_output_and_floor_weights() {
        let s = store(2, 4, 3);
        let tape = Tape::new();
        let p = GateParams::bind(&s.bind(&tape, false), "g", 0.1).unwrap();
        let e = feat(&tape, Tensor::zeros(&[1, 4, 8, 5]));
        let d = feat(&tape, Initializer::new(5).fan_in(&[1, 4, 4, 3], 1));
        assert!(eagc_gate(&e, &p).unwrap().w_freq.value().data().iter().all(|&v| v == 0.1));
        let out = eagc_forward(&e, &d, &p).unwrap();
        assert_eq!(out.dims(), (1, 2, 4, 3));
        assert!(out.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_and_zero_output_projection_pass_skip_through() {
        let mut s = store(2, 5, 4);
        s.get_mut("g.gate_w").unwrap().data_mut().fill(0.0);
        s.get_mut("g.gate_b").unwrap().data_mut().fill(40.0);
        s.get_mut("g.mod_w").unwrap().data_mut().fill(0.0);
        s.get_mut("g.mod_b").unwrap().data_mut().fill(40.0);
        s.get_mut("g.attn.wo").unwrap().data_mut().fill(0.0);
        let tape = Tape::new();
        let p = GateParams::bind(&s.bind(&tape, false), "g", 1.0).unwrap();
        let x = Initializer::new(6).fan_in(&[2, 4, 5, 3], 1);
        let e = feat(&tape, x.clone());
        let d = feat(&tape, Initializer::new(7).fan_in(&[2, 4, 5, 3], 1));
        assert_eq!(*eagc_forward(&e, &d, &p).unwrap().value(), x);
    }

    #[test]
    fn gradient_check_through_module() {
        for seed in 0..5 {
            let s = store(2, 3, 30 + seed);
            let names: Vec<String> = s.iter().map(|(k, _)| k.to_string()).collect();
            let mut init = Initializer::new(seed);
            let e = init.fan_in(&[1, 4, 5, 4], 1);
            let d = init.fan_in(&[1, 4, 3, 2], 1);
            let probe = init.fan_in(&[1, 4, 3, 2], 1);
            let mut inputs = vec![e, d];
            inputs.extend(s.iter().map(|(_, t)| t.map(|v| v + 0.05)));
            // eps_w small enough that the floor stays inactive for random inputs
            let err = finite_diff_check_sampled(
                |tape, v| {
                    let b = Bound::from_pairs(names.iter().cloned().zip(v[2..].iter().copied()));
                    let p = GateParams::bind(&b, "g", 1e-3)?;
                    let y = eagc_forward(&ComplexFeature::from_planar(v[0])?, &ComplexFeature::from_planar(v[1])?, &p)?;
                    y.planar().mul(tape.constant(probe.clone()))?.sum(&[], false)
                },
                &inputs,
                1e-6,
                Some(24),
                seed,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
