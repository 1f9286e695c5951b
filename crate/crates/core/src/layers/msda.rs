use super::attention::{axis_attention, channel_attention, AttentionParams, Axis, ChannelAttentionParams};
use super::conv::{complex_conv2d, ComplexConvParams};
use super::feature::ComplexFeature;
use super::params::{Bound, Initializer, ParamStore};
use crate::error::Result;

/// Multi-scale dual attention: time and frequency self-attention plus
/// channel attention, fused by a 1×1 complex conv onto a residual path.
#[derive(Clone, Copy)]
pub struct MsdaParams<'t> {
    pub time: AttentionParams<'t>,
    pub freq: AttentionParams<'t>,
    pub channel: ChannelAttentionParams<'t>,
    pub fuse: ComplexConvParams<'t>,
}

impl<'t> MsdaParams<'t> {
    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        c: usize,
        heads: usize,
        reduction: usize,
    ) -> Result<()> {
        AttentionParams::register(store, init, &format!("{prefix}.time"), 2 * c, 2 * c, heads)?;
        AttentionParams::register(store, init, &format!("{prefix}.freq"), 2 * c, 2 * c, heads)?;
        ChannelAttentionParams::register(store, init, &format!("{prefix}.channel"), c, reduction)?;
        ComplexConvParams::register(store, init, &format!("{prefix}.fuse"), c, c, (1, 1), true)
    }

    pub fn bind(b: &Bound<'t>, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Self {
            time: AttentionParams::bind(b, &format!("{prefix}.time"), heads)?,
            freq: AttentionParams::bind(b, &format!("{prefix}.freq"), heads)?,
            channel: ChannelAttentionParams::bind(b, &format!("{prefix}.channel"))?,
            fuse: ComplexConvParams::bind(b, &format!("{prefix}.fuse"))?,
        })
    }
}

/// `X + Conv1x1(A_time(X) + A_freq(X) + X ⊙ α)`.
pub fn msda_forward<'t>(x: &ComplexFeature<'t>, p: &MsdaParams<'t>) -> Result<ComplexFeature<'t>> {
    let (b, c, _, _) = x.dims();
    let dual = axis_attention(x, Axis::Time, &p.time)?.add(&axis_attention(x, Axis::Frequency, &p.freq)?)?;
    let alpha = channel_attention(x, &p.channel)?.reshape(&[b, c, 1, 1])?;
    let mixed = dual.add(&x.scale_channels(alpha)?)?;
    x.add(&complex_conv2d(&mixed, &p.fuse, (1, 1), (0, 0))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check_sampled, Tape, Tensor};

    fn store(c: usize, heads: usize, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        MsdaParams::register(&mut s, &mut Initializer::new(seed), "m", c, heads, 4).unwrap();
        s
    }

    #[test]
    fn zero_fuse_conv_is_exact_identity() {
        let mut s = store(4, 2, 1);
        for name in ["m.fuse.w_re", "m.fuse.w_im"] {
            s.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let tape = Tape::new();
        let x = Initializer::new(9).fan_in(&[2, 8, 5, 6], 1);
        let xf = ComplexFeature::from_planar(tape.constant(x.clone())).unwrap();
        let p = MsdaParams::bind(&s.bind(&tape, false), "m", 2).unwrap();
        let y = msda_forward(&xf, &p).unwrap();
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn output_shape_matches_input() {
        let s = store(4, 4, 2);
        let tape = Tape::new();
        let x = ComplexFeature::from_planar(tape.constant(Tensor::full(&[1, 8, 7, 3], 0.2))).unwrap();
        let y = msda_forward(&x, &MsdaParams::bind(&s.bind(&tape, false), "m", 4).unwrap()).unwrap();
        assert_eq!(y.dims(), x.dims());
    }

    #[test]
    fn gradient_check_through_module() {
        for seed in 0..5 {
            let s = store(2, 2, 10 + seed);
            let names: Vec<String> = s.iter().map(|(k, _)| k.to_string()).collect();
            let mut init = Initializer::new(seed);
            let mut inputs = vec![init.fan_in(&[1, 4, 4, 3], 1)];
            // biases start at zero; move them off so their gradients are exercised
            inputs.extend(s.iter().map(|(_, t)| t.map(|v| v + 0.05)));
            let probe = init.fan_in(&[1, 4, 4, 3], 1);
            let err = finite_diff_check_sampled(
                |tape, v| {
                    let b = Bound::from_pairs(names.iter().cloned().zip(v[1..].iter().copied()));
                    let p = MsdaParams::bind(&b, "m", 2)?;
                    let y = msda_forward(&ComplexFeature::from_planar(v[0])?, &p)?;
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
