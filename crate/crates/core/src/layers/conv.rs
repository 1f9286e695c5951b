use super::feature::ComplexFeature;
use super::params::{Bound, Initializer, ParamStore};
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

/// Weights of a complex convolution: `(Cout, Cin, kF, kT)` real and
/// imaginary kernels and optional `(Cout)` biases.
#[derive(Clone, Copy)]
pub struct ComplexConvParams<'t> {
    pub w_re: Var<'t>,
    pub w_im: Var<'t>,
    pub bias: Option<(Var<'t>, Var<'t>)>,
}

impl<'t> ComplexConvParams<'t> {
    pub fn new(w_re: Var<'t>, w_im: Var<'t>, bias: Option<(Var<'t>, Var<'t>)>) -> Result<Self> {
        let s = w_re.shape();
        if s.len() != 4 || s != w_im.shape() {
            return Err(Error::InvalidShape(format!(
                "complex conv weights must be matching rank-4 tensors, got {:?} and {:?}",
                s,
                w_im.shape()
            )));
        }
        if let Some((b_re, b_im)) = bias {
            if b_re.shape() != [s[0]] || b_im.shape() != [s[0]] {
                return Err(Error::InvalidShape(format!(
                    "complex conv biases must be [{}], got {:?} and {:?}",
                    s[0],
                    b_re.shape(),
                    b_im.shape()
                )));
            }
        }
        Ok(Self { w_re, w_im, bias })
    }

    /// Registers `{prefix}.w_re`, `{prefix}.w_im` and, with `bias`,
    /// `{prefix}.b_re`, `{prefix}.b_im`.
    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        bias: bool,
    ) -> Result<()> {
        let shape = [cout, cin, kernel.0, kernel.1];
        // complex fan-in counts both parts of every input
        let fan_in = 2 * cin * kernel.0 * kernel.1;
        store.insert(format!("{prefix}.w_re"), init.fan_in(&shape, fan_in))?;
        store.insert(format!("{prefix}.w_im"), init.fan_in(&shape, fan_in))?;
        if bias {
            store.insert(format!("{prefix}.b_re"), Tensor::zeros(&[cout]))?;
            store.insert(format!("{prefix}.b_im"), Tensor::zeros(&[cout]))?;
        }
        Ok(())
    }

    pub fn bind(b: &Bound<'t>, prefix: &str) -> Result<Self> {
        let bias = match (b.get_opt(&format!("{prefix}.b_re")), b.get_opt(&format!("{prefix}.b_im"))) {
            (Some(r), Some(i)) => Some((r, i)),
            (None, None) => None,
            _ => return Err(Error::InvalidConfig(format!("`{prefix}` has half a complex bias"))),
        };
        Self::new(b.get(&format!("{prefix}.w_re"))?, b.get(&format!("{prefix}.w_im"))?, bias)
    }

    pub fn cin(&self) -> usize {
        self.w_re.shape()[1]
    }

    pub fn cout(&self) -> usize {
        self.w_re.shape()[0]
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.w_re.shape();
        (s[2], s[3])
    }
}

/// Complex convolution as one real convolution over the planar layout with
/// the block weight `[[w_re, -w_im], [w_im, w_re]]`.
pub fn complex_conv2d<'t>(
    x: &ComplexFeature<'t>,
    p: &ComplexConvParams<'t>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<ComplexFeature<'t>> {
    if x.channels() != p.cin() {
        return Err(Error::InvalidShape(format!(
            "complex conv expects {} input channels, got {}",
            p.cin(),
            x.channels()
        )));
    }
    let tape = p.w_re.tape();
    let neg_im = p.w_im.scale(-1.0)?;
    let top = tape.concat(&[p.w_re, neg_im], 1)?;
    let bottom = tape.concat(&[p.w_im, p.w_re], 1)?;
    let w = tape.concat(&[top, bottom], 0)?;
    let b = match p.bias {
        Some((re, im)) => Some(tape.concat(&[re, im], 0)?),
        None => None,
    };
    ComplexFeature::from_planar(x.planar().conv2d(w, b, stride, pad)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordMode {
    /// Stride 2 along frequency.
    Encode,
    /// Nearest ×2 upsampling along frequency to `out_freq` bins, then stride 1.
    Decode { out_freq: usize },
}

/// Evenly spaced values from -1 to 1 (a single point maps to 0).
pub fn coord_line(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

/// Appends normalized frequency and time coordinate channels with zero
/// imaginary parts.
pub fn append_coords<'t>(x: &ComplexFeature<'t>) -> Result<ComplexFeature<'t>> {
    let (b, _, f, t) = x.dims();
    let (fc, tc) = (coord_line(f), coord_line(t));
    let mut data = Vec::with_capacity(b * 2 * f * t);
    for _ in 0..b {
        for fi in &fc {
            data.extend(std::iter::repeat_n(*fi, t));
        }
        for _ in 0..f {
            data.extend_from_slice(&tc);
        }
    }
    let tape = x.planar().tape();
    let coords = tape.constant(Tensor::new(&[b, 2, f, t], data)?);
    let zeros = tape.constant(Tensor::zeros(&[b, 2, f, t]));
    ComplexFeature::from_parts(tape.concat(&[x.re()?, coords], 1)?, tape.concat(&[x.im()?, zeros], 1)?)
}

/// Coordinate-augmented complex convolution followed by a PReLU applied to
/// real and imaginary parts alike.
///
/// `p` must expect `C + 2` input channels. The kernel is padded to keep the
/// frequency size (before striding) and the time size.
pub fn cscconv_block<'t>(
    x: &ComplexFeature<'t>,
    p: &ComplexConvParams<'t>,
    slope: Var<'t>,
    mode: CoordMode,
) -> Result<ComplexFeature<'t>> {
    let (kf, kt) = p.kernel();
    if kf % 2 == 0 || kt % 2 == 0 {
        return Err(Error::InvalidConfig(format!("cscconv kernel {kf}x{kt} must have odd sides")));
    }
    let pad = (kf / 2, kt / 2);
    let (input, stride) = match mode {
        CoordMode::Encode => (*x, (2, 1)),
        CoordMode::Decode { out_freq } => {
            let f = x.dims().2;
            if out_freq == 0 || out_freq > 2 * f {
                return Err(Error::InvalidShape(format!(
                    "cannot upsample {f} bins to {out_freq}"
                )));
            }
            let idx: Vec<usize> = (0..out_freq).map(|i| i / 2).collect();
            (ComplexFeature::from_planar(x.planar().gather(2, &idx)?)?, (1, 1))
        }
    };
    let y = complex_conv2d(&append_coords(&input)?, p, stride, pad)?;
    y.map_planar(|v| v.prelu(slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_conv<'t>(tape: &'t Tape, re: f64, im: f64, bias: bool) -> ComplexConvParams<'t> {
        let w_re = tape.constant(Tensor::new(&[1, 1, 1, 1], vec![re]).unwrap());
        let w_im = tape.constant(Tensor::new(&[1, 1, 1, 1], vec![im]).unwrap());
        let b = bias.then(|| (tape.constant(Tensor::zeros(&[1])), tape.constant(Tensor::zeros(&[1]))));
        ComplexConvParams::new(w_re, w_im, b).unwrap()
    }

    fn point<'t>(tape: &'t Tape, re: f64, im: f64) -> ComplexFeature<'t> {
        ComplexFeature::from_planar(tape.constant(Tensor::new(&[1, 2, 1, 1], vec![re, im]).unwrap())).unwrap()
    }

    #[test]
    fn pointwise_complex_products() {
        let tape = Tape::new();
        for (x, w, want) in [
            ((0.3, -0.7), (1.0, 0.0), (0.3, -0.7)),
            ((1.0, 0.0), (0.0, 1.0), (0.0, 1.0)),
            ((1.0, 2.0), (3.0, 4.0), (-5.0, 10.0)),
        ] {
            let y = complex_conv2d(&point(&tape, x.0, x.1), &scalar_conv(&tape, w.0, w.1, true), (1, 1), (0, 0))
                .unwrap();
            assert_eq!(y.value().data(), &[want.0, want.1]);
        }
    }

    #[test]
    fn random_scalars_match_hand_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tape = Tape::new();
        for _ in 0..200 {
            let (a, b, c, d): (f64, f64, f64, f64) =
                (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let y = complex_conv2d(&point(&tape, a, b), &scalar_conv(&tape, c, d, false), (1, 1), (0, 0)).unwrap();
            let v = y.value();
            assert!((v.data()[0] - (a * c - b * d)).abs() < 1e-12);
            assert!((v.data()[1] - (a * d + b * c)).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let tape = Tape::new();
        let x = ComplexFeature::from_planar(tape.constant(Tensor::zeros(&[1, 4, 2, 2]))).unwrap();
        let r = complex_conv2d(&x, &scalar_conv(&tape, 1.0, 0.0, false), (1, 1), (0, 0));
        assert!(matches!(r, Err(Error::InvalidShape(_))));
    }

    #[test]
    fn coordinate_channels_span_minus_one_to_one() {
        let tape = Tape::new();
        let x = ComplexFeature::from_planar(tape.constant(Tensor::zeros(&[2, 2, 5, 4]))).unwrap();
        let y = append_coords(&x).unwrap();
        assert_eq!(y.dims(), (2, 3, 5, 4));
        let v = y.value();
        // re channel 1 is the frequency coordinate, channel 2 the time coordinate
        assert_eq!(v.at(&[1, 1, 0, 2]), -1.0);
        assert_eq!(v.at(&[1, 1, 4, 2]), 1.0);
        assert_eq!(v.at(&[0, 2, 3, 0]), -1.0);
        assert_eq!(v.at(&[0, 2, 3, 3]), 1.0);
        // imaginary parts of the coordinates are zero
        assert!((0..5).all(|f| v.at(&[0, 4, f, 1]) == 0.0 && v.at(&[0, 5, f, 1]) == 0.0));
    }

    fn block_params<'t>(tape: &'t Tape, cin: usize, cout: usize, seed: u64) -> (ComplexConvParams<'t>, Var<'t>) {
        let mut init = Initializer::new(seed);
        let mut store = ParamStore::new();
        ComplexConvParams::register(&mut store, &mut init, "c", cin + 2, cout, (5, 3), true).unwrap();
        store.insert("slope", Tensor::scalar(0.25)).unwrap();
        let b = store.bind(tape, false);
        (ComplexConvParams::bind(&b, "c").unwrap(), b.get("slope").unwrap())
    }

    #[test]
    fn encode_then_decode_restores_shape() {
        let tape = Tape::new();
        for f in [8, 16, 9] {
            let x = ComplexFeature::from_planar(tape.constant(Tensor::full(&[1, 4, f, 3], 0.1))).unwrap();
            let (pe, se) = block_params(&tape, 2, 3, 1);
            let e = cscconv_block(&x, &pe, se, CoordMode::Encode).unwrap();
            assert_eq!(e.dims(), (1, 3, f.div_ceil(2), 3));
            let (pd, sd) = block_params(&tape, 3, 2, 2);
            let d = cscconv_block(&e, &pd, sd, CoordMode::Decode { out_freq: f }).unwrap();
            assert_eq!(d.dims(), (1, 2, f, 3));
        }
    }

    #[test]
    fn gradient_checks() {
        for seed in 0..5 {
            let mut init = Initializer::new(seed);
            let x = init.fan_in(&[1, 4, 6, 3], 1);
            let mut store = ParamStore::new();
            ComplexConvParams::register(&mut store, &mut init, "c", 4, 2, (5, 3), true).unwrap();
            let mut inputs = vec![x];
            for (_, t) in store.iter() {
                inputs.push(t.map(|v| v + 0.05));
            }
            inputs.push(Tensor::scalar(0.3));
            let probe = init.fan_in(&[1, 4, 3, 3], 1);
            let err = finite_diff_check(
                |tape, v| {
                    // store order: b_im, b_re, w_im, w_re
                    let p = ComplexConvParams::new(v[4], v[3], Some((v[2], v[1])))?;
                    let x = ComplexFeature::from_planar(v[0])?;
                    let y = cscconv_block(&x, &p, v[5], CoordMode::Encode)?;
                    y.planar().mul(tape.constant(probe.clone()))?.sum(&[], false)
                },
                &inputs,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
