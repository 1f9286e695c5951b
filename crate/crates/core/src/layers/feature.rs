use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

/// Complex feature map on the tape.
///
/// Stored planar as `(B, 2C, F, T)`: channels `0..C` hold real parts and
/// `C..2C` the matching imaginary parts, so convolutions apply directly.
/// [`ComplexFeature::from_interleaved`] and [`ComplexFeature::to_interleaved`]
/// convert from and to the `(B, F, T, C, 2)` layout.
#[derive(Clone, Copy)]
pub struct ComplexFeature<'t> {
    var: Var<'t>,
}

impl<'t> ComplexFeature<'t> {
    /// Wraps a planar `(B, 2C, F, T)` variable.
    pub fn from_planar(var: Var<'t>) -> Result<Self> {
        let s = var.shape();
        if s.len() != 4 || s[1] % 2 != 0 || s[1] == 0 {
            return Err(Error::InvalidShape(format!(
                "planar complex feature must be (B, 2C, F, T), got {s:?}"
            )));
        }
        Ok(Self { var })
    }

    /// Wraps a `(B, F, T, C, 2)` variable.
    pub fn from_interleaved(var: Var<'t>) -> Result<Self> {
        let s = var.shape();
        if s.len() != 5 || s[4] != 2 {
            return Err(Error::InvalidShape(format!(
                "complex feature must be (B, F, T, C, 2), got {s:?}"
            )));
        }
        let (b, f, t, c) = (s[0], s[1], s[2], s[3]);
        // (B, F, T, C, 2) -> (B, 2, C, F, T) -> (B, 2C, F, T)
        let planar = var.permute(&[0, 4, 3, 1, 2])?.reshape(&[b, 2 * c, f, t])?;
        Ok(Self { var: planar })
    }

    pub fn to_interleaved(&self) -> Result<Var<'t>> {
        let (b, c, f, t) = self.dims();
        self.var.reshape(&[b, 2, c, f, t])?.permute(&[0, 3, 4, 2, 1])
    }

    pub fn planar(&self) -> Var<'t> {
        self.var
    }

    /// `(B, C, F, T)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.var.shape();
        (s[0], s[1] / 2, s[2], s[3])
    }

    pub fn channels(&self) -> usize {
        self.dims().1
    }

    pub fn re(&self) -> Result<Var<'t>> {
        self.var.narrow(1, 0, self.channels())
    }

    pub fn im(&self) -> Result<Var<'t>> {
        let c = self.channels();
        self.var.narrow(1, c, c)
    }

    /// Builds a feature from separate `(B, C, F, T)` real and imaginary parts.
    pub fn from_parts(re: Var<'t>, im: Var<'t>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::InvalidShape(format!(
                "real part {:?} and imaginary part {:?} differ",
                re.shape(),
                im.shape()
            )));
        }
        Self::from_planar(re.tape().concat(&[re, im], 1)?)
    }

    /// Channel-wise concatenation of complex features.
    pub fn concat(xs: &[ComplexFeature<'t>]) -> Result<Self> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidShape("concat of zero features".into()))?;
        let tape = first.var.tape();
        let mut parts = Vec::with_capacity(2 * xs.len());
        for x in xs {
            parts.push(x.re()?);
        }
        for x in xs {
            parts.push(x.im()?);
        }
        Self::from_planar(tape.concat(&parts, 1)?)
    }

    /// `sqrt(re² + im² + ε_mag)` as `(B, C, F, T)`.
    pub fn magnitude(&self) -> Result<Var<'t>> {
        let (re, im) = (self.re()?, self.im()?);
        re.mul(re)?.add(im.mul(im)?)?.sqrt_eps()
    }

    /// Scales both parts of every channel by a real `(B, C, ..)` broadcastable factor.
    pub fn scale_channels(&self, factor: Var<'t>) -> Result<Self> {
        let both = self.var.tape().concat(&[factor, factor], 1)?;
        Self::from_planar(self.var.mul(both)?)
    }

    pub fn add(&self, other: &ComplexFeature<'t>) -> Result<Self> {
        Self::from_planar(self.var.add(other.var)?)
    }

    pub fn map_planar(&self, f: impl FnOnce(Var<'t>) -> Result<Var<'t>>) -> Result<Self> {
        Self::from_planar(f(self.var)?)
    }

    pub fn value(&self) -> std::rc::Rc<Tensor> {
        self.var.value()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn interleaved_round_trip_and_planes() {
        let tape = Tape::new();
        // (1, 2, 1, 2, 2): F=2, T=1, C=2
        let data: Vec<f64> = (0..8).map(f64::from).collect();
        let x = tape.constant(Tensor::new(&[1, 2, 1, 2, 2], data.clone()).unwrap());
        let cf = ComplexFeature::from_interleaved(x).unwrap();
        assert_eq!(cf.dims(), (1, 2, 2, 1));
        // element (f, c) re = 4f + 2c, im = 4f + 2c + 1
        let re = cf.re().unwrap().value();
        assert_eq!(re.data(), &[0.0, 4.0, 2.0, 6.0]);
        let im = cf.im().unwrap().value();
        assert_eq!(im.data(), &[1.0, 5.0, 3.0, 7.0]);
        assert_eq!(cf.to_interleaved().unwrap().value().data(), &data[..]);
    }

    #[test]
    fn last_axis_must_be_two() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 2, 1, 3]));
        assert!(matches!(ComplexFeature::from_interleaved(x), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn concat_keeps_real_and_imag_together() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::new(&[1, 2, 1, 1], vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::new(&[1, 2, 1, 1], vec![3.0, 4.0]).unwrap());
        let a = ComplexFeature::from_planar(a).unwrap();
        let b = ComplexFeature::from_planar(b).unwrap();
        let c = ComplexFeature::concat(&[a, b]).unwrap();
        assert_eq!(c.value().data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn magnitude_is_finite_at_zero() {
        let tape = Tape::new();
        let x = ComplexFeature::from_planar(tape.constant(Tensor::zeros(&[1, 2, 3, 3]))).unwrap();
        let m = x.magnitude().unwrap().value();
        assert!(m.data().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
