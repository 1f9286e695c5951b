use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Fill rule for [`Tensor::create`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    Uniform { lo: f64, hi: f64, seed: u64 },
    Normal { mean: f64, std: f64, seed: u64 },
}

/// Dense row-major array of `f64`.
///
/// An empty shape denotes a scalar holding one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn check_dims(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape(format!(
            "dimensions must be >= 1, got {shape:?}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_dims(shape)?;
        if numel(shape) != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Allocates a tensor and fills it according to `init`.
    ///
    /// Random fills draw from a ChaCha8 stream, so a given seed yields the
    /// same values on every platform.
    pub fn create(shape: &[usize], init: Init) -> Result<Self> {
        check_dims(shape)?;
        let n = numel(shape);
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Uniform { lo, hi, seed } => {
                if !(lo < hi) {
                    return Err(Error::InvalidConfig(format!(
                        "uniform bounds must satisfy lo < hi, got [{lo}, {hi})"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dist = Uniform::new(lo, hi)
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            Init::Normal { mean, std, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dist =
                    Normal::new(mean, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Uniform draw from an existing RNG; used by parameter initializers that
    /// share one stream across many tensors.
    pub fn uniform_from<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = numel(shape);
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_dims(shape)?;
        if numel(shape) != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Value at a multi-index. Panics when out of range.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of range for {:?}", self.shape);
            off = off * d + i;
        }
        self.data[off]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_constant() {
        let z = Tensor::create(&[2, 2], Init::Zeros).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let c = Tensor::create(&[3], Init::Constant(2.5)).unwrap();
        assert_eq!(c.data(), &[2.5, 2.5, 2.5]);
    }

    #[test]
    fn seeded_uniform_is_reproducible() {
        let init = Init::Uniform {
            lo: 0.0,
            hi: 1.0,
            seed: 7,
        };
        let a = Tensor::create(&[4], init).unwrap();
        let b = Tensor::create(&[4], init).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..1.0).contains(&v)));
        let c = Tensor::create(
            &[4],
            Init::Uniform {
                lo: 0.0,
                hi: 1.0,
                seed: 8,
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(
            Tensor::create(&[2, 0], Init::Zeros),
            Err(Error::InvalidShape(_))
        ));
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn row_major_strides() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[]), Vec::<usize>::new());
    }
}
