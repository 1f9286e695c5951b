use super::conv::{complex_conv2d, ComplexConvParams};
use super::feature::ComplexFeature;
use super::params::{Bound, Initializer, ParamStore};
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_BHME_KERNELS: [usize; 4] = [3, 5, 7, 11];

/// Harmonic multi-scale enhancement: parallel `k×1` complex convs along
/// frequency, fused back onto a residual path scaled by `alpha_b`.
pub struct BhmeParams<'t> {
    pub pre: ComplexConvParams<'t>,
    pub branches: Vec<ComplexConvParams<'t>>,
    pub fuse: ComplexConvParams<'t>,
    /// One-element residual scale.
    pub alpha_b: Var<'t>,
}

fn check_kernels(kernels: &[usize]) -> Result<()> {
    if kernels.is_empty() || kernels.iter().any(|k| k % 2 == 0) {
        return Err(Error::InvalidConfig(format!(
            "harmonic branch kernels must be a non-empty set of odd sizes, got {kernels:?}"
        )));
    }
    Ok(())
}

impl<'t> BhmeParams<'t> {
    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        c: usize,
        kernels: &[usize],
    ) -> Result<()> {
        check_kernels(kernels)?;
        ComplexConvParams::register(store, init, &format!("{prefix}.pre"), c, c, (1, 1), true)?;
        for &k in kernels {
            ComplexConvParams::register(store, init, &format!("{prefix}.k{k}"), c, c, (k, 1), true)?;
        }
        ComplexConvParams::register(store, init, &format!("{prefix}.fuse"), kernels.len() * c, c, (1, 1), true)?;
        store.insert(format!("{prefix}.alpha_b"), Tensor::scalar(0.0))
    }

    pub fn bind(b: &Bound<'t>, prefix: &str, kernels: &[usize]) -> Result<Self> {
        check_kernels(kernels)?;
        Ok(Self {
            pre: ComplexConvParams::bind(b, &format!("{prefix}.pre"))?,
            branches: kernels
                .iter()
                .map(|k| ComplexConvParams::bind(b, &format!("{prefix}.k{k}")))
                .collect::<Result<_>>()?,
            fuse: ComplexConvParams::bind(b, &format!("{prefix}.fuse"))?,
            alpha_b: b.get(&format!("{prefix}.alpha_b"))?,
        })
    }
}

/// `Y = X + α_b · Fuse(concat_k Conv_(k,1)(Pre(X)))`, same-padded along frequency.
pub fn bhme_forward<'t>(x: &ComplexFeature<'t>, p: &BhmeParams<'t>) -> Result<ComplexFeature<'t>> {
    let xc = complex_conv2d(x, &p.pre, (1, 1), (0, 0))?;
    let hs = p
        .branches
        .iter()
        .map(|br| {
            let (k, kt) = br.kernel();
            if kt != 1 {
                return Err(Error::InvalidShape(format!("harmonic branch kernel {k}x{kt} must be k×1")));
            }
            complex_conv2d(&xc, br, (1, 1), (k / 2, 0))
        })
        .collect::<Result<Vec<_>>>()?;
    let fused = complex_conv2d(&ComplexFeature::concat(&hs)?, &p.fuse, (1, 1), (0, 0))?;
    x.add(&fused.map_planar(|v| v.mul(p.alpha_b))?)
}

/// One harmonic branch output for a given input, exposed for inspection.
pub fn bhme_branch<'t>(x: &ComplexFeature<'t>, p: &BhmeParams<'t>, index: usize) -> Result<ComplexFeature<'t>> {
    let br = p
        .branches
        .get(index)
        .ok_or_else(|| Error::InvalidConfig(format!("no harmonic branch {index}")))?;
    let xc = complex_conv2d(x, &p.pre, (1, 1), (0, 0))?;
    complex_conv2d(&xc, br, (1, 1), (br.kernel().0 / 2, 0))
}
