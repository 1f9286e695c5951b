use super::feature::ComplexFeature;
use super::params::{Bound, Initializer, ParamStore};
use crate::autodiff::{multi_head_attention, Tensor, Var};
use crate::error::{Error, Result};

/// Projections of a multi-head attention block.
///
/// `wq`, `wk`, `wv` are `(d_in, width)` and `wo` is `(width, d_in)`; the width
/// splits into `heads` heads of `width / heads` features each.
#[derive(Clone, Copy)]
pub struct AttentionParams<'t> {
    pub wq: Var<'t>,
    pub wk: Var<'t>,
    pub wv: Var<'t>,
    pub wo: Var<'t>,
    pub heads: usize,
}

impl<'t> AttentionParams<'t> {
    pub fn new(wq: Var<'t>, wk: Var<'t>, wv: Var<'t>, wo: Var<'t>, heads: usize) -> Result<Self> {
        let q = wq.shape();
        if q.len() != 2 || wk.shape() != q || wv.shape() != q || wo.shape() != [q[1], q[0]] {
            return Err(Error::InvalidShape(format!(
                "attention projections disagree: q {:?}, k {:?}, v {:?}, o {:?}",
                q,
                wk.shape(),
                wv.shape(),
                wo.shape()
            )));
        }
        if heads == 0 || q[1] % heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "{heads} heads do not divide attention width {}",
                q[1]
            )));
        }
        Ok(Self { wq, wk, wv, wo, heads })
    }

    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        d_in: usize,
        width: usize,
        heads: usize,
    ) -> Result<()> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "{heads} heads do not divide attention width {width}"
            )));
        }
        for name in ["wq", "wk", "wv"] {
            store.insert(format!("{prefix}.{name}"), init.fan_in(&[d_in, width], d_in))?;
        }
        store.insert(format!("{prefix}.wo"), init.fan_in(&[width, d_in], width))
    }

    pub fn bind(b: &Bound<'t>, prefix: &str, heads: usize) -> Result<Self> {
        Self::new(
            b.get(&format!("{prefix}.wq"))?,
            b.get(&format!("{prefix}.wk"))?,
            b.get(&format!("{prefix}.wv"))?,
            b.get(&format!("{prefix}.wo"))?,
            heads,
        )
    }

    pub fn d_in(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.wq.shape()[1]
    }
}

/// Scaled dot-product attention of `(N, Tq, d_in)` queries over
/// `(N, Tk, d_in)` keys/values, returning `(N, Tq, d_in)`.
pub fn attend<'t>(query: Var<'t>, memory: Var<'t>, p: &AttentionParams<'t>) -> Result<Var<'t>> {
    let (qs, ms) = (query.shape(), memory.shape());
    if qs.len() != 3 || ms.len() != 3 || qs[0] != ms[0] || qs[2] != p.d_in() || ms[2] != p.d_in() {
        return Err(Error::InvalidShape(format!(
            "attention over {qs:?} and {ms:?} with input width {}",
            p.d_in()
        )));
    }
    let q = query.matmul(p.wq)?;
    let k = memory.matmul(p.wk)?;
    let v = memory.matmul(p.wv)?;
    let ctx = multi_head_attention(q, k, v, p.heads)?;
    ctx.matmul(p.wo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Time,
    Frequency,
}

/// Self-attention along one axis, every position of the other axis treated
/// as an independent sequence; the 2C real and imaginary channel values form
/// the feature vector.
pub fn axis_attention<'t>(
    x: &ComplexFeature<'t>,
    axis: Axis,
    p: &AttentionParams<'t>,
) -> Result<ComplexFeature<'t>> {
    let (b, c, f, t) = x.dims();
    if p.d_in() != 2 * c {
        return Err(Error::InvalidConfig(format!(
            "attention expects {} features, feature map has {}",
            p.d_in(),
            2 * c
        )));
    }
    // (B, 2C, F, T) -> (B, F, T, 2C) for time, (B, T, F, 2C) for frequency
    let (perm, outer, len): (&[usize], usize, usize) = match axis {
        Axis::Time => (&[0, 2, 3, 1], f, t),
        Axis::Frequency => (&[0, 3, 2, 1], t, f),
    };
    let seq = x.planar().permute(perm)?.reshape(&[b * outer, len, 2 * c])?;
    let out = attend(seq, seq, p)?.reshape(&[b, outer, len, 2 * c])?;
    let back: &[usize] = match axis {
        Axis::Time => &[0, 3, 1, 2],
        Axis::Frequency => &[0, 3, 2, 1],
    };
    ComplexFeature::from_planar(out.permute(back)?)
}

/// Squeeze-excitation weights of the channel attention: `fc1` is
/// `(C, C/r)`, `fc2` is `(C/r, C)`, with biases.
#[derive(Clone, Copy)]
pub struct ChannelAttentionParams<'t> {
    pub fc1_w: Var<'t>,
    pub fc1_b: Var<'t>,
    pub fc2_w: Var<'t>,
    pub fc2_b: Var<'t>,
}

/// Hidden size of the channel attention bottleneck.
pub fn reduced_channels(c: usize, reduction: usize) -> usize {
    (c / reduction.max(1)).max(1)
}

impl<'t> ChannelAttentionParams<'t> {
    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        c: usize,
        reduction: usize,
    ) -> Result<()> {
        let r = reduced_channels(c, reduction);
        store.insert(format!("{prefix}.fc1_w"), init.fan_in(&[c, r], c))?;
        store.insert(format!("{prefix}.fc1_b"), Tensor::zeros(&[r]))?;
        store.insert(format!("{prefix}.fc2_w"), init.fan_in(&[r, c], r))?;
        store.insert(format!("{prefix}.fc2_b"), Tensor::zeros(&[c]))
    }

    pub fn bind(b: &Bound<'t>, prefix: &str) -> Result<Self> {
        Ok(Self {
            fc1_w: b.get(&format!("{prefix}.fc1_w"))?,
            fc1_b: b.get(&format!("{prefix}.fc1_b"))?,
            fc2_w: b.get(&format!("{prefix}.fc2_w"))?,
            fc2_b: b.get(&format!("{prefix}.fc2_b"))?,
        })
    }
}

/// Channel weights `α` of shape `(B, C)`, each in (0, 1).
pub fn channel_attention<'t>(x: &ComplexFeature<'t>, p: &ChannelAttentionParams<'t>) -> Result<Var<'t>> {
    let c = x.channels();
    if p.fc1_w.shape().first() != Some(&c) || p.fc2_w.shape().get(1) != Some(&c) {
        return Err(Error::InvalidShape(format!(
            "channel attention for {c} channels got fc1 {:?}, fc2 {:?}",
            p.fc1_w.shape(),
            p.fc2_w.shape()
        )));
    }
    let pooled = x.magnitude()?.mean(&[2, 3], false)?;
    let hidden = pooled.matmul(p.fc1_w)?.add(p.fc1_b)?.relu()?;
    hidden.matmul(p.fc2_w)?.add(p.fc2_b)?.sigmoid()
}
