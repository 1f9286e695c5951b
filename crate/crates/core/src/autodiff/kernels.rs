//! Forward and adjoint loops shared by the tape operations.
//!
//! Everything here works on flat row-major slices; shape validation happens in
//! the tape layer before these are called.

use super::tensor::strides;

/// Trailing-aligned broadcast of two shapes, or `None` when incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out.push(match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        });
    }
    Some(out)
}

/// Strides of `shape` when viewed inside `out`; broadcast axes get stride 0.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || (shape[i - off] == 1 && out[i] != 1) {
                0
            } else {
                st[i - off]
            }
        })
        .collect()
}

/// Visits every element of `out` in row-major order together with the
/// matching offset into a strided operand.
pub(crate) fn walk1(out: &[usize], sa: &[usize], mut f: impl FnMut(usize, usize)) {
    let nd = out.len();
    if nd == 0 {
        f(0, 0);
        return;
    }
    let inner = out[nd - 1];
    let ia = sa[nd - 1];
    let outer: usize = out[..nd - 1].iter().product();
    let mut idx = vec![0usize; nd - 1];
    let mut oa = 0usize;
    let mut o = 0usize;
    for _ in 0..outer {
        for j in 0..inner {
            f(o, oa + j * ia);
            o += 1;
        }
        for d in (0..nd - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Two-operand version of [`walk1`].
pub(crate) fn walk2(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let nd = out.len();
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[nd - 1];
    let (ia, ib) = (sa[nd - 1], sb[nd - 1]);
    let outer: usize = out[..nd - 1].iter().product();
    let mut idx = vec![0usize; nd - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0usize;
    for _ in 0..outer {
        for j in 0..inner {
            f(o, oa + j * ia, ob + j * ib);
            o += 1;
        }
        for d in (0..nd - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Sums a gradient of shape `out` down to a broadcast operand of `shape`.
#[cfg(test)]
pub(crate) fn sum_to_shape(grad: &[f64], out: &[usize], shape: &[usize]) -> Vec<f64> {
    if out == shape {
        return grad.to_vec();
    }
    let mut acc = vec![0.0; shape.iter().product()];
    let st = broadcast_strides(shape, out);
    walk1(out, &st, |o, i| acc[i] += grad[o]);
    acc
}

/// `c += op(a) · op(b)` where `a`, `b`, `c` are strided views; see
/// [`matrixmultiply::dgemm`].
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c += a · b` for row-major `a: m×k`, `b: k×n`.
pub(crate) fn mm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(m, k, n, a, (k, 1), b, (n, 1), c);
}

/// `da += g · bᵀ` for `g: m×n`, `b: k×n`.
pub(crate) fn mm_nt_acc(g: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(m, n, k, g, (n, 1), b, (1, n), da);
}

/// `db += aᵀ · g` for `a: m×k`, `g: m×n`.
pub(crate) fn mm_tn_acc(a: &[f64], g: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(k, m, n, a, (1, k), g, (n, 1), db);
}

/// Geometry of a 2-D convolution over `(B, Cin, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Range of output columns whose input column `ow*sw + kw - pw` is in bounds.
    fn col_range(&self, kw: usize) -> (usize, usize) {
        // ow*sw + kw >= pw  and  ow*sw + kw - pw < w
        let lo = if kw >= self.pw {
            0
        } else {
            (self.pw - kw).div_ceil(self.sw)
        };
        let hi_excl = if self.w + self.pw > kw {
            ((self.w + self.pw - kw - 1) / self.sw + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi_excl.max(lo))
    }

    fn in_row(&self, oh: usize, kh: usize) -> Option<usize> {
        let r = oh * self.sh + kh;
        (r >= self.ph && r - self.ph < self.h).then(|| r - self.ph)
    }
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    /// Unfolds one batch item into a `(cin·kh·kw) × (oh·ow)` matrix.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let plane_in = self.h * self.w;
        let plane_out = self.oh * self.ow;
        cols.fill(0.0);
        for ci in 0..self.cin {
            let iplane = &x[ci * plane_in..][..plane_in];
            for kh in 0..self.kh {
                for kw in 0..self.kw {
                    let row = (ci * self.kh + kh) * self.kw + kw;
                    let crow = &mut cols[row * plane_out..][..plane_out];
                    let (lo, hi) = self.col_range(kw);
                    for oh in 0..self.oh {
                        let Some(ih) = self.in_row(oh, kh) else { continue };
                        let irow = &iplane[ih * self.w..][..self.w];
                        let orow = &mut crow[oh * self.ow..][..self.ow];
                        for ow in lo..hi {
                            orow[ow] = irow[ow * self.sw + kw - self.pw];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`], accumulating into `dx`.
    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let plane_in = self.h * self.w;
        let plane_out = self.oh * self.ow;
        for ci in 0..self.cin {
            let dplane = &mut dx[ci * plane_in..][..plane_in];
            for kh in 0..self.kh {
                for kw in 0..self.kw {
                    let row = (ci * self.kh + kh) * self.kw + kw;
                    let crow = &cols[row * plane_out..][..plane_out];
                    let (lo, hi) = self.col_range(kw);
                    for oh in 0..self.oh {
                        let Some(ih) = self.in_row(oh, kh) else { continue };
                        let drow = &mut dplane[ih * self.w..][..self.w];
                        let grow = &crow[oh * self.ow..][..self.ow];
                        for ow in lo..hi {
                            drow[ow * self.sw + kw - self.pw] += grow[ow];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded convolution as im2col followed by a matrix product per item.
pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let plane_in = g.cin * g.h * g.w;
    let plane_out = g.oh * g.ow;
    let kk = g.patch_len();
    let mut out = vec![0.0; g.batch * g.cout * plane_out];
    let mut cols = vec![0.0; kk * plane_out];
    for bi in 0..g.batch {
        let ob = &mut out[bi * g.cout * plane_out..][..g.cout * plane_out];
        if let Some(b) = b {
            for (co, plane) in ob.chunks_mut(plane_out).enumerate() {
                plane.fill(b[co]);
            }
        }
        g.im2col(&x[bi * plane_in..][..plane_in], &mut cols);
        mm_acc(w, &cols, ob, g.cout, kk, plane_out);
    }
    out
}

/// Adjoint of [`conv2d_forward`]: returns `(dx, dw, db)`.
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    grad: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane_in = g.cin * g.h * g.w;
    let plane_out = g.oh * g.ow;
    let kk = g.patch_len();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.cout];
    let mut cols = vec![0.0; kk * plane_out];
    for bi in 0..g.batch {
        let gb = &grad[bi * g.cout * plane_out..][..g.cout * plane_out];
        for (co, plane) in gb.chunks(plane_out).enumerate() {
            db[co] += plane.iter().sum::<f64>();
        }
        g.im2col(&x[bi * plane_in..][..plane_in], &mut cols);
        mm_nt_acc(gb, &cols, &mut dw, g.cout, kk, plane_out);
        cols.fill(0.0);
        mm_tn_acc(w, gb, &mut cols, g.cout, kk, plane_out);
        g.col2im(&cols, &mut dx[bi * plane_in..][..plane_in]);
    }
    (dx, dw, db)
}

/// Interpolation taps for one output axis: `(i0, i1, frac)`.
pub(crate) fn bilinear_taps(input: usize, output: usize, align_corners: bool) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            let src = if align_corners {
                if output == 1 {
                    0.0
                } else {
                    o as f64 * (input - 1) as f64 / (output - 1) as f64
                }
            } else {
                ((o as f64 + 0.5) * input as f64 / output as f64 - 0.5).max(0.0)
            };
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

pub(crate) fn bilinear_forward(
    x: &[f64],
    planes: usize,
    (h, w): (usize, usize),
    rows: &[(usize, usize, f64)],
    cols: &[(usize, usize, f64)],
) -> Vec<f64> {
    let (oh, ow) = (rows.len(), cols.len());
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let ip = &x[p * h * w..(p + 1) * h * w];
        let op = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (c, &(c0, c1, fc)) in cols.iter().enumerate() {
                let top = ip[r0 * w + c0] * (1.0 - fc) + ip[r0 * w + c1] * fc;
                let bot = ip[r1 * w + c0] * (1.0 - fc) + ip[r1 * w + c1] * fc;
                op[r * ow + c] = top * (1.0 - fr) + bot * fr;
            }
        }
    }
    out
}

pub(crate) fn bilinear_backward(
    grad: &[f64],
    planes: usize,
    (h, w): (usize, usize),
    rows: &[(usize, usize, f64)],
    cols: &[(usize, usize, f64)],
) -> Vec<f64> {
    let (oh, ow) = (rows.len(), cols.len());
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let gp = &grad[p * oh * ow..(p + 1) * oh * ow];
        let dp = &mut dx[p * h * w..(p + 1) * h * w];
        for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (c, &(c0, c1, fc)) in cols.iter().enumerate() {
                let gv = gp[r * ow + c];
                dp[r0 * w + c0] += gv * (1.0 - fr) * (1.0 - fc);
                dp[r0 * w + c1] += gv * (1.0 - fr) * fc;
                dp[r1 * w + c0] += gv * fr * (1.0 - fc);
                dp[r1 * w + c1] += gv * fr * fc;
            }
        }
    }
    dx
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut m = f64::NEG_INFINITY;
            for j in 0..n {
                m = m.max(x[base + j * inner]);
            }
            let mut s = 0.0;
            for j in 0..n {
                let e = (x[base + j * inner] - m).exp();
                out[base + j * inner] = e;
                s += e;
            }
            for j in 0..n {
                out[base + j * inner] /= s;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward(y: &[f64], grad: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut dot = 0.0;
            for j in 0..n {
                dot += grad[base + j * inner] * y[base + j * inner];
            }
            for j in 0..n {
                let k = base + j * inner;
                dx[k] = y[k] * (grad[k] - dot);
            }
        }
    }
    dx
}

/// Reorders axes so that output axis `i` is input axis `perm[i]`.
pub(crate) fn permute(x: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let st = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| st[p]).collect();
    let mut out = vec![0.0; x.len()];
    walk1(&out_shape, &src_strides, |o, i| out[o] = x[i]);
    (out, out_shape)
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
    }

    #[test]
    fn sum_to_shape_collapses_broadcast_axes() {
        let g = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(sum_to_shape(&g, &[2, 3], &[3]), vec![5.0, 7.0, 9.0]);
        assert_eq!(sum_to_shape(&g, &[2, 3], &[2, 1]), vec![6.0, 15.0]);
        assert_eq!(sum_to_shape(&g, &[2, 3], &[]), vec![21.0]);
    }

    #[test]
    fn permute_transposes() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let (y, s) = permute(&x, &[2, 3], &[1, 0]);
        assert_eq!(s, vec![3, 2]);
        assert_eq!(y, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn conv_column_range_handles_padding_and_stride() {
        let g = ConvGeom {
            batch: 1,
            cin: 1,
            h: 5,
            w: 5,
            cout: 1,
            kh: 3,
            kw: 3,
            sh: 1,
            sw: 2,
            ph: 1,
            pw: 1,
            oh: 5,
            ow: 3,
        };
        // kw=0 reads column 2*ow - 1: valid for ow in 1..3
        assert_eq!(g.col_range(0), (1, 3));
        // kw=2 reads column 2*ow + 1: valid for ow in 0..2
        assert_eq!(g.col_range(2), (0, 2));
    }
}
