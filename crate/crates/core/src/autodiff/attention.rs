use super::tape::{CustomOp, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Fused multi-head scaled dot-product attention.
///
/// `q` is `(N, Lq, W)`, `k` and `v` are `(N, Lk, W)`; head `h` uses feature
/// columns `h·W/heads .. (h+1)·W/heads`. Returns `(N, Lq, W)`:
/// `softmax(q_h k_hᵀ / sqrt(W/heads)) v_h` per head, heads side by side.
pub fn multi_head_attention<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>, heads: usize) -> Result<Var<'t>> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 3 || ks != vs || ks.len() != 3 || qs[0] != ks[0] || qs[2] != ks[2] {
        return Err(Error::InvalidShape(format!(
            "attention over q {qs:?}, k {ks:?}, v {vs:?}"
        )));
    }
    if heads == 0 || qs[2] % heads != 0 {
        return Err(Error::InvalidConfig(format!(
            "{heads} heads do not divide attention width {}",
            qs[2]
        )));
    }
    let g = Geom {
        n: qs[0],
        lq: qs[1],
        lk: ks[1],
        width: qs[2],
        heads,
    };
    let (qv, kv, vv) = (q.value(), k.value(), v.value());
    let (out, probs) = g.forward(qv.data(), kv.data(), vv.data());
    q.tape().custom(
        &[q, k, v],
        Tensor::new(&[g.n, g.lq, g.width], out)?,
        Box::new(AttentionOp { g, probs }),
    )
}

#[derive(Clone, Copy)]
struct Geom {
    n: usize,
    lq: usize,
    lk: usize,
    width: usize,
    heads: usize,
}

impl Geom {
    fn d(&self) -> usize {
        self.width / self.heads
    }

    fn scale(&self) -> f64 {
        1.0 / (self.d() as f64).sqrt()
    }

    /// Row `i` of head `h` in sequence `b` of a `(N, L, W)` buffer.
    fn row<'a>(&self, x: &'a [f64], len: usize, b: usize, i: usize, h: usize) -> &'a [f64] {
        let d = self.d();
        &x[(b * len + i) * self.width + h * d..][..d]
    }

    fn forward(&self, q: &[f64], k: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (d, scale) = (self.d(), self.scale());
        let mut out = vec![0.0; self.n * self.lq * self.width];
        let mut probs = vec![0.0; self.n * self.heads * self.lq * self.lk];
        for b in 0..self.n {
            for h in 0..self.heads {
                for i in 0..self.lq {
                    let qi = self.row(q, self.lq, b, i, h);
                    let p = &mut probs[((b * self.heads + h) * self.lq + i) * self.lk..][..self.lk];
                    let mut m = f64::NEG_INFINITY;
                    for (j, pj) in p.iter_mut().enumerate() {
                        let kj = self.row(k, self.lk, b, j, h);
                        *pj = scale * qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>();
                        m = m.max(*pj);
                    }
                    let mut s = 0.0;
                    for pj in p.iter_mut() {
                        *pj = (*pj - m).exp();
                        s += *pj;
                    }
                    let o = &mut out[(b * self.lq + i) * self.width + h * d..][..d];
                    for (j, pj) in p.iter_mut().enumerate() {
                        *pj /= s;
                        for (oc, vc) in o.iter_mut().zip(self.row(v, self.lk, b, j, h)) {
                            *oc += *pj * vc;
                        }
                    }
                }
            }
        }
        (out, probs)
    }
}

struct AttentionOp {
    g: Geom,
    probs: Vec<f64>,
}

impl CustomOp for AttentionOp {
    fn name(&self) -> &str {
        "multi_head_attention"
    }

    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _output: &Tensor) -> Vec<Tensor> {
        let g = self.g;
        let (d, scale) = (g.d(), g.scale());
        let (q, k, v) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let go = grad.data();
        let mut dq = vec![0.0; q.len()];
        let mut dk = vec![0.0; k.len()];
        let mut dv = vec![0.0; v.len()];
        let mut ds = vec![0.0; g.lk];
        for b in 0..g.n {
            for h in 0..g.heads {
                for i in 0..g.lq {
                    let p = &self.probs[((b * g.heads + h) * g.lq + i) * g.lk..][..g.lk];
                    let goi = g.row(go, g.lq, b, i, h);
                    let mut dot = 0.0;
                    for (j, (&pj, dsj)) in p.iter().zip(ds.iter_mut()).enumerate() {
                        let vj = g.row(v, g.lk, b, j, h);
                        *dsj = goi.iter().zip(vj).map(|(a, c)| a * c).sum::<f64>();
                        dot += pj * *dsj;
                        let off = (b * g.lk + j) * g.width + h * d;
                        for (dvc, gc) in dv[off..off + d].iter_mut().zip(goi) {
                            *dvc += pj * gc;
                        }
                    }
                    let qi = g.row(q, g.lq, b, i, h);
                    let qoff = (b * g.lq + i) * g.width + h * d;
                    for (j, (&pj, dsj)) in p.iter().zip(ds.iter()).enumerate() {
                        let s = scale * pj * (dsj - dot);
                        if s == 0.0 {
                            continue;
                        }
                        let koff = (b * g.lk + j) * g.width + h * d;
                        for c in 0..d {
                            dq[qoff + c] += s * k[koff + c];
                            dk[koff + c] += s * qi[c];
                        }
                    }
                }
            }
        }
        [(inputs[0], dq), (inputs[1], dk), (inputs[2], dv)]
            .into_iter()
            .map(|(t, data)| Tensor::new(t.shape(), data).expect("gradient shaped like input"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, Init, Tape};

    fn uniform(shape: &[usize], seed: u64) -> Tensor {
        Tensor::create(shape, Init::Uniform { lo: -1.0, hi: 1.0, seed }).unwrap()
    }

    /// Same computation from primitive ops.
    fn composite<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>, heads: usize) -> Var<'t> {
        let s = q.shape();
        let (n, lq, w) = (s[0], s[1], s[2]);
        let lk = k.shape()[1];
        let d = w / heads;
        let split = |x: Var<'t>, l| x.reshape(&[n, l, heads, d]).unwrap().permute(&[0, 2, 1, 3]).unwrap();
        let scores = split(q, lq)
            .matmul(split(k, lk).transpose_last().unwrap())
            .unwrap()
            .scale(1.0 / (d as f64).sqrt())
            .unwrap();
        scores
            .softmax(3)
            .unwrap()
            .matmul(split(v, lk))
            .unwrap()
            .permute(&[0, 2, 1, 3])
            .unwrap()
            .reshape(&[n, lq, w])
            .unwrap()
    }

    #[test]
    fn matches_composite_ops() {
        for (heads, seed) in [(1, 1), (2, 2), (4, 3)] {
            let tape = Tape::new();
            let q = tape.var(uniform(&[2, 3, 8], seed), true);
            let k = tape.var(uniform(&[2, 5, 8], seed + 10), true);
            let v = tape.var(uniform(&[2, 5, 8], seed + 20), true);
            let w = tape.constant(uniform(&[2, 3, 8], seed + 30));
            let fused = multi_head_attention(q, k, v, heads).unwrap();
            let reference = composite(q, k, v, heads);
            assert!(fused.value().max_abs_diff(&reference.value()) < 1e-14);
            let gf = tape.backward(fused.mul(w).unwrap().sum(&[], false).unwrap()).unwrap();
            let gr = tape.backward(reference.mul(w).unwrap().sum(&[], false).unwrap()).unwrap();
            for x in [q, k, v] {
                assert!(gf.get(x).unwrap().max_abs_diff(gr.get(x).unwrap()) < 1e-13);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let inputs = [uniform(&[2, 3, 4], seed), uniform(&[2, 4, 4], seed + 5), uniform(&[2, 4, 4], seed + 9)];
            let w = uniform(&[2, 3, 4], seed + 13);
            let err = finite_diff_check(
                |_, xs| {
                    let y = multi_head_attention(xs[0], xs[1], xs[2], 2)?;
                    y.mul(y.tape().constant(w.clone()))?.sum(&[], false)
                },
                &inputs,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn rejects_bad_heads_and_shapes() {
        let tape = Tape::new();
        let q = tape.constant(Tensor::zeros(&[1, 2, 6]));
        assert!(matches!(multi_head_attention(q, q, q, 4), Err(Error::InvalidConfig(_))));
        let k = tape.constant(Tensor::zeros(&[1, 2, 4]));
        assert!(matches!(multi_head_attention(q, k, k, 1), Err(Error::InvalidShape(_))));
    }
}
