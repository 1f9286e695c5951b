use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::tensor::{check_dims, numel, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Backward rule for an operation defined outside this module.
///
/// Returns one gradient per input, each shaped like that input.
pub trait CustomOp {
    fn name(&self) -> &str;
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], output: &Tensor) -> Vec<Tensor>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

enum Op {
    Leaf,
    Binary(Binary, NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    SqrtEps(NodeId),
    Ln(NodeId),
    ClampMin(NodeId, f64),
    Prelu(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Softmax(NodeId, usize),
    Reduce {
        x: NodeId,
        kind: ReduceKind,
        axes: Vec<usize>,
        argmax: Vec<usize>,
    },
    Reshape(NodeId),
    Permute(NodeId, Vec<usize>),
    Concat(Vec<NodeId>, usize),
    Narrow {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Gather {
        x: NodeId,
        axis: usize,
        indices: Vec<usize>,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    Bilinear {
        x: NodeId,
        rows: Vec<(usize, usize, f64)>,
        cols: Vec<(usize, usize, f64)>,
    },
    Custom(Vec<NodeId>, Box<dyn CustomOp>),
}

impl Op {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary(Binary::Add, ..) => "add",
            Op::Binary(Binary::Sub, ..) => "sub",
            Op::Binary(Binary::Mul, ..) => "mul",
            Op::Binary(Binary::Div, ..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::SqrtEps(..) => "sqrt_eps",
            Op::Ln(..) => "ln",
            Op::ClampMin(..) => "clamp_min",
            Op::Prelu(..) => "prelu",
            Op::MatMul(..) => "matmul",
            Op::Softmax(..) => "softmax",
            Op::Reduce { .. } => "reduce",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::Concat(..) => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Gather { .. } => "gather",
            Op::Conv2d { .. } => "conv2d",
            Op::Bilinear { .. } => "bilinear_resize",
            Op::Custom(_, c) => c.name(),
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a define-by-run forward pass.
///
/// A tape lives for one forward/backward pass and is not shared between
/// threads.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    eps_mag: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("eps_mag", &self.eps_mag)
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by [`Tape::backward`], keyed by node id.
#[derive(Debug, Default)]
pub struct Gradients {
    map: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.map.get(&var.id)
    }

    pub fn by_id(&self, id: NodeId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn shape_err(msg: String) -> Error {
    Error::InvalidShape(msg)
}

impl Tape {
    pub const DEFAULT_EPS_MAG: f64 = 1e-12;

    pub fn new() -> Self {
        Self::with_eps_mag(Self::DEFAULT_EPS_MAG)
    }

    /// `eps_mag` is the additive term under every `sqrt_eps`.
    pub fn with_eps_mag(eps_mag: f64) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            eps_mag,
        }
    }

    pub fn eps_mag(&self) -> f64 {
        self.eps_mag
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn var(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push_node(Rc::new(value), Op::Leaf, requires_grad)
    }

    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.var(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.var(value, false)
    }

    fn push_node(&self, value: Rc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    fn push(&self, value: Tensor, op: Op) -> Result<Var<'_>> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            self.inputs_of(&op).iter().any(|&i| nodes[i].requires_grad)
        };
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name().to_string(),
                node: self.len(),
            });
        }
        Ok(self.push_node(Rc::new(value), op, requires_grad))
    }

    fn inputs_of(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Leaf => vec![],
            Op::Binary(_, a, b) | Op::Prelu(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Relu(x)
            | Op::SqrtEps(x)
            | Op::Ln(x)
            | Op::ClampMin(x, _)
            | Op::Softmax(x, _)
            | Op::Reshape(x)
            | Op::Permute(x, _) => vec![*x],
            Op::Reduce { x, .. }
            | Op::Narrow { x, .. }
            | Op::Gather { x, .. }
            | Op::Bilinear { x, .. } => vec![*x],
            Op::Concat(xs, _) | Op::Custom(xs, _) => xs.clone(),
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
        }
    }

    fn value(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a one-element `loss`.
    ///
    /// Every leaf recorded with `requires_grad` gets an entry, zero-filled if
    /// the loss does not depend on it.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::InvalidLoss("loss belongs to a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.id].value;
        if lv.len() != 1 {
            return Err(Error::InvalidLoss(format!(
                "loss must have exactly one element, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(lv.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let inputs = self.inputs_of(&node.op);
            let local = backward_op(&nodes, node, &g);
            for (inp, gi) in inputs.into_iter().zip(local) {
                if !nodes[inp].requires_grad {
                    continue;
                }
                let Some(gi) = gi else { continue };
                match &mut grads[inp] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }

        let mut map = HashMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                map.insert(id, g);
            }
        }
        Ok(Gradients { map })
    }

    /// Records the output of an externally defined operation.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        output: Tensor,
        op: Box<dyn CustomOp>,
    ) -> Result<Var<'t>> {
        self.push(output, Op::Custom(inputs.iter().map(|v| v.id).collect(), op))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat<'t>(&'t self, xs: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = xs
            .first()
            .ok_or_else(|| shape_err("concat of zero tensors".into()))?;
        let s0 = first.shape();
        if axis >= s0.len() {
            return Err(Error::InvalidAxes(format!("axis {axis} for shape {s0:?}")));
        }
        let mut total = 0;
        let values: Vec<Rc<Tensor>> = xs.iter().map(|v| v.value()).collect();
        for v in &values {
            let s = v.shape();
            if s.len() != s0.len()
                || s.iter()
                    .zip(&s0)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(shape_err(format!("concat {s:?} with {s0:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut out_shape = s0.clone();
        out_shape[axis] = total;
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for v in &values {
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        self.push(
            Tensor::from_parts(out_shape, data),
            Op::Concat(xs.iter().map(|v| v.id).collect(), axis),
        )
    }
}

fn backward_op(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<Option<Tensor>> {
    let val = |id: NodeId| -> &Tensor { &nodes[id].value };
    let out = &*node.value;
    let gd = g.data();
    match &node.op {
        Op::Leaf => vec![],
        Op::Binary(kind, a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let os = out.shape();
            let sa = kernels::broadcast_strides(ta.shape(), os);
            let sb = kernels::broadcast_strides(tb.shape(), os);
            let mut ga = vec![0.0; ta.len()];
            let mut gb = vec![0.0; tb.len()];
            let (ad, bd) = (ta.data(), tb.data());
            match kind {
                Binary::Add => kernels::walk2(os, &sa, &sb, |o, i, j| {
                    ga[i] += gd[o];
                    gb[j] += gd[o];
                }),
                Binary::Sub => kernels::walk2(os, &sa, &sb, |o, i, j| {
                    ga[i] += gd[o];
                    gb[j] -= gd[o];
                }),
                Binary::Mul => kernels::walk2(os, &sa, &sb, |o, i, j| {
                    ga[i] += gd[o] * bd[j];
                    gb[j] += gd[o] * ad[i];
                }),
                Binary::Div => kernels::walk2(os, &sa, &sb, |o, i, j| {
                    ga[i] += gd[o] / bd[j];
                    gb[j] -= gd[o] * ad[i] / (bd[j] * bd[j]);
                }),
            }
            vec![
                Some(Tensor::from_parts(ta.shape().to_vec(), ga)),
                Some(Tensor::from_parts(tb.shape().to_vec(), gb)),
            ]
        }
        Op::Scale(_, c) => vec![Some(g.map(|v| v * c))],
        Op::AddScalar(_) => vec![Some(g.clone())],
        Op::Sigmoid(_) => vec![Some(zip_map(g, out, |gv, y| gv * y * (1.0 - y)))],
        Op::Tanh(_) => vec![Some(zip_map(g, out, |gv, y| gv * (1.0 - y * y)))],
        Op::Relu(x) => vec![Some(zip_map(g, val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 }))],
        Op::SqrtEps(_) => vec![Some(zip_map(g, out, |gv, y| gv * 0.5 / y))],
        Op::Ln(x) => vec![Some(zip_map(g, val(*x), |gv, xv| gv / xv))],
        Op::ClampMin(x, c) => {
            vec![Some(zip_map(g, val(*x), |gv, xv| if xv > *c { gv } else { 0.0 }))]
        }
        Op::Prelu(x, slope) => {
            let a = val(*slope).data()[0];
            let xv = val(*x);
            let mut ds = 0.0;
            let gx: Vec<f64> = xv
                .data()
                .iter()
                .zip(gd)
                .map(|(&v, &gv)| {
                    if v > 0.0 {
                        gv
                    } else {
                        ds += gv * v;
                        gv * a
                    }
                })
                .collect();
            vec![
                Some(Tensor::from_parts(xv.shape().to_vec(), gx)),
                Some(Tensor::from_parts(val(*slope).shape().to_vec(), vec![ds])),
            ]
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (da, db) = matmul_backward(ta, tb, g);
            vec![Some(da), Some(db)]
        }
        Op::Softmax(_, axis) => {
            let dx = kernels::softmax_backward(out.data(), gd, out.shape(), *axis);
            vec![Some(Tensor::from_parts(out.shape().to_vec(), dx))]
        }
        Op::Reduce {
            x,
            kind,
            axes,
            argmax,
        } => {
            let xv = val(*x);
            let xs = xv.shape();
            let kept = kept_shape(xs, axes);
            let mut dx = vec![0.0; xv.len()];
            match kind {
                ReduceKind::Sum | ReduceKind::Mean => {
                    let scale = if *kind == ReduceKind::Mean {
                        let count: usize = axes.iter().map(|&a| xs[a]).product();
                        1.0 / count as f64
                    } else {
                        1.0
                    };
                    let st = kernels::broadcast_strides(&kept, xs);
                    kernels::walk1(xs, &st, |i, o| dx[i] = gd[o] * scale);
                }
                ReduceKind::Max => {
                    for (o, &i) in argmax.iter().enumerate() {
                        dx[i] += gd[o];
                    }
                }
            }
            vec![Some(Tensor::from_parts(xs.to_vec(), dx))]
        }
        Op::Reshape(x) => vec![Some(Tensor::from_parts(
            val(*x).shape().to_vec(),
            gd.to_vec(),
        ))],
        Op::Permute(_, perm) => {
            let inv = kernels::inverse_perm(perm);
            let (d, s) = kernels::permute(gd, g.shape(), &inv);
            vec![Some(Tensor::from_parts(s, d))]
        }
        Op::Concat(xs, axis) => {
            let os = out.shape();
            let outer: usize = os[..*axis].iter().product();
            let inner: usize = os[axis + 1..].iter().product();
            let mut offset = 0;
            xs.iter()
                .map(|&id| {
                    let t = val(id);
                    let chunk = t.shape()[*axis] * inner;
                    let mut d = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let base = o * os[*axis] * inner + offset;
                        d.extend_from_slice(&gd[base..base + chunk]);
                    }
                    offset += chunk;
                    Some(Tensor::from_parts(t.shape().to_vec(), d))
                })
                .collect()
        }
        Op::Narrow { x, axis, start } => {
            let xv = val(*x);
            let (outer, n, inner) = kernels::axis_split(xv.shape(), *axis);
            let len = out.shape()[*axis];
            let mut dx = vec![0.0; xv.len()];
            for o in 0..outer {
                let src = &gd[o * len * inner..(o + 1) * len * inner];
                let dst = o * n * inner + start * inner;
                dx[dst..dst + len * inner].copy_from_slice(src);
            }
            vec![Some(Tensor::from_parts(xv.shape().to_vec(), dx))]
        }
        Op::Gather { x, axis, indices } => {
            let xv = val(*x);
            let (outer, n, inner) = kernels::axis_split(xv.shape(), *axis);
            let m = indices.len();
            let mut dx = vec![0.0; xv.len()];
            for o in 0..outer {
                for (j, &src) in indices.iter().enumerate() {
                    let gbase = (o * m + j) * inner;
                    let dbase = (o * n + src) * inner;
                    for k in 0..inner {
                        dx[dbase + k] += gd[gbase + k];
                    }
                }
            }
            vec![Some(Tensor::from_parts(xv.shape().to_vec(), dx))]
        }
        Op::Conv2d { x, w, b, geom } => {
            let (xv, wv) = (val(*x), val(*w));
            let (dx, dw, db) = kernels::conv2d_backward(xv.data(), wv.data(), gd, geom);
            let mut v = vec![
                Some(Tensor::from_parts(xv.shape().to_vec(), dx)),
                Some(Tensor::from_parts(wv.shape().to_vec(), dw)),
            ];
            if let Some(b) = b {
                v.push(Some(Tensor::from_parts(val(*b).shape().to_vec(), db)));
            }
            v
        }
        Op::Bilinear { x, rows, cols } => {
            let xv = val(*x);
            let s = xv.shape();
            let dx = kernels::bilinear_backward(gd, s[0] * s[1], (s[2], s[3]), rows, cols);
            vec![Some(Tensor::from_parts(s.to_vec(), dx))]
        }
        Op::Custom(xs, op) => {
            let inputs: Vec<&Tensor> = xs.iter().map(|&i| val(i)).collect();
            op.backward(g, &inputs, out).into_iter().map(Some).collect()
        }
    }
}

fn zip_map(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let d = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::from_parts(g.shape().to_vec(), d)
}

fn kept_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect()
}

struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
    batch: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
}

fn matmul_plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return Err(shape_err(format!("matmul needs rank >= 2, got {a:?} and {b:?}")));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(shape_err(format!("matmul inner dimensions differ: {a:?} x {b:?}")));
    }
    let ba = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let batch = kernels::broadcast_shape(ba, bb)
        .ok_or_else(|| shape_err(format!("matmul batch dims {ba:?} vs {bb:?}")))?;
    let sa: Vec<usize> = kernels::broadcast_strides(ba, &batch)
        .into_iter()
        .map(|s| s * m * k)
        .collect();
    let sb: Vec<usize> = kernels::broadcast_strides(bb, &batch)
        .into_iter()
        .map(|s| s * k * n)
        .collect();
    let mut out_shape = batch.clone();
    out_shape.extend([m, n]);
    Ok(MatmulPlan {
        m,
        k,
        n,
        out_shape,
        batch,
        sa,
        sb,
    })
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let p = matmul_plan(a.shape(), b.shape()).expect("validated in forward");
    let (m, k, n) = (p.m, p.k, p.n);
    let mut da = vec![0.0; a.len()];
    let mut db = vec![0.0; b.len()];
    let gd = g.data();
    kernels::walk2(&p.batch, &p.sa, &p.sb, |o, ia, ib| {
        let gs = &gd[o * m * n..(o + 1) * m * n];
        kernels::mm_nt_acc(gs, &b.data()[ib..ib + k * n], &mut da[ia..ia + m * k], m, k, n);
        kernels::mm_tn_acc(&a.data()[ia..ia + m * k], gs, &mut db[ib..ib + k * n], m, k, n);
    });
    (
        Tensor::from_parts(a.shape().to_vec(), da),
        Tensor::from_parts(b.shape().to_vec(), db),
    )
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(shape_err("operands live on different tapes".into()))
        }
    }

    fn binary(&self, other: Var<'t>, kind: Binary) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let data = if a.shape() == b.shape() {
            let f = binary_fn(kind);
            Tensor::from_parts(
                a.shape().to_vec(),
                a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
            )
        } else {
            let os = kernels::broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
                shape_err(format!(
                    "cannot broadcast {:?} with {:?}",
                    a.shape(),
                    b.shape()
                ))
            })?;
            let sa = kernels::broadcast_strides(a.shape(), &os);
            let sb = kernels::broadcast_strides(b.shape(), &os);
            let mut d = vec![0.0; numel(&os)];
            let f = binary_fn(kind);
            let (ad, bd) = (a.data(), b.data());
            kernels::walk2(&os, &sa, &sb, |o, i, j| d[o] = f(ad[i], bd[j]));
            Tensor::from_parts(os, d)
        };
        self.tape.push(data, Op::Binary(kind, self.id, other.id))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Div)
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let v = self.value().map(f);
        self.tape.push(v, op)
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, c), |v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::AddScalar(self.id), |v| v + c)
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), |v| v.max(0.0))
    }

    /// `sqrt(x + eps_mag)`, finite-gradient square root.
    pub fn sqrt_eps(&self) -> Result<Var<'t>> {
        let eps = self.tape.eps_mag;
        self.unary(Op::SqrtEps(self.id), |v| (v + eps).sqrt())
    }

    /// Natural logarithm.
    pub fn ln(&self) -> Result<Var<'t>> {
        self.unary(Op::Ln(self.id), f64::ln)
    }

    /// `max(x, c)` against a constant floor.
    pub fn clamp_min(&self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::ClampMin(self.id, c), |v| v.max(c))
    }

    /// Parametric ReLU with a one-element learnable slope.
    pub fn prelu(&self, slope: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&slope)?;
        let s = slope.value();
        if s.len() != 1 {
            return Err(shape_err(format!(
                "prelu slope must have one element, got {:?}",
                s.shape()
            )));
        }
        let a = s.data()[0];
        let v = self.value().map(|x| if x > 0.0 { x } else { a * x });
        self.tape.push(v, Op::Prelu(self.id, slope.id))
    }

    /// Batched matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let p = matmul_plan(a.shape(), b.shape())?;
        let (m, k, n) = (p.m, p.k, p.n);
        let mut out = vec![0.0; numel(&p.out_shape)];
        kernels::walk2(&p.batch, &p.sa, &p.sb, |o, ia, ib| {
            kernels::mm_acc(
                &a.data()[ia..ia + m * k],
                &b.data()[ib..ib + k * n],
                &mut out[o * m * n..(o + 1) * m * n],
                m,
                k,
                n,
            );
        });
        self.tape
            .push(Tensor::from_parts(p.out_shape, out), Op::MatMul(self.id, other.id))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(Error::InvalidAxes(format!(
                "softmax axis {axis} for shape {:?}",
                x.shape()
            )));
        }
        let d = kernels::softmax_forward(x.data(), x.shape(), axis);
        self.tape.push(
            Tensor::from_parts(x.shape().to_vec(), d),
            Op::Softmax(self.id, axis),
        )
    }

    /// Sum, mean, or max over `axes`. An empty axis list reduces everything.
    pub fn reduce(&self, kind: ReduceKind, axes: &[usize], keepdims: bool) -> Result<Var<'t>> {
        let x = self.value();
        let xs = x.shape();
        let axes: Vec<usize> = if axes.is_empty() {
            (0..xs.len()).collect()
        } else {
            axes.to_vec()
        };
        for (i, &a) in axes.iter().enumerate() {
            if a >= xs.len() {
                return Err(Error::InvalidAxes(format!("axis {a} for shape {xs:?}")));
            }
            if axes[..i].contains(&a) {
                return Err(Error::InvalidAxes(format!("duplicate axis {a}")));
            }
        }
        let kept = kept_shape(xs, &axes);
        let st = kernels::broadcast_strides(&kept, xs);
        let n_out = numel(&kept);
        let mut argmax = Vec::new();
        let data = match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                let mut acc = vec![0.0; n_out];
                let xd = x.data();
                kernels::walk1(xs, &st, |i, o| acc[o] += xd[i]);
                if kind == ReduceKind::Mean {
                    let count: usize = axes.iter().map(|&a| xs[a]).product();
                    acc.iter_mut().for_each(|v| *v /= count as f64);
                }
                acc
            }
            ReduceKind::Max => {
                let mut acc = vec![f64::NEG_INFINITY; n_out];
                argmax = vec![usize::MAX; n_out];
                let xd = x.data();
                kernels::walk1(xs, &st, |i, o| {
                    if argmax[o] == usize::MAX || xd[i] > acc[o] {
                        acc[o] = xd[i];
                        argmax[o] = i;
                    }
                });
                acc
            }
        };
        let out_shape: Vec<usize> = if keepdims {
            kept
        } else {
            xs.iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect()
        };
        self.tape.push(
            Tensor::from_parts(out_shape, data),
            Op::Reduce {
                x: self.id,
                kind,
                axes,
                argmax,
            },
        )
    }

    pub fn sum(&self, axes: &[usize], keepdims: bool) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Sum, axes, keepdims)
    }

    pub fn mean(&self, axes: &[usize], keepdims: bool) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Mean, axes, keepdims)
    }

    pub fn max(&self, axes: &[usize], keepdims: bool) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Max, axes, keepdims)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        check_dims(shape)?;
        let x = self.value();
        if numel(shape) != x.len() {
            return Err(shape_err(format!(
                "cannot reshape {:?} into {shape:?}",
                x.shape()
            )));
        }
        self.tape.push(
            Tensor::from_parts(shape.to_vec(), x.data().to_vec()),
            Op::Reshape(self.id),
        )
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let nd = x.ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidAxes(format!(
                "{perm:?} is not a permutation of {nd} axes"
            )));
        }
        let (d, s) = kernels::permute(x.data(), x.shape(), perm);
        self.tape
            .push(Tensor::from_parts(s, d), Op::Permute(self.id, perm.to_vec()))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Var<'t>> {
        let nd = self.value().ndim();
        if nd < 2 {
            return Err(Error::InvalidAxes("transpose needs rank >= 2".into()));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(Error::InvalidAxes(format!("axis {axis} for {:?}", x.shape())));
        }
        if len == 0 || start + len > x.shape()[axis] {
            return Err(shape_err(format!(
                "narrow [{start}, {}) out of range for axis of {}",
                start + len,
                x.shape()[axis]
            )));
        }
        let (outer, n, inner) = kernels::axis_split(x.shape(), axis);
        let mut d = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            d.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut s = x.shape().to_vec();
        s[axis] = len;
        self.tape.push(
            Tensor::from_parts(s, d),
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
        )
    }

    /// Picks `indices` along `axis` (repeats allowed).
    pub fn gather(&self, axis: usize, indices: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(Error::InvalidAxes(format!("axis {axis} for {:?}", x.shape())));
        }
        let (outer, n, inner) = kernels::axis_split(x.shape(), axis);
        if indices.is_empty() || indices.iter().any(|&i| i >= n) {
            return Err(shape_err(format!("gather indices out of range for axis of {n}")));
        }
        let mut d = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &src in indices {
                let base = (o * n + src) * inner;
                d.extend_from_slice(&x.data()[base..base + inner]);
            }
        }
        let mut s = x.shape().to_vec();
        s[axis] = indices.len();
        self.tape.push(
            Tensor::from_parts(s, d),
            Op::Gather {
                x: self.id,
                axis,
                indices: indices.to_vec(),
            },
        )
    }

    /// 2-D convolution of `(B, Cin, H, W)` with `(Cout, Cin, kH, kW)` weights,
    /// zero padding.
    pub fn conv2d(
        &self,
        w: Var<'t>,
        b: Option<Var<'t>>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var<'t>> {
        self.same_tape(&w)?;
        let (x, wv) = (self.value(), w.value());
        let (xs, ws) = (x.shape(), wv.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(shape_err(format!("conv2d expects rank-4 input and weight, got {xs:?}, {ws:?}")));
        }
        if xs[1] != ws[1] {
            return Err(shape_err(format!(
                "conv2d channel mismatch: input has {}, weight expects {}",
                xs[1], ws[1]
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(shape_err("conv2d stride must be >= 1".into()));
        }
        let (hp, wp) = (xs[2] + 2 * pad.0, xs[3] + 2 * pad.1);
        if ws[2] > hp || ws[3] > wp {
            return Err(shape_err(format!(
                "kernel {:?} larger than padded input {hp}x{wp}",
                &ws[2..]
            )));
        }
        let bv = match b {
            Some(b) => {
                self.same_tape(&b)?;
                let bv = b.value();
                if bv.shape() != [ws[0]] {
                    return Err(shape_err(format!(
                        "conv2d bias shape {:?}, expected [{}]",
                        bv.shape(),
                        ws[0]
                    )));
                }
                Some(bv)
            }
            None => None,
        };
        let geom = ConvGeom {
            batch: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ws[0],
            kh: ws[2],
            kw: ws[3],
            sh: stride.0,
            sw: stride.1,
            ph: pad.0,
            pw: pad.1,
            oh: (hp - ws[2]) / stride.0 + 1,
            ow: (wp - ws[3]) / stride.1 + 1,
        };
        let out = kernels::conv2d_forward(x.data(), wv.data(), bv.as_ref().map(|t| t.data()), &geom);
        let shape = vec![geom.batch, geom.cout, geom.oh, geom.ow];
        self.tape.push(
            Tensor::from_parts(shape, out),
            Op::Conv2d {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                geom,
            },
        )
    }

    /// Resizes the last two axes of a `(B, C, H, W)` tensor.
    pub fn bilinear_resize(&self, out: (usize, usize), align_corners: bool) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 4 {
            return Err(shape_err(format!("bilinear_resize expects rank 4, got {s:?}")));
        }
        if out.0 == 0 || out.1 == 0 {
            return Err(shape_err("bilinear_resize output must be >= 1x1".into()));
        }
        let rows = kernels::bilinear_taps(s[2], out.0, align_corners);
        let cols = kernels::bilinear_taps(s[3], out.1, align_corners);
        let d = kernels::bilinear_forward(x.data(), s[0] * s[1], (s[2], s[3]), &rows, &cols);
        self.tape.push(
            Tensor::from_parts(vec![s[0], s[1], out.0, out.1], d),
            Op::Bilinear {
                x: self.id,
                rows,
                cols,
            },
        )
    }
}

fn binary_fn(kind: Binary) -> fn(f64, f64) -> f64 {
    match kind {
        Binary::Add => |a, b| a + b,
        Binary::Sub => |a, b| a - b,
        Binary::Mul => |a, b| a * b,
        Binary::Div => |a, b| a / b,
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
