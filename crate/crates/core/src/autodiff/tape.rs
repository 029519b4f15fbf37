//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation in execution order, so the record is
//! topologically sorted by construction. [`Tape::backward`] replays it in
//! reverse and accumulates gradients additively into each input.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Tanh,
    Sigmoid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Binary { kind: Binary, a: Var, b: Var, broadcast: bool },
    Unary { kind: Unary, x: Var },
    Scale { x: Var, factor: f64 },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape { x: Var },
    MeanSpatial { x: Var },
    GatherRows { table: Var, ids: Vec<usize> },
    Sum { x: Var },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` if `v` does not
    /// require gradients or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("grad shape mirrors value"))
    }

    /// Like [`Gradients::get`] but yields zeros for unreached variables.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Splits `shape` around `axis` into (outer, extent, inner) strides.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(data: &[f64], n: usize, out: &mut [f64]) {
    for (row, o) in data.chunks(n).zip(out.chunks_mut(n)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (oi, &x) in o.iter_mut().zip(row) {
            *oi = (x - max).exp();
            total += *oi;
        }
        for oi in o.iter_mut() {
            *oi /= total;
        }
    }
}

fn log_softmax_rows(data: &[f64], n: usize, out: &mut [f64]) {
    for (row, o) in data.chunks(n).zip(out.chunks_mut(n)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        for (oi, &x) in o.iter_mut().zip(row) {
            *oi = x - lse;
        }
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`.
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[p] += Σ_j x[j] · rows[p, j]`, each sum taken left to right. Four
/// rows run side by side so the independent chains overlap.
fn row_dots(x: &[f64], rows: &[f64], out: &mut [f64]) {
    let n = x.len();
    let mut p = 0;
    while p + 4 <= out.len() {
        let r = &rows[p * n..(p + 4) * n];
        let (r0, r1, r2, r3) = (&r[..n], &r[n..2 * n], &r[2 * n..3 * n], &r[3 * n..]);
        let mut s = [-0.0f64; 4];
        for j in 0..n {
            s[0] += x[j] * r0[j];
            s[1] += x[j] * r1[j];
            s[2] += x[j] * r2[j];
            s[3] += x[j] * r3[j];
        }
        for (o, v) in out[p..p + 4].iter_mut().zip(s) {
            *o += v;
        }
        p += 4;
    }
    for (q, o) in out.iter_mut().enumerate().skip(p) {
        *o += x.iter().zip(&rows[q * n..(q + 1) * n]).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.push_shared(Arc::new(value), requires_grad, op)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Records a leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Records a leaf without copying its data.
    pub fn shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.push_shared(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Matrix product. `a` may be a vector `[k]` (treated as `1×k`, result `[n]`)
    /// or a matrix `[m×k]`; `b` must be `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::dim("matmul", format!("{sa:?} x {sb:?}"));
        if sb.len() != 2 {
            return Err(mismatch());
        }
        let (m, k, out_shape) = match sa.len() {
            1 => (1, sa[0], vec![sb[1]]),
            2 => (sa[0], sa[1], vec![sa[0], sb[1]]),
            _ => return Err(mismatch()),
        };
        if k != sb[0] {
            return Err(mismatch());
        }
        let n = sb[1];
        let mut out = vec![0.0; m * n];
        gemm_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.tracks(&[a, b]);
        Ok(self.push(Tensor::new(out_shape, out)?, rg, Op::MatMul { a, b }))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let broadcast = if sa == sb {
            false
        } else if sb.len() == 1 && sa.len() >= 2 && sa.last() == sb.last() {
            true
        } else {
            return Err(Error::dim(
                "elementwise",
                format!("{:?} vs {:?}", sa, sb),
            ));
        };
        let shape = sa.to_vec();
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n = db.len();
        let f = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let out: Vec<f64> = da
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, db[if broadcast { i % n } else { i }]))
            .collect();
        let rg = self.tracks(&[a, b]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            },
        ))
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let v = self.value(x);
        let out: Vec<f64> = match kind {
            Unary::Tanh => v.data().iter().map(|t| t.tanh()).collect(),
            Unary::Sigmoid => v.data().iter().map(|&t| sigmoid(t)).collect(),
        };
        let value = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.tracks(&[x]);
        self.push(value, rg, Op::Unary { kind, x })
    }

    /// Binary ops accept equal shapes, or a vector `[n]` broadcast across
    /// the last axis of a rank ≥ 2 left operand.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    /// Dispatches on an [`Elementwise`] kind; unary kinds take one input,
    /// binary kinds two.
    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Tanh | Elementwise::Sigmoid => 1,
            _ => 2,
        };
        if inputs.len() != arity {
            return Err(Error::contract(format!(
                "{op:?} takes {arity} inputs, got {}",
                inputs.len()
            )));
        }
        match op {
            Elementwise::Add => self.add(inputs[0], inputs[1]),
            Elementwise::Sub => self.sub(inputs[0], inputs[1]),
            Elementwise::Mul => self.mul(inputs[0], inputs[1]),
            Elementwise::Tanh => Ok(self.tanh(inputs[0])),
            Elementwise::Sigmoid => Ok(self.sigmoid(inputs[0])),
        }
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x);
        let value = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|t| t * factor).collect(),
        )
        .expect("same shape");
        let rg = self.tracks(&[x]);
        self.push(value, rg, Op::Scale { x, factor })
    }

    /// Softmax along the last axis, max-shifted so large inputs cannot overflow.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = *v.shape().last().ok_or_else(|| Error::dim("softmax", "scalar input"))?;
        let mut out = vec![0.0; v.numel()];
        softmax_rows(v.data(), n, &mut out);
        let value = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.tracks(&[x]);
        Ok(self.push(value, rg, Op::Softmax { x }))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = *v
            .shape()
            .last()
            .ok_or_else(|| Error::dim("log_softmax", "scalar input"))?;
        let mut out = vec![0.0; v.numel()];
        log_softmax_rows(v.data(), n, &mut out);
        let value = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.tracks(&[x]);
        Ok(self.push(value, rg, Op::LogSoftmax { x }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat", "no parts"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(
                "concat",
                format!("axis {axis} out of range for rank {}", base.len()),
            ));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let agrees = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !agrees {
                return Err(Error::dim(
                    "concat",
                    format!("part shape {s:?} incompatible with {base:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let ext = self.shape(p)[axis];
                let d = self.value(p).data();
                out.extend_from_slice(&d[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let rg = self.tracks(parts);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// `len` consecutive entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::dim(
                "slice",
                format!("[{start}, {}) on axis {axis} of {s:?}", start + len),
            ));
        }
        let (outer, ext, inner) = split_axis(&s, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ext * inner + start * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.tracks(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Slice { x, axis, start }))
    }

    /// Row `i` of a matrix, as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("row", format!("expected a matrix, got {s:?}")));
        }
        let r = self.slice(x, 0, i, 1)?;
        self.reshape(r, vec![s[1]])
    }

    /// Stacks equal-length vectors into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let as_rows = rows
            .iter()
            .map(|&r| {
                let n = self.value(r).numel();
                self.reshape(r, vec![1, n])
            })
            .collect::<Result<Vec<_>>>()?;
        self.concat(&as_rows, 0)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = Tensor::clone(self.value(x)).reshaped(shape)?;
        let rg = self.tracks(&[x]);
        Ok(self.push(value, rg, Op::Reshape { x }))
    }

    /// Per-channel mean of an `[H×W×C]` grid.
    pub fn mean_over_spatial(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim(
                "mean_over_spatial",
                format!("expected [H, W, C], got {s:?}"),
            ));
        }
        let (cells, c) = (s[0] * s[1], s[2]);
        let mut out = vec![0.0; c];
        for cell in self.value(x).data().chunks(c) {
            for (o, v) in out.iter_mut().zip(cell) {
                *o += v;
            }
        }
        let denom = cells as f64;
        out.iter_mut().for_each(|o| *o /= denom);
        let rg = self.tracks(&[x]);
        Ok(self.push(Tensor::vector(out), rg, Op::MeanSpatial { x }))
    }

    /// Selects rows of a `[V×d]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::dim(
                "gather_rows",
                format!("expected a [V, d] table, got {s:?}"),
            ));
        }
        if ids.is_empty() {
            return Err(Error::dim("gather_rows", "empty id list"));
        }
        let (v, d) = (s[0], s[1]);
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(t.row(id));
        }
        let rg = self.tracks(&[table]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            rg,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.tracks(&[x]);
        self.push(Tensor::scalar(total), rg, Op::Sum { x })
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| if n.requires_grad { g } else { None })
                .collect(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, contrib: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            contrib(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (k, n) = (bv.shape()[0], bv.shape()[1]);
                let m = av.numel() / k;
                acc(*a, &|ga| {
                    // ga[i,p] += Σ_j g[i,j] · b[p,j]
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        row_dots(gr, bv.data(), &mut ga[i * k..(i + 1) * k]);
                    }
                });
                acc(*b, &|gb| {
                    // gb[p,j] += Σ_i a[i,p] · g[i,j]
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, &x) in gb[p * n..(p + 1) * n].iter_mut().zip(gr) {
                                *o += aip * x;
                            }
                        }
                    }
                });
            }
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let n = bv.len();
                let bi = |i: usize| if *broadcast { i % n } else { i };
                acc(*a, &|ga| match kind {
                    Binary::Add | Binary::Sub => ga.iter_mut().zip(g).for_each(|(o, x)| *o += x),
                    Binary::Mul => {
                        for (i, o) in ga.iter_mut().enumerate() {
                            *o += g[i] * bv[bi(i)];
                        }
                    }
                });
                acc(*b, &|gb| {
                    for (i, &gi) in g.iter().enumerate() {
                        let d = match kind {
                            Binary::Add => gi,
                            Binary::Sub => -gi,
                            Binary::Mul => gi * av[i],
                        };
                        gb[bi(i)] += d;
                    }
                });
            }
            Op::Unary { kind, x } => {
                let y = node.value.data();
                acc(*x, &|gx| {
                    for (i, o) in gx.iter_mut().enumerate() {
                        *o += match kind {
                            Unary::Tanh => g[i] * (1.0 - y[i] * y[i]),
                            Unary::Sigmoid => g[i] * y[i] * (1.0 - y[i]),
                        };
                    }
                });
            }
            Op::Scale { x, factor } => {
                acc(*x, &|gx| gx.iter_mut().zip(g).for_each(|(o, v)| *o += v * factor));
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                acc(*x, &|gx| {
                    for ((gr, yr), or) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            or[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax { x } => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                acc(*x, &|gx| {
                    for ((gr, yr), or) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                        let total: f64 = gr.iter().sum();
                        for j in 0..n {
                            or[j] += gr[j] - yr[j].exp() * total;
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let ext = self.shape(p)[*axis];
                    acc(p, &|gp| {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            let dst = o * ext * inner;
                            for (d, s) in gp[dst..dst + ext * inner]
                                .iter_mut()
                                .zip(&g[src..src + ext * inner])
                            {
                                *d += s;
                            }
                        }
                    });
                    offset += ext;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, ext, inner) = split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                acc(*x, &|gx| {
                    for o in 0..outer {
                        let dst = o * ext * inner + start * inner;
                        let src = o * len * inner;
                        for (d, s) in gx[dst..dst + len * inner]
                            .iter_mut()
                            .zip(&g[src..src + len * inner])
                        {
                            *d += s;
                        }
                    }
                });
            }
            Op::Reshape { x } => {
                acc(*x, &|gx| gx.iter_mut().zip(g).for_each(|(o, v)| *o += v));
            }
            Op::MeanSpatial { x } => {
                let s = self.shape(*x);
                let (cells, c) = (s[0] * s[1], s[2]);
                let denom = cells as f64;
                acc(*x, &|gx| {
                    for cell in gx.chunks_mut(c) {
                        for (o, v) in cell.iter_mut().zip(g) {
                            *o += v / denom;
                        }
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                let d = self.shape(*table)[1];
                acc(*table, &|gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in gt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Sum { x } => {
                let g0 = g[0];
                acc(*x, &|gx| gx.iter_mut().for_each(|o| *o += g0));
            }
        }
    }
}
