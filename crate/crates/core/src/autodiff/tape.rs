//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward op appends one node holding its output value. [`Tape::backward`]
//! walks the nodes in exact reverse order and accumulates gradients of a scalar
//! loss into the [`ParamStore`] slots of the parameters that were read through
//! [`Tape::param`] or [`Tape::embed`].

use super::params::{ParamId, ParamStore};
use super::tensor::{dot, Tensor, COSINE_EPS};
use crate::error::{Error, Result};

/// A slice of one parameter's gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub param: ParamId,
    pub offset: usize,
    pub values: Vec<f64>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    EmbedRow { param: ParamId, row: usize },
    GatherRows { param: ParamId, rows: Vec<usize> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    AddRowBroadcast(Var, Var),
    MulRowBroadcast(Var, Var),
    MatMul(Var, Var),
    MatVec(Var, Var),
    Transpose(Var),
    Concat(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    StackRows(Vec<Var>),
    Row(Var, usize),
    MeanRows(Var),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    Pick(Var, Vec<usize>),
    Sigmoid(Var),
    LogSigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, f64),
    Dot(Var, Var),
    Cosine(Var, Var),
    CosineMatrix(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation. One tape per thread; tapes are never shared.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Accumulates d cos(a, b) / da and d cos(a, b) / db, scaled by `g`.
fn cosine_backward(a: &[f64], b: &[f64], g: f64, ga: &mut [f64], gb: &mut [f64]) {
    let aa = dot(a, a);
    let bb = dot(b, b);
    let s = (aa * bb).sqrt();
    if s <= COSINE_EPS {
        for k in 0..a.len() {
            ga[k] += g * b[k] / COSINE_EPS;
            gb[k] += g * a[k] / COSINE_EPS;
        }
        return;
    }
    let c = dot(a, b) / s;
    for k in 0..a.len() {
        ga[k] += g * (b[k] / s - c * a[k] / aa);
        gb[k] += g * (a[k] / s - c * b[k] / bb);
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Constant)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Result<Var> {
        self.constant(Tensor::vector(data))
    }

    /// Reads a whole parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.push("param", store.value(id).clone(), Op::Param(id))
    }

    /// Reads one row of a 2-D parameter (an embedding lookup).
    pub fn embed(&mut self, store: &ParamStore, id: ParamId, row: usize) -> Result<Var> {
        let table = store.value(id);
        if table.shape().len() != 2 || row >= table.rows() {
            return Err(shape_err("embed_lookup", table.shape(), &[row]));
        }
        let v = Tensor::vector(table.row(row).to_vec());
        self.push("embed_lookup", v, Op::EmbedRow { param: id, row })
    }

    /// Reads several rows of a 2-D parameter as a matrix, in the given order.
    /// Rows may repeat.
    pub fn gather_rows(&mut self, store: &ParamStore, id: ParamId, rows: &[usize]) -> Result<Var> {
        let table = store.value(id);
        if table.shape().len() != 2 {
            return Err(shape_err("gather_rows", table.shape(), &[]));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= table.rows()) {
            return Err(shape_err("gather_rows", table.shape(), &[bad]));
        }
        let c = table.cols();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            out.extend_from_slice(table.row(r));
        }
        let v = Tensor::matrix(rows.len(), c, out)?;
        self.push("gather_rows", v, Op::GatherRows { param: id, rows: rows.to_vec() })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(name, out, op)
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|x| f(*x)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(name, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("scale", a, |x| x * c, Op::Scale(a, c))
    }

    /// Elementwise product with a constant mask of the same size.
    pub fn mul_const(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(a).numel() {
            return Err(shape_err("mul_const", self.shape(a), &[mask.len()]));
        }
        let va = self.value(a);
        let data = va.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push("mul_const", out, Op::MulConst(a, mask))
    }

    fn broadcast_check(&self, op: &'static str, m: Var, v: Var) -> Result<(usize, usize)> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(shape_err(op, sm, sv));
        }
        Ok((sm[0], sm[1]))
    }

    /// Adds vector `v` to every row of matrix `m`.
    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = self.broadcast_check("add_row_broadcast", m, v)?;
        let (vm, vv) = (self.value(m), self.value(v));
        let mut data = vm.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += vv.data()[j];
            }
        }
        self.push("add_row_broadcast", Tensor::matrix(r, c, data)?, Op::AddRowBroadcast(m, v))
    }

    /// Multiplies every row of matrix `m` elementwise by vector `v`.
    pub fn mul_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = self.broadcast_check("mul_row_broadcast", m, v)?;
        let (vm, vv) = (self.value(m), self.value(v));
        let mut data = vm.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] *= vv.data()[j];
            }
        }
        self.push("mul_row_broadcast", Tensor::matrix(r, c, data)?, Op::MulRowBroadcast(m, v))
    }

    /// `[m x k] . [k x n] -> [m x n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = va[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &vb[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push("matmul", Tensor::matrix(m, n, out)?, Op::MatMul(a, b))
    }

    /// `[m x n] . [n] -> [m]`
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (sw, sx) = (self.shape(w), self.shape(x));
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(shape_err("matvec", sw, sx));
        }
        let (m, n) = (sw[0], sw[1]);
        let (vw, vx) = (self.value(w).data(), self.value(x).data());
        let out = (0..m).map(|i| dot(&vw[i * n..(i + 1) * n], vx)).collect();
        self.push("matvec", Tensor::vector(out), Op::MatVec(w, x))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a);
        if sa.len() != 2 {
            return Err(shape_err("transpose", sa, &[]));
        }
        let (r, c) = (sa[0], sa[1]);
        let va = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = va[i * c + j];
            }
        }
        self.push("transpose", Tensor::matrix(c, r, out)?, Op::Transpose(a))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            let sp = self.shape(p);
            if sp.len() != 1 {
                return Err(shape_err("concat", sp, &[]));
            }
            out.extend_from_slice(self.value(p).data());
        }
        self.push("concat", Tensor::vector(out), Op::Concat(parts.to_vec()))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("concat_cols of nothing"));
        };
        let rows = self.shape(first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let sp = self.shape(p);
            if sp.len() != 2 || sp[0] != rows {
                return Err(shape_err("concat_cols", self.shape(first), sp));
            }
            widths.push(sp[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let vp = self.value(p).data();
            for i in 0..rows {
                out[i * total + off..i * total + off + w].copy_from_slice(&vp[i * w..(i + 1) * w]);
            }
            off += w;
        }
        self.push("concat_cols", Tensor::matrix(rows, total, out)?, Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let sa = self.shape(a);
        if sa.len() != 2 || start >= end || end > sa[1] {
            return Err(shape_err("slice_cols", sa, &[start, end]));
        }
        let (r, c) = (sa[0], sa[1]);
        let w = end - start;
        let va = self.value(a).data();
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&va[i * c + start..i * c + end]);
        }
        self.push("slice_cols", Tensor::matrix(r, w, out)?, Op::SliceCols(a, start, end))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::invalid("stack_rows of nothing"));
        };
        let d = self.shape(first).to_vec();
        if d.len() != 1 {
            return Err(shape_err("stack_rows", &d, &[]));
        }
        let mut out = Vec::with_capacity(rows.len() * d[0]);
        for &r in rows {
            if self.shape(r) != d.as_slice() {
                return Err(shape_err("stack_rows", &d, self.shape(r)));
            }
            out.extend_from_slice(self.value(r).data());
        }
        self.push("stack_rows", Tensor::matrix(rows.len(), d[0], out)?, Op::StackRows(rows.to_vec()))
    }

    pub fn row(&mut self, m: Var, r: usize) -> Result<Var> {
        let sm = self.shape(m);
        if sm.len() != 2 || r >= sm[0] {
            return Err(shape_err("row", sm, &[r]));
        }
        let v = Tensor::vector(self.value(m).row(r).to_vec());
        self.push("row", v, Op::Row(m, r))
    }

    /// Mean over the rows of a matrix.
    pub fn mean_rows(&mut self, m: Var) -> Result<Var> {
        let sm = self.shape(m);
        if sm.len() != 2 || sm[0] == 0 {
            return Err(shape_err("mean_rows", sm, &[]));
        }
        let (r, c) = (sm[0], sm[1]);
        let vm = self.value(m).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += vm[i * c + j];
            }
        }
        out.iter_mut().for_each(|x| *x /= r as f64);
        self.push("mean", Tensor::vector(out), Op::MeanRows(m))
    }

    /// Per-row sums of a matrix.
    pub fn sum_rows(&mut self, m: Var) -> Result<Var> {
        let sm = self.shape(m);
        if sm.len() != 2 {
            return Err(shape_err("sum_rows", sm, &[]));
        }
        let c = sm[1];
        let out = self.value(m).data().chunks(c.max(1)).map(|r| r.iter().sum()).collect();
        self.push("sum_rows", Tensor::vector(out), Op::SumRows(m))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.numel() == 0 {
            return Err(shape_err("mean", va.shape(), &[]));
        }
        let s = va.data().iter().sum::<f64>() / va.numel() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a))
    }

    /// Gathers elements by flat index into a vector.
    pub fn pick(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let va = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.numel()) {
            return Err(shape_err("pick", va.shape(), &[bad]));
        }
        let out = idx.iter().map(|&i| va.data()[i]).collect();
        self.push("pick", Tensor::vector(out), Op::Pick(a, idx))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    /// `ln sigmoid(x)`, computed without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("log_sigmoid", a, |x| x.min(0.0) - (-x.abs()).exp().ln_1p(), Op::LogSigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.map("gelu", a, gelu, Op::Gelu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map("log", a, f64::ln, Op::Log(a))
    }

    /// Row-wise softmax of a matrix (a vector is treated as one row).
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let c = va.cols().max(1);
        let mut out = va.data().to_vec();
        for row in out.chunks_mut(c) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        let out = Tensor::new(va.shape().to_vec(), out)?;
        self.push("softmax", out, Op::SoftmaxRows(a))
    }

    /// Row-wise standardization `(x - mean) / sqrt(var + eps)`, no affine part.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let va = self.value(a);
        let c = va.cols().max(1);
        let mut out = va.data().to_vec();
        for row in out.chunks_mut(c) {
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mu) * inv);
        }
        let out = Tensor::new(va.shape().to_vec(), out)?;
        self.push("layer_norm", out, Op::LayerNormRows(a, eps))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s = dot(self.value(a).data(), self.value(b).data());
        self.push("dot", Tensor::scalar(s), Op::Dot(a, b))
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_sim", a, b)?;
        let s = super::tensor::cosine(self.value(a).data(), self.value(b).data());
        self.push("cosine_sim", Tensor::scalar(s), Op::Cosine(a, b))
    }

    /// Pairwise cosine similarities between the rows of `z`.
    pub fn cosine_matrix(&mut self, z: Var) -> Result<Var> {
        let sz = self.shape(z);
        if sz.len() != 2 {
            return Err(shape_err("cosine_matrix", sz, &[]));
        }
        let n = sz[0];
        let vz = self.value(z);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = super::tensor::cosine(vz.row(i), vz.row(j));
            }
        }
        self.push("cosine_matrix", Tensor::matrix(n, n, out)?, Op::CosineMatrix(z))
    }

    /// Scaled dot-product attention. Returns `(output, attention weights)`.
    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
        let dk = self.shape(k).get(1).copied().unwrap_or(1);
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, kt)?;
        let scores = self.scale(scores, 1.0 / (dk as f64).sqrt())?;
        let weights = self.softmax_rows(scores)?;
        let out = self.matmul(weights, v)?;
        Ok((out, weights))
    }

    /// Gradients of `loss` with respect to every node.
    fn gradients(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; n])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = node.value.data();
            match &node.op {
                Op::Constant | Op::Param(_) | Op::EmbedRow { .. } | Op::GatherRows { .. } => {}
                Op::Add(a, b) => {
                    let n = g.len();
                    acc(&mut grads, *a, n).iter_mut().zip(&g).for_each(|(s, x)| *s += x);
                    acc(&mut grads, *b, n).iter_mut().zip(&g).for_each(|(s, x)| *s += x);
                }
                Op::Sub(a, b) => {
                    let n = g.len();
                    acc(&mut grads, *a, n).iter_mut().zip(&g).for_each(|(s, x)| *s += x);
                    acc(&mut grads, *b, n).iter_mut().zip(&g).for_each(|(s, x)| *s -= x);
                }
                Op::Mul(a, b) => {
                    let n = g.len();
                    let va = self.value(*a).data();
                    let vb = self.value(*b).data();
                    let ga = acc(&mut grads, *a, n);
                    for i in 0..n {
                        ga[i] += g[i] * vb[i];
                    }
                    let gb = acc(&mut grads, *b, n);
                    for i in 0..n {
                        gb[i] += g[i] * va[i];
                    }
                }
                Op::Scale(a, c) => {
                    acc(&mut grads, *a, g.len()).iter_mut().zip(&g).for_each(|(s, x)| *s += c * x);
                }
                Op::MulConst(a, mask) => {
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(mask))
                        .for_each(|(s, (x, m))| *s += x * m);
                }
                Op::AddRowBroadcast(m, v) => {
                    let c = self.value(*v).numel();
                    acc(&mut grads, *m, g.len()).iter_mut().zip(&g).for_each(|(s, x)| *s += x);
                    let gv = acc(&mut grads, *v, c);
                    for (i, x) in g.iter().enumerate() {
                        gv[i % c] += x;
                    }
                }
                Op::MulRowBroadcast(m, v) => {
                    let c = self.value(*v).numel();
                    let vm = self.value(*m).data();
                    let vv = self.value(*v).data();
                    let gm = acc(&mut grads, *m, g.len());
                    for (i, x) in g.iter().enumerate() {
                        gm[i] += x * vv[i % c];
                    }
                    let gv = acc(&mut grads, *v, c);
                    for (i, x) in g.iter().enumerate() {
                        gv[i % c] += x * vm[i];
                    }
                }
                Op::MatMul(a, b) => {
                    let sa = self.shape(*a);
                    let sb = self.shape(*b);
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    let va = self.value(*a).data();
                    let vb = self.value(*b).data();
                    // dA = G . B^T
                    let ga = acc(&mut grads, *a, m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] += dot(grow, &vb[p * n..(p + 1) * n]);
                        }
                    }
                    // dB = A^T . G
                    let gb = acc(&mut grads, *b, k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = va[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (s, y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *s += x * y;
                            }
                        }
                    }
                }
                Op::MatVec(w, x) => {
                    let sw = self.shape(*w);
                    let (m, n) = (sw[0], sw[1]);
                    let vw = self.value(*w).data();
                    let vx = self.value(*x).data();
                    let gw = acc(&mut grads, *w, m * n);
                    for i in 0..m {
                        if g[i] == 0.0 {
                            continue;
                        }
                        for (s, y) in gw[i * n..(i + 1) * n].iter_mut().zip(vx) {
                            *s += g[i] * y;
                        }
                    }
                    let gx = acc(&mut grads, *x, n);
                    for i in 0..m {
                        for (s, y) in gx.iter_mut().zip(&vw[i * n..(i + 1) * n]) {
                            *s += g[i] * y;
                        }
                    }
                }
                Op::Transpose(a) => {
                    let sa = self.shape(*a);
                    let (r, c) = (sa[0], sa[1]);
                    let ga = acc(&mut grads, *a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).numel();
                        acc(&mut grads, *p, n)
                            .iter_mut()
                            .zip(&g[off..off + n])
                            .for_each(|(s, x)| *s += x);
                        off += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let rows = node.value.rows();
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let gp = acc(&mut grads, *p, rows * w);
                        for i in 0..rows {
                            for j in 0..w {
                                gp[i * w + j] += g[i * total + off + j];
                            }
                        }
                        off += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let sa = self.shape(*a);
                    let (r, c) = (sa[0], sa[1]);
                    let w = end - start;
                    let ga = acc(&mut grads, *a, r * c);
                    for i in 0..r {
                        for j in 0..w {
                            ga[i * c + start + j] += g[i * w + j];
                        }
                    }
                }
                Op::StackRows(rows) => {
                    let d = node.value.cols();
                    for (i, r) in rows.iter().enumerate() {
                        acc(&mut grads, *r, d)
                            .iter_mut()
                            .zip(&g[i * d..(i + 1) * d])
                            .for_each(|(s, x)| *s += x);
                    }
                }
                Op::Row(m, r) => {
                    let n = self.value(*m).numel();
                    let c = g.len();
                    acc(&mut grads, *m, n)[r * c..(r + 1) * c]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(s, x)| *s += x);
                }
                Op::MeanRows(m) => {
                    let sm = self.shape(*m);
                    let (r, c) = (sm[0], sm[1]);
                    let gm = acc(&mut grads, *m, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            gm[i * c + j] += g[j] / r as f64;
                        }
                    }
                }
                Op::SumRows(m) => {
                    let sm = self.shape(*m);
                    let (r, c) = (sm[0], sm[1]);
                    let gm = acc(&mut grads, *m, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            gm[i * c + j] += g[i];
                        }
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).numel();
                    acc(&mut grads, *a, n).iter_mut().for_each(|s| *s += g[0]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).numel();
                    acc(&mut grads, *a, n).iter_mut().for_each(|s| *s += g[0] / n as f64);
                }
                Op::Pick(a, idx) => {
                    let n = self.value(*a).numel();
                    let ga = acc(&mut grads, *a, n);
                    for (k, &i) in idx.iter().enumerate() {
                        ga[i] += g[k];
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                }
                Op::LogSigmoid(a) => {
                    let x = self.value(*a).data().to_vec();
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * sigmoid(-x[i]);
                    }
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                }
                Op::Gelu(a) => {
                    let va = self.value(*a).data();
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * gelu_grad(va[i]);
                    }
                }
                Op::Exp(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * out[i];
                    }
                }
                Op::Log(a) => {
                    let va = self.value(*a).data();
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] / va[i];
                    }
                }
                Op::SoftmaxRows(a) => {
                    let c = node.value.cols().max(1);
                    let ga = acc(&mut grads, *a, g.len());
                    for (r, (yrow, grow)) in out.chunks(c).zip(g.chunks(c)).enumerate() {
                        let s = dot(yrow, grow);
                        for j in 0..c {
                            ga[r * c + j] += yrow[j] * (grow[j] - s);
                        }
                    }
                }
                Op::LayerNormRows(a, eps) => {
                    let c = node.value.cols().max(1);
                    let va = self.value(*a).data();
                    let ga = acc(&mut grads, *a, g.len());
                    for (r, (yrow, grow)) in out.chunks(c).zip(g.chunks(c)).enumerate() {
                        let xrow = &va[r * c..(r + 1) * c];
                        let mu = xrow.iter().sum::<f64>() / c as f64;
                        let var = xrow.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / c as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gmean = grow.iter().sum::<f64>() / c as f64;
                        let gy = dot(grow, yrow) / c as f64;
                        for j in 0..c {
                            ga[r * c + j] += inv * (grow[j] - gmean - yrow[j] * gy);
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let va = self.value(*a).data();
                    let vb = self.value(*b).data();
                    let n = va.len();
                    let ga = acc(&mut grads, *a, n);
                    for i in 0..n {
                        ga[i] += g[0] * vb[i];
                    }
                    let gb = acc(&mut grads, *b, n);
                    for i in 0..n {
                        gb[i] += g[0] * va[i];
                    }
                }
                Op::Cosine(a, b) => {
                    let va = self.value(*a).data();
                    let vb = self.value(*b).data();
                    let n = va.len();
                    let mut da = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    cosine_backward(va, vb, g[0], &mut da, &mut db);
                    acc(&mut grads, *a, n).iter_mut().zip(&da).for_each(|(s, x)| *s += x);
                    acc(&mut grads, *b, n).iter_mut().zip(&db).for_each(|(s, x)| *s += x);
                }
                Op::CosineMatrix(z) => {
                    let vz = self.value(*z);
                    let (n, d) = (vz.rows(), vz.cols());
                    let mut gz = vec![0.0; n * d];
                    for i in 0..n {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            let mut da = vec![0.0; d];
                            let mut db = vec![0.0; d];
                            cosine_backward(vz.row(i), vz.row(j), gij, &mut da, &mut db);
                            for k in 0..d {
                                gz[i * d + k] += da[k];
                                gz[j * d + k] += db[k];
                            }
                        }
                    }
                    acc(&mut grads, *z, n * d).iter_mut().zip(&gz).for_each(|(s, x)| *s += x);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    /// Gradients of `loss` for every parameter read on this tape, as
    /// `(param, flat offset, values)` triples in tape order.
    pub fn param_grads(&self, loss: Var, store: &ParamStore) -> Result<Vec<ParamGrad>> {
        let grads = self.gradients(loss)?;
        let mut out = Vec::new();
        for (idx, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            match &self.nodes[idx].op {
                Op::Param(id) => out.push(ParamGrad { param: *id, offset: 0, values: g }),
                Op::EmbedRow { param, row } => {
                    let cols = store.value(*param).cols();
                    out.push(ParamGrad { param: *param, offset: row * cols, values: g });
                }
                Op::GatherRows { param, rows } => {
                    let cols = store.value(*param).cols();
                    for (i, &r) in rows.iter().enumerate() {
                        out.push(ParamGrad {
                            param: *param,
                            offset: r * cols,
                            values: g[i * cols..(i + 1) * cols].to_vec(),
                        });
                    }
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Accumulates d`loss`/dp into the gradient slot of every parameter read on
    /// this tape. Parameters the loss does not reach receive nothing.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.param_grads(loss, store)?;
        store.accumulate_grads(&grads, 1.0);
        Ok(())
    }

    /// Gradient of `loss` with respect to an arbitrary node, zero if unreachable.
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Result<Vec<f64>> {
        let grads = self.gradients(loss)?;
        Ok(grads
            .get(wrt.0)
            .cloned()
            .flatten()
            .unwrap_or_else(|| vec![0.0; self.value(wrt).numel()]))
    }
}
