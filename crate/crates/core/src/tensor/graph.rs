//! Tape-based reverse-mode automatic differentiation over [`Mat`].
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! the tape through [`Graph::param`], which creates at most one leaf per
//! parameter no matter how many times (or from how many branches) it is
//! requested, so gradients from every use accumulate into the same slot.

use super::mat::Mat;
use super::params::{ParamId, ParamStore};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
    Exp,
    Ln,
    Abs,
    Sqrt,
    Square,
    Softplus,
    /// `sin` on even columns, `cos` on odd columns.
    SinCos,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Unary(Var, Unary),
    SoftmaxRows(Var),
    LayerNorm(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    Maximum(Var, Var),
    Minimum(Var, Var),
    Clamp(Var, f64, f64),
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// One forward tape.
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(1024), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable free input (not a stored parameter).
    pub fn variable(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf for a stored parameter; repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let idx = id.index();
        if self.params.len() <= idx {
            self.params.resize(store.len().max(idx + 1), None);
        }
        if let Some(v) = self.params[idx] {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.params[idx] = Some(v);
        v
    }

    /// Tape node bound to `id`, if this graph has requested it.
    pub fn param_node(&self, id: ParamId) -> Option<Var> {
        self.params.get(id.index()).copied().flatten()
    }

    /// Number of distinct parameter leaves on the tape.
    pub fn param_leaf_count(&self) -> usize {
        self.params.iter().filter(|p| p.is_some()).count()
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = Mat::gemm(self.value(a), false, self.value(b), false);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = Mat::gemm(self.value(a), false, self.value(b), true);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulBt(a, b), rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let value = self.value(a).zip_map(self.value(b), f);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Maximum(a, b), f64::max)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Minimum(a, b), f64::min)
    }

    /// Adds a `1 x C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a row vector");
        let mut value = self.value(a).clone();
        assert_eq!(value.cols(), r.cols(), "add_row width mismatch");
        for i in 0..value.rows() {
            for (x, y) in value.row_mut(i).iter_mut().zip(r.data()) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// Multiplies every row of `a` elementwise by a `1 x C` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "mul_row expects a row vector");
        let mut value = self.value(a).clone();
        assert_eq!(value.cols(), r.cols(), "mul_row width mismatch");
        for i in 0..value.rows() {
            for (x, y) in value.row_mut(i).iter_mut().zip(r.data()) {
                *x *= y;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::MulRow(a, row), rg)
    }

    /// Scales row `i` of `a` by entry `i` of the `R x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let c = self.value(col);
        assert_eq!(c.cols(), 1, "mul_col expects a column vector");
        let mut value = self.value(a).clone();
        assert_eq!(value.rows(), c.rows(), "mul_col height mismatch");
        for i in 0..value.rows() {
            let s = c.data()[i];
            for x in value.row_mut(i) {
                *x *= s;
            }
        }
        let rg = self.rg(a) || self.rg(col);
        self.push(value, Op::MulCol(a, col), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn offset(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(value, Op::Offset(a), rg)
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        if kind == Unary::SinCos {
            let mut value = self.value(a).clone();
            let cols = value.cols();
            for (i, x) in value.data_mut().iter_mut().enumerate() {
                *x = if (i % cols).is_multiple_of(2) { x.sin() } else { x.cos() };
            }
            let rg = self.rg(a);
            return self.push(value, Op::Unary(a, kind), rg);
        }
        let f: fn(f64) -> f64 = match kind {
            Unary::Neg => |x| -x,
            Unary::Relu => |x| x.max(0.0),
            Unary::Gelu => gelu,
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Exp => f64::exp,
            Unary::Ln => f64::ln,
            Unary::Abs => f64::abs,
            Unary::Sqrt => f64::sqrt,
            Unary::Square => |x| x * x,
            Unary::Softplus => softplus,
            Unary::SinCos => unreachable!(),
        };
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, Op::Unary(a, kind), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Neg)
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }
    pub fn sin_cos(&mut self, a: Var) -> Var {
        self.unary(a, Unary::SinCos)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let cols = value.cols() as f64;
        let mut inv = Vec::with_capacity(value.rows());
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv.push(is);
        }
        let rg = self.rg(a);
        self.push(value, Op::LayerNorm(a, inv), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Mat::concat_cols(&mats);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Mat::concat_rows(&mats);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_rows(start, len);
        let rg = self.rg(a);
        self.push(value, Op::SliceRows(a, start), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_cols(start, len);
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.slice_rows(a, i, 1)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = {
            let (r, c) = self.shape(a);
            (r * c) as f64
        };
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `R x C -> R x 1`
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let data: Vec<f64> = (0..m.rows()).map(|i| m.row(i).iter().sum()).collect();
        let value = Mat::col_vector(&data);
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// `R x C -> 1 x C`
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut data = vec![0.0; m.cols()];
        for i in 0..m.rows() {
            for (d, x) in data.iter_mut().zip(m.row(i)) {
                *d += x;
            }
        }
        let value = Mat::row_vector(&data);
        let rg = self.rg(a);
        self.push(value, Op::SumCols(a), rg)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(value, Op::Clamp(a, lo, hi), rg)
    }

    /// Sum of a list of scalar nodes (0 when empty).
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        match terms.split_first() {
            None => self.constant(Mat::scalar(0.0)),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads, params: self.params.clone() }
    }

    fn propagate(&self, id: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let mut acc = |v: Var, m: Mat| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&m),
                slot @ None => *slot = Some(m),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, Mat::gemm(g, false, self.value(*b), true));
                }
                if self.rg(*b) {
                    acc(*b, Mat::gemm(self.value(*a), true, g, false));
                }
            }
            Op::MatMulBt(a, b) => {
                if self.rg(*a) {
                    acc(*a, Mat::gemm(g, false, self.value(*b), false));
                }
                if self.rg(*b) {
                    acc(*b, Mat::gemm(g, true, self.value(*a), false));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if self.rg(*a) {
                    acc(*a, g.zip_map(bv, |x, y| x / y));
                }
                if self.rg(*b) {
                    let t = g.zip_map(out, |x, o| x * o);
                    acc(*b, t.zip_map(bv, |x, y| -x / y));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.rg(*row) {
                    let mut r = Mat::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, x) in r.data_mut().iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    acc(*row, r);
                }
            }
            Op::MulRow(a, row) => {
                let rv = self.value(*row);
                if self.rg(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        for (x, y) in ga.row_mut(i).iter_mut().zip(rv.data()) {
                            *x *= y;
                        }
                    }
                    acc(*a, ga);
                }
                if self.rg(*row) {
                    let av = self.value(*a);
                    let mut r = Mat::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for ((d, x), y) in r.data_mut().iter_mut().zip(g.row(i)).zip(av.row(i)) {
                            *d += x * y;
                        }
                    }
                    acc(*row, r);
                }
            }
            Op::MulCol(a, col) => {
                let cv = self.value(*col);
                if self.rg(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        let s = cv.data()[i];
                        for x in ga.row_mut(i) {
                            *x *= s;
                        }
                    }
                    acc(*a, ga);
                }
                if self.rg(*col) {
                    let av = self.value(*a);
                    let data: Vec<f64> = (0..g.rows())
                        .map(|i| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum())
                        .collect();
                    acc(*col, Mat::col_vector(&data));
                }
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::Offset(a) => acc(*a, g.clone()),
            Op::Unary(a, kind) => {
                let x = self.value(*a);
                let d = match kind {
                    Unary::Neg => g.map(|v| -v),
                    Unary::Relu => g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                    Unary::Gelu => g.zip_map(x, |gv, xv| gv * gelu_grad(xv)),
                    Unary::Sigmoid => g.zip_map(out, |gv, o| gv * o * (1.0 - o)),
                    Unary::Tanh => g.zip_map(out, |gv, o| gv * (1.0 - o * o)),
                    Unary::Exp => g.zip_map(out, |gv, o| gv * o),
                    Unary::Ln => g.zip_map(x, |gv, xv| gv / xv),
                    Unary::Abs => g.zip_map(x, |gv, xv| gv * xv.signum() * f64::from(xv != 0.0)),
                    Unary::Sqrt => g.zip_map(out, |gv, o| gv * 0.5 / o),
                    Unary::Square => g.zip_map(x, |gv, xv| 2.0 * gv * xv),
                    Unary::Softplus => g.zip_map(x, |gv, xv| gv * sigmoid(xv)),
                    Unary::SinCos => {
                        let cols = x.cols();
                        let mut d = g.clone();
                        for (i, (dv, xv)) in d.data_mut().iter_mut().zip(x.data()).enumerate() {
                            *dv *= if (i % cols).is_multiple_of(2) { xv.cos() } else { -xv.sin() };
                        }
                        d
                    }
                };
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let mut d = Mat::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let y = out.row(i);
                    let gy = g.row(i);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in d.row_mut(i).iter_mut().zip(y).zip(gy) {
                        *o = yv * (gv - dot);
                    }
                }
                acc(*a, d);
            }
            Op::LayerNorm(a, inv) => {
                let cols = g.cols() as f64;
                let mut d = Mat::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let y = out.row(i);
                    let gy = g.row(i);
                    let mean_g = gy.iter().sum::<f64>() / cols;
                    let mean_gy = gy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / cols;
                    for ((o, yv), gv) in d.row_mut(i).iter_mut().zip(y).zip(gy) {
                        *o = inv[i] * (gv - mean_g - yv * mean_gy);
                    }
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if self.rg(*p) {
                        acc(*p, g.slice_cols(off, c));
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let r = self.value(*p).rows();
                    if self.rg(*p) {
                        acc(*p, g.slice_rows(off, r));
                    }
                    off += r;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut d = Mat::zeros(r, c);
                d.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                acc(*a, d);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut d = Mat::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i)[*start..start + g.cols()].copy_from_slice(g.row(i));
                }
                acc(*a, d);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Mat::filled(r, c, g.item()));
            }
            Op::SumRows(a) => {
                let (r, c) = self.shape(*a);
                let mut d = Mat::zeros(r, c);
                for i in 0..r {
                    let gv = g.data()[i];
                    d.row_mut(i).fill(gv);
                }
                acc(*a, d);
            }
            Op::SumCols(a) => {
                let (r, c) = self.shape(*a);
                let mut d = Mat::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i).copy_from_slice(g.data());
                }
                acc(*a, d);
            }
            Op::Maximum(a, b) | Op::Minimum(a, b) => {
                let is_max = matches!(node.op, Op::Maximum(..));
                let av = self.value(*a);
                let bv = self.value(*b);
                // ties route the gradient to the first operand
                let pick_a = |x: f64, y: f64| if is_max { x >= y } else { x <= y };
                if self.rg(*a) {
                    let mut d = g.clone();
                    for ((dv, &x), &y) in d.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                        if !pick_a(x, y) {
                            *dv = 0.0;
                        }
                    }
                    acc(*a, d);
                }
                if self.rg(*b) {
                    let mut d = g.clone();
                    for ((dv, &x), &y) in d.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                        if pick_a(x, y) {
                            *dv = 0.0;
                        }
                    }
                    acc(*b, d);
                }
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                acc(*a, g.zip_map(x, |gv, xv| if xv < *lo || xv > *hi { 0.0 } else { gv }));
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    params: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when no path exists.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a parameter leaf, `None` if the parameter was unused.
    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params.get(id.index()).copied().flatten().and_then(|v| self.wrt(v))
    }

    /// Dense per-parameter gradients, zero-filled for unused parameters.
    pub fn into_param_grads(mut self, store: &ParamStore) -> Vec<Mat> {
        store
            .ids()
            .map(|id| {
                let slot = self.params.get(id.index()).copied().flatten();
                slot.and_then(|v| self.grads[v.0].take()).unwrap_or_else(|| {
                    let (r, c) = store.value(id).shape();
                    Mat::zeros(r, c)
                })
            })
            .collect()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
