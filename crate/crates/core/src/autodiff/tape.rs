//! Reverse-mode tape over dense matrices.
//!
//! Every primitive appends one node holding its forward value. A node requires
//! gradients when any of its inputs does; `backward` walks the nodes in reverse
//! insertion order, which is a valid reverse topological order because inputs
//! are always recorded before their consumers.

use super::tensor::{gemm_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const STANDARDIZE_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { src: Var, start: usize },
    SliceCols { src: Var, start: usize },
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    MeanRows(Var),
    MaxRows { src: Var, argmax: Vec<usize> },
    MaxPool2Rows { src: Var, argmax: Vec<usize> },
    L2Norm(Var),
    StandardizeCols { src: Var, inv_std: Vec<f64> },
    Map { src: Var, derivative: fn(f64) -> f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-use record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var, shape: [usize; 2]) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(src) {
                *a += b;
            }
        }
        None => *dst = Some(src.to_vec()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; n * m];
        gemm_acc(av.data(), bv.data(), &mut out, n, k, m);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(n, m, out)?, Op::MatMul(a, b), rg))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(op, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * factor).collect();
        let out = Tensor::new(av.rows(), av.cols(), data).expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// `a + 1ᵀ·bias` where `bias` is a `1 × cols` row broadcast over the rows of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv.data()[i % cols])
            .collect();
        let out = Tensor::new(av.rows(), cols, data)?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(out, Op::AddBias(a, bias), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        Tensor::new(av.rows(), av.cols(), data).expect("shape preserved")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.unary(a, sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.unary(a, f64::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.unary(a, softplus);
        let rg = self.rg(&[a]);
        self.push(out, Op::Softplus(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.unary(a, |x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    /// Elementwise custom map with a caller-supplied derivative.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, derivative: fn(f64) -> f64) -> Var {
        let out = self.unary(a, f);
        let rg = self.rg(&[a]);
        self.push(out, Op::Map { src: a, derivative }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_cols of nothing"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let pv = self.value(*p);
            if pv.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(*first).shape(),
                    rhs: pv.shape(),
                });
            }
            cols += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_rows of nothing"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            if pv.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(*first).shape(),
                    rhs: pv.shape(),
                });
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::new(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.rows() || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: av.shape(),
                rhs: [start, len],
            });
        }
        let cols = av.cols();
        let data = av.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::new(len, cols, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceRows { src: a, start }, rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: av.shape(),
                rhs: [start, len],
            });
        }
        let out = Tensor::from_fn(av.rows(), len, |r, c| av.get(r, start + c));
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceCols { src: a, start }, rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).clone().reshaped(rows, cols)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    fn column_sums(t: &Tensor) -> Vec<f64> {
        let mut out = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        out
    }

    /// Reduces over rows: `n × m → 1 × m`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = Tensor::row(Self::column_sums(self.value(a)));
        let rg = self.rg(&[a]);
        self.push(out, Op::SumRows(a), rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.rows() as f64;
        let out = Tensor::row(Self::column_sums(av).into_iter().map(|s| s / n).collect());
        let rg = self.rg(&[a]);
        self.push(out, Op::MeanRows(a), rg)
    }

    /// Column-wise maximum over rows; ties resolve to the first row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut best = av.row_slice(0).to_vec();
        let mut argmax = vec![0usize; av.cols()];
        for r in 1..av.rows() {
            for (c, v) in av.row_slice(r).iter().enumerate() {
                if *v > best[c] {
                    best[c] = *v;
                    argmax[c] = r;
                }
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::row(best), Op::MaxRows { src: a, argmax }, rg)
    }

    /// Max-pool of width 2 and stride 2 along rows; a trailing odd row is dropped.
    pub fn max_pool2_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let out_rows = av.rows() / 2;
        if out_rows == 0 {
            return Err(Error::ShapeMismatch {
                op: "max_pool2_rows",
                lhs: av.shape(),
                rhs: [2, av.cols()],
            });
        }
        let cols = av.cols();
        let mut data = Vec::with_capacity(out_rows * cols);
        let mut argmax = Vec::with_capacity(out_rows * cols);
        for r in 0..out_rows {
            for c in 0..cols {
                let (x0, x1) = (av.get(2 * r, c), av.get(2 * r + 1, c));
                if x1 > x0 {
                    data.push(x1);
                    argmax.push((2 * r + 1) * cols + c);
                } else {
                    data.push(x0);
                    argmax.push(2 * r * cols + c);
                }
            }
        }
        let out = Tensor::new(out_rows, cols, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::MaxPool2Rows { src: a, argmax }, rg))
    }

    /// Frobenius norm, `‖a‖₂` over all entries.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let n = self.value(a).sq_norm().sqrt();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(n), Op::L2Norm(a), rg)
    }

    /// Per-column standardization over rows: `(x − mean) / sqrt(var + 1e-5)`.
    pub fn standardize_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (n, m) = (av.rows(), av.cols());
        let means: Vec<f64> = Self::column_sums(av).into_iter().map(|s| s / n as f64).collect();
        let mut vars = vec![0.0; m];
        for r in 0..n {
            for c in 0..m {
                let d = av.get(r, c) - means[c];
                vars[c] += d * d;
            }
        }
        let inv_std: Vec<f64> = vars
            .iter()
            .map(|v| 1.0 / (v / n as f64 + STANDARDIZE_EPS).sqrt())
            .collect();
        let out = Tensor::from_fn(n, m, |r, c| (av.get(r, c) - means[c]) * inv_std[c]);
        let rg = self.rg(&[a]);
        self.push(out, Op::StandardizeCols { src: a, inv_std }, rg)
    }

    /// Computes `∂loss/∂v` for every recorded `v` that requires gradients.
    ///
    /// A tape supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: lv.shape(),
                rhs: [1, 1],
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = &node.value;
            let wants = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    if wants(a) {
                        let bt = bv.transpose();
                        let mut ga = vec![0.0; n * k];
                        gemm_acc(&g, bt.data(), &mut ga, n, m, k);
                        add_into(&mut grads[a.0], &ga);
                    }
                    if wants(b) {
                        let at = av.transpose();
                        let mut gb = vec![0.0; k * m];
                        gemm_acc(at.data(), &g, &mut gb, k, n, m);
                        add_into(&mut grads[b.0], &gb);
                    }
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        add_into(&mut grads[a.0], &g);
                    }
                    if wants(b) {
                        add_into(&mut grads[b.0], &g);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        add_into(&mut grads[a.0], &g);
                    }
                    if wants(b) {
                        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                        add_into(&mut grads[b.0], &neg);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if wants(a) {
                        let ga: Vec<f64> = g.iter().zip(bv.data()).map(|(g, b)| g * b).collect();
                        add_into(&mut grads[a.0], &ga);
                    }
                    if wants(b) {
                        let gb: Vec<f64> = g.iter().zip(av.data()).map(|(g, a)| g * a).collect();
                        add_into(&mut grads[b.0], &gb);
                    }
                }
                Op::Scale(a, f) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * f).collect();
                    add_into(&mut grads[a.0], &ga);
                }
                Op::AddBias(a, bias) => {
                    if wants(a) {
                        add_into(&mut grads[a.0], &g);
                    }
                    if wants(bias) {
                        let gt = Tensor::new(y.rows(), y.cols(), g.clone())?;
                        add_into(&mut grads[bias.0], &Self::column_sums(&gt));
                    }
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g.iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                    add_into(&mut grads[a.0], &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                    add_into(&mut grads[a.0], &ga);
                }
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    let ga: Vec<f64> = g.iter().zip(x.data()).map(|(g, x)| g * sigmoid(*x)).collect();
                    add_into(&mut grads[a.0], &ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(x.data())
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    add_into(&mut grads[a.0], &ga);
                }
                Op::Map { src, derivative } => {
                    let x = self.value(*src);
                    let ga: Vec<f64> = g.iter().zip(x.data()).map(|(g, x)| g * derivative(*x)).collect();
                    add_into(&mut grads[src.0], &ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.value(*p).cols();
                        if wants(p) {
                            let gp: Vec<f64> = (0..y.rows())
                                .flat_map(|r| g[r * y.cols() + offset..r * y.cols() + offset + pc].iter().copied())
                                .collect();
                            add_into(&mut grads[p.0], &gp);
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let plen = self.value(*p).len();
                        if wants(p) {
                            add_into(&mut grads[p.0], &g[offset..offset + plen]);
                        }
                        offset += plen;
                    }
                }
                Op::SliceRows { src, start } => {
                    let sv = self.value(*src);
                    let mut gs = vec![0.0; sv.len()];
                    let off = start * sv.cols();
                    gs[off..off + g.len()].copy_from_slice(&g);
                    add_into(&mut grads[src.0], &gs);
                }
                Op::SliceCols { src, start } => {
                    let sv = self.value(*src);
                    let mut gs = vec![0.0; sv.len()];
                    for r in 0..y.rows() {
                        for c in 0..y.cols() {
                            gs[r * sv.cols() + start + c] = g[r * y.cols() + c];
                        }
                    }
                    add_into(&mut grads[src.0], &gs);
                }
                Op::Reshape(a) => add_into(&mut grads[a.0], &g),
                Op::Transpose(a) => {
                    let gt = Tensor::new(y.rows(), y.cols(), g)?.transpose();
                    add_into(&mut grads[a.0], gt.data());
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    add_into(&mut grads[a.0], &vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    add_into(&mut grads[a.0], &vec![g[0] / n as f64; n]);
                }
                Op::SumRows(a) | Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let scale = if matches!(node.op, Op::MeanRows(_)) {
                        1.0 / av.rows() as f64
                    } else {
                        1.0
                    };
                    let ga: Vec<f64> = (0..av.len()).map(|i| g[i % av.cols()] * scale).collect();
                    add_into(&mut grads[a.0], &ga);
                }
                Op::MaxRows { src, argmax } => {
                    let sv = self.value(*src);
                    let mut gs = vec![0.0; sv.len()];
                    for (c, r) in argmax.iter().enumerate() {
                        gs[r * sv.cols() + c] += g[c];
                    }
                    add_into(&mut grads[src.0], &gs);
                }
                Op::MaxPool2Rows { src, argmax } => {
                    let sv = self.value(*src);
                    let mut gs = vec![0.0; sv.len()];
                    for (o, &flat) in argmax.iter().enumerate() {
                        gs[flat] += g[o];
                    }
                    add_into(&mut grads[src.0], &gs);
                }
                Op::L2Norm(a) => {
                    let av = self.value(*a);
                    let norm = y.item();
                    let ga: Vec<f64> = if norm > 0.0 {
                        av.data().iter().map(|x| g[0] * x / norm).collect()
                    } else {
                        vec![0.0; av.len()]
                    };
                    add_into(&mut grads[a.0], &ga);
                }
                Op::StandardizeCols { src, inv_std } => {
                    let (n, m) = (y.rows(), y.cols());
                    let nf = n as f64;
                    let mut sum_g = vec![0.0; m];
                    let mut sum_gy = vec![0.0; m];
                    for r in 0..n {
                        for c in 0..m {
                            let gi = g[r * m + c];
                            sum_g[c] += gi;
                            sum_gy[c] += gi * y.get(r, c);
                        }
                    }
                    let mut gs = vec![0.0; n * m];
                    for r in 0..n {
                        for c in 0..m {
                            gs[r * m + c] = inv_std[c] / nf
                                * (nf * g[r * m + c] - sum_g[c] - y.get(r, c) * sum_gy[c]);
                        }
                    }
                    add_into(&mut grads[src.0], &gs);
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.map(|g| Tensor::new(node.value.rows(), node.value.cols(), g).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }
}
