use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    SoftmaxRows(Var, f64),
    LogSumExpRows(Var),
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    MaskMul(Var, Tensor),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    RepeatRow(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ArRecurrence { eta: Var, phi: Var, b: Var, s0: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of operations recorded during a forward pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: Vec<Var>,
}

/// Gradients of a scalar loss with respect to every leaf of the graph.
pub struct Gradients {
    by_leaf: Vec<(Var, Tensor)>,
}

impl Gradients {
    /// Gradient for a leaf; `None` if `v` is not a leaf of the graph.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_leaf.iter().find(|(l, _)| *l == v).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.by_leaf.iter().map(|(v, g)| (*v, g))
    }

    pub fn into_vec(self) -> Vec<(Var, Tensor)> {
        self.by_leaf
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: vec![a.rows(), a.cols()],
        right: vec![b.rows(), b.cols()],
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (r, c) = a.dims();
    Tensor::matrix(r, c, a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

fn unary(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let (r, c) = a.dims();
    Tensor::matrix(r, c, a.data().iter().map(|&x| f(x)).collect())
}

impl Graph {
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

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if let Some(i) = value.first_non_finite() {
            return Err(Error::NonFinite {
                op: name.to_string(),
                index: Some(i),
            });
        }
        let id = Var(self.nodes.len());
        self.nodes.push(Node { value, op, needs_grad });
        Ok(id)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Differentiable input. Gradients are reported for every leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let id = Var(self.nodes.len());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        self.leaves.push(id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        let id = Var(self.nodes.len());
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            needs_grad: false,
        });
        id
    }

    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_dims(y) {
            return Err(mismatch("add", x, y));
        }
        let out = zip_map(x, y, |p, q| p + q);
        let ng = self.ng(&[a, b]);
        self.push("add", out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_dims(y) {
            return Err(mismatch("sub", x, y));
        }
        let out = zip_map(x, y, |p, q| p - q);
        let ng = self.ng(&[a, b]);
        self.push("sub", out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_dims(y) {
            return Err(mismatch("mul", x, y));
        }
        let out = zip_map(x, y, |p, q| p * q);
        let ng = self.ng(&[a, b]);
        self.push("mul", out, Op::Mul(a, b), ng)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_dims(y) {
            return Err(mismatch("div", x, y));
        }
        let out = zip_map(x, y, |p, q| p / q);
        let ng = self.ng(&[a, b]);
        self.push("div", out, Op::Div(a, b), ng)
    }

    /// `x + 1 * bias` with `bias` a `1 x c` row added to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (r, c) = xv.dims();
        if bv.dims() != (1, c) {
            return Err(mismatch("add_row", xv, bv));
        }
        let mut out = xv.clone().reshape(vec![r, c])?;
        for i in 0..r {
            for (o, b) in out.row_mut(i).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let ng = self.ng(&[x, bias]);
        self.push("add_row", out, Op::AddRow(x, bias), ng)
    }

    /// Every row of `x` multiplied elementwise by the `1 x c` row `gain`.
    pub fn mul_row(&mut self, x: Var, gain: Var) -> Result<Var> {
        let (xv, gv) = (self.value(x), self.value(gain));
        let (r, c) = xv.dims();
        if gv.dims() != (1, c) {
            return Err(mismatch("mul_row", xv, gv));
        }
        let mut out = xv.clone().reshape(vec![r, c])?;
        for i in 0..r {
            for (o, g) in out.row_mut(i).iter_mut().zip(gv.data()) {
                *o *= g;
            }
        }
        let ng = self.ng(&[x, gain]);
        self.push("mul_row", out, Op::MulRow(x, gain), ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = unary(self.value(x), |v| v * s);
        let ng = self.ng(&[x]);
        self.push("scale", out, Op::Scale(x, s), ng)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = unary(self.value(x), |v| v + s);
        let ng = self.ng(&[x]);
        self.push("add_scalar", out, Op::AddScalar(x), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (m, k) = x.dims();
        let (k2, n) = y.dims();
        if k != k2 {
            return Err(mismatch("matmul", x, y));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, x.data(), false, y.data(), false, 0.0, &mut out);
        let ng = self.ng(&[a, b]);
        self.push("matmul", Tensor::matrix(m, n, out), Op::MatMul(a, b), ng)
    }

    /// `x @ w + bias`.
    pub fn affine(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_row(h, bias)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = unary(self.value(x), |v| if v > 0.0 { v } else { 0.0 });
        let ng = self.ng(&[x]);
        self.push("relu", out, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = unary(self.value(x), f64::tanh);
        let ng = self.ng(&[x]);
        self.push("tanh", out, Op::Tanh(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = unary(self.value(x), f64::exp);
        let ng = self.ng(&[x]);
        self.push("exp", out, Op::Exp(x), ng)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = unary(self.value(x), f64::ln);
        let ng = self.ng(&[x]);
        self.push("log", out, Op::Log(x), ng)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = unary(self.value(x), f64::abs);
        let ng = self.ng(&[x]);
        self.push("abs", out, Op::Abs(x), ng)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = unary(self.value(x), |v| v * v);
        let ng = self.ng(&[x]);
        self.push("square", out, Op::Square(x), ng)
    }

    /// Row-wise `softmax(x / temperature)`.
    pub fn softmax_rows(&mut self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let xv = self.value(x);
        let (r, c) = xv.dims();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            softmax_into(xv.row(i), temperature, &mut out[i * c..(i + 1) * c]);
        }
        let ng = self.ng(&[x]);
        self.push(
            "softmax_rows",
            Tensor::matrix(r, c, out),
            Op::SoftmaxRows(x, temperature),
            ng,
        )
    }

    /// Row-wise `log(sum(exp(x)))`, giving an `r x 1` column.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let r = xv.rows();
        let out: Vec<f64> = (0..r).map(|i| logsumexp(xv.row(i))).collect();
        let ng = self.ng(&[x]);
        self.push("logsumexp_rows", Tensor::matrix(r, 1, out), Op::LogSumExpRows(x), ng)
    }

    /// Row-wise standardization `(x - mean) / sqrt(var + eps)` with no affine part.
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims();
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let ng = self.ng(&[x]);
        self.push(
            "layer_norm_rows",
            Tensor::matrix(r, c, out),
            Op::LayerNormRows { x, inv_std },
            ng,
        )
    }

    /// Elementwise product with a fixed mask (dropout with the rescale folded in).
    pub fn mask_mul(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if !xv.same_dims(&mask) {
            return Err(mismatch("mask_mul", xv, &mask));
        }
        let out = zip_map(xv, &mask, |p, q| p * q);
        let ng = self.ng(&[x]);
        self.push("mask_mul", out, Op::MaskMul(x, mask), ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let ng = self.ng(&[x]);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let m = xv.sum() / xv.len() as f64;
        let ng = self.ng(&[x]);
        self.push("mean", Tensor::scalar(m), Op::Mean(x), ng)
    }

    /// Sum of each row, giving an `r x 1` column.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let r = xv.rows();
        let out: Vec<f64> = (0..r).map(|i| xv.row(i).iter().sum()).collect();
        let ng = self.ng(&[x]);
        self.push("sum_rows", Tensor::matrix(r, 1, out), Op::SumRows(x), ng)
    }

    /// Stack `n` copies of the `1 x c` row `x`.
    pub fn repeat_row(&mut self, x: Var, n: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != 1 {
            return Err(Error::ShapeMismatch {
                op: "repeat_row",
                left: vec![xv.rows(), xv.cols()],
                right: vec![1, xv.cols()],
            });
        }
        let c = xv.cols();
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(xv.data());
        }
        let ng = self.ng(&[x]);
        self.push("repeat_row", Tensor::matrix(n, c, out), Op::RepeatRow(x), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts
            .first()
            .map(|v| self.value(*v).rows())
            .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        for p in parts {
            let pv = self.value(*p);
            if pv.rows() != r {
                return Err(mismatch("concat_cols", self.value(parts[0]), pv));
            }
        }
        let c: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(i));
            }
        }
        let ng = self.ng(parts);
        self.push(
            "concat_cols",
            Tensor::matrix(r, c, out),
            Op::ConcatCols(parts.to_vec()),
            ng,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts
            .first()
            .map(|v| self.value(*v).cols())
            .ok_or_else(|| Error::InvalidArgument("concat_rows of nothing".into()))?;
        let mut out = Vec::new();
        let mut r = 0;
        for p in parts {
            let pv = self.value(*p);
            if pv.cols() != c {
                return Err(mismatch("concat_rows", self.value(parts[0]), pv));
            }
            out.extend_from_slice(pv.data());
            r += pv.rows();
        }
        let ng = self.ng(parts);
        self.push(
            "concat_rows",
            Tensor::matrix(r, c, out),
            Op::ConcatRows(parts.to_vec()),
            ng,
        )
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims();
        if start + len > c {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: vec![r, c],
                right: vec![start, start + len],
            });
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let ng = self.ng(&[x]);
        self.push(
            "slice_cols",
            Tensor::matrix(r, len, out),
            Op::SliceCols { x, start },
            ng,
        )
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims();
        if start + len > r {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                left: vec![r, c],
                right: vec![start, start + len],
            });
        }
        let out = xv.data()[start * c..(start + len) * c].to_vec();
        let ng = self.ng(&[x]);
        self.push(
            "slice_rows",
            Tensor::matrix(len, c, out),
            Op::SliceRows { x, start },
            ng,
        )
    }

    /// Per-column AR(p) recurrence driven by `eta`.
    ///
    /// `eta` is `T x r`, `phi` is `p x r` (row `j` holds the lag-`j+1`
    /// coefficients), `b` is `1 x r` and `s0` is `p x r` with row `m` holding
    /// the state `m` steps before the first output. Output row `t` is
    /// `sum_j phi[j] * f[t-1-j] + b * eta[t]`, with earlier states read from `s0`.
    pub fn ar_recurrence(&mut self, eta: Var, phi: Var, b: Var, s0: Var) -> Result<Var> {
        let (ev, pv, bv, sv) = (self.value(eta), self.value(phi), self.value(b), self.value(s0));
        let (t_len, r) = ev.dims();
        let p = pv.rows();
        if pv.cols() != r || p == 0 {
            return Err(mismatch("ar_recurrence(phi)", ev, pv));
        }
        if bv.dims() != (1, r) {
            return Err(mismatch("ar_recurrence(b)", ev, bv));
        }
        if sv.dims() != (p, r) {
            return Err(mismatch("ar_recurrence(s0)", pv, sv));
        }
        let out = ar_forward(ev, pv, bv, sv);
        let ng = self.ng(&[eta, phi, b, s0]);
        self.push(
            "ar_recurrence",
            Tensor::matrix(t_len, r, out),
            Op::ArRecurrence { eta, phi, b, s0 },
            ng,
        )
    }

    /// Reverse sweep from a scalar `loss`; returns gradients for all leaves
    /// (zeros for leaves the loss does not depend on).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::matrix(1, 1, vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        let by_leaf = self
            .leaves
            .iter()
            .map(|&v| {
                let (r, c) = self.value(v).dims();
                let g = grads
                    .get_mut(v.0)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(r, c));
                (v, g)
            })
            .collect();
        Ok(Gradients { by_leaf })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || unary(g, |v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, || zip_map(g, bv, |p, q| p * q));
                self.acc(grads, *b, || zip_map(g, av, |p, q| p * q));
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, || zip_map(g, bv, |p, q| p / q));
                self.acc(grads, *b, || {
                    let (r, c) = g.dims();
                    let data = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .zip(bv.data())
                        .map(|((gg, x), y)| -gg * x / (y * y))
                        .collect();
                    Tensor::matrix(r, c, data)
                });
            }
            Op::AddRow(x, bias) => {
                self.acc(grads, *x, || g.clone());
                self.acc(grads, *bias, || column_sums(g));
            }
            Op::MulRow(x, gain) => {
                let (xv, gv) = (self.value(*x), self.value(*gain));
                self.acc(grads, *x, || {
                    let (r, c) = g.dims();
                    let mut d = g.data().to_vec();
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] *= gv.data()[j];
                        }
                    }
                    Tensor::matrix(r, c, d)
                });
                self.acc(grads, *gain, || column_sums(&zip_map(g, xv, |p, q| p * q)));
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.acc(grads, *x, || unary(g, |v| v * s));
            }
            Op::AddScalar(x) => self.acc(grads, *x, || g.clone()),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims();
                let n = bv.cols();
                self.acc(grads, *a, || {
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, g.data(), false, bv.data(), true, 0.0, &mut d);
                    Tensor::matrix(m, k, d)
                });
                self.acc(grads, *b, || {
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, av.data(), true, g.data(), false, 0.0, &mut d);
                    Tensor::matrix(k, n, d)
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.acc(grads, *x, || zip_map(g, xv, |gg, v| if v > 0.0 { gg } else { 0.0 }));
            }
            Op::Tanh(x) => self.acc(grads, *x, || zip_map(g, out, |gg, y| gg * (1.0 - y * y))),
            Op::Exp(x) => self.acc(grads, *x, || zip_map(g, out, |gg, y| gg * y)),
            Op::Log(x) => {
                let xv = self.value(*x);
                self.acc(grads, *x, || zip_map(g, xv, |gg, v| gg / v));
            }
            Op::Abs(x) => {
                let xv = self.value(*x);
                self.acc(grads, *x, || zip_map(g, xv, |gg, v| gg * sign0(v)));
            }
            Op::Square(x) => {
                let xv = self.value(*x);
                self.acc(grads, *x, || zip_map(g, xv, |gg, v| 2.0 * gg * v));
            }
            Op::SoftmaxRows(x, temp) => {
                let temp = *temp;
                self.acc(grads, *x, || {
                    let (r, c) = out.dims();
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        let (y, gy) = (out.row(i), g.row(i));
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[i * c + j] = y[j] * (gy[j] - dot) / temp;
                        }
                    }
                    Tensor::matrix(r, c, d)
                });
            }
            Op::LogSumExpRows(x) => {
                let xv = self.value(*x);
                self.acc(grads, *x, || {
                    let (r, c) = xv.dims();
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        let lse = out.data()[i];
                        for j in 0..c {
                            d[i * c + j] = g.data()[i] * (xv.get(i, j) - lse).exp();
                        }
                    }
                    Tensor::matrix(r, c, d)
                });
            }
            Op::LayerNormRows { x, inv_std } => {
                self.acc(grads, *x, || {
                    let (r, c) = out.dims();
                    let n = c as f64;
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        let (y, gy) = (out.row(i), g.row(i));
                        let mean_g = gy.iter().sum::<f64>() / n;
                        let mean_gy = gy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
                        for j in 0..c {
                            d[i * c + j] = inv_std[i] * (gy[j] - mean_g - y[j] * mean_gy);
                        }
                    }
                    Tensor::matrix(r, c, d)
                });
            }
            Op::MaskMul(x, mask) => self.acc(grads, *x, || zip_map(g, mask, |p, q| p * q)),
            Op::Sum(x) => {
                let (r, c) = self.value(*x).dims();
                let gs = g.data()[0];
                self.acc(grads, *x, || Tensor::filled(r, c, gs));
            }
            Op::Mean(x) => {
                let (r, c) = self.value(*x).dims();
                let gs = g.data()[0] / (r * c) as f64;
                self.acc(grads, *x, || Tensor::filled(r, c, gs));
            }
            Op::SumRows(x) => {
                let (r, c) = self.value(*x).dims();
                self.acc(grads, *x, || {
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        d[i * c..(i + 1) * c].fill(g.data()[i]);
                    }
                    Tensor::matrix(r, c, d)
                });
            }
            Op::RepeatRow(x) => self.acc(grads, *x, || column_sums(g)),
            Op::ConcatCols(parts) => {
                let r = out.rows();
                let mut offset = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    let off = offset;
                    self.acc(grads, *p, || {
                        let mut d = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            d.extend_from_slice(&g.row(i)[off..off + pc]);
                        }
                        Tensor::matrix(r, pc, d)
                    });
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let c = out.cols();
                let mut offset = 0;
                for p in parts {
                    let pr = self.value(*p).rows();
                    let off = offset;
                    self.acc(grads, *p, || {
                        Tensor::matrix(pr, c, g.data()[off * c..(off + pr) * c].to_vec())
                    });
                    offset += pr;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.value(*x).dims();
                let len = out.cols();
                let start = *start;
                self.acc(grads, *x, || {
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        d[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                    }
                    Tensor::matrix(r, c, d)
                });
            }
            Op::SliceRows { x, start } => {
                let (r, c) = self.value(*x).dims();
                let start = *start;
                self.acc(grads, *x, || {
                    let mut d = vec![0.0; r * c];
                    d[start * c..start * c + g.len()].copy_from_slice(g.data());
                    Tensor::matrix(r, c, d)
                });
            }
            Op::ArRecurrence { eta, phi, b, s0 } => {
                let back = ar_backward(
                    self.value(*eta),
                    self.value(*phi),
                    self.value(*b),
                    self.value(*s0),
                    out,
                    g,
                );
                self.acc(grads, *eta, || back.eta);
                self.acc(grads, *phi, || back.phi);
                self.acc(grads, *b, || back.b);
                self.acc(grads, *s0, || back.s0);
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, make: impl FnOnce() -> Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let d = make();
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(d.data()) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(d),
        }
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let (r, c) = g.dims();
    let mut d = vec![0.0; c];
    for i in 0..r {
        for (acc, v) in d.iter_mut().zip(g.row(i)) {
            *acc += v;
        }
    }
    Tensor::matrix(1, c, d)
}

pub(crate) fn softmax_into(x: &[f64], temperature: f64, out: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = ((v - max) / temperature).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

pub(crate) fn logsumexp(x: &[f64]) -> f64 {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn ar_forward(eta: &Tensor, phi: &Tensor, b: &Tensor, s0: &Tensor) -> Vec<f64> {
    let (t_len, r) = eta.dims();
    let p = phi.rows();
    let mut out = vec![0.0; t_len * r];
    for t in 0..t_len {
        for i in 0..r {
            let mut acc = b.data()[i] * eta.get(t, i);
            for j in 0..p {
                // lag j + 1 relative to output row t
                let prev = if t > j {
                    out[(t - 1 - j) * r + i]
                } else {
                    s0.get(j - t, i)
                };
                acc += phi.get(j, i) * prev;
            }
            out[t * r + i] = acc;
        }
    }
    out
}

struct ArGrads {
    eta: Tensor,
    phi: Tensor,
    b: Tensor,
    s0: Tensor,
}

fn ar_backward(eta: &Tensor, phi: &Tensor, b: &Tensor, s0: &Tensor, out: &Tensor, g: &Tensor) -> ArGrads {
    let (t_len, r) = eta.dims();
    let p = phi.rows();
    // adj[t] = dL/d f[t] including every downstream use through the recurrence.
    let mut adj = g.data().to_vec();
    for t in (0..t_len).rev() {
        for j in 0..p {
            if t > j {
                for i in 0..r {
                    adj[(t - 1 - j) * r + i] += phi.get(j, i) * adj[t * r + i];
                }
            }
        }
    }
    let mut d_eta = vec![0.0; t_len * r];
    let mut d_phi = vec![0.0; p * r];
    let mut d_b = vec![0.0; r];
    let mut d_s0 = vec![0.0; p * r];
    for t in 0..t_len {
        for i in 0..r {
            let a = adj[t * r + i];
            d_eta[t * r + i] = b.data()[i] * a;
            d_b[i] += eta.get(t, i) * a;
            for j in 0..p {
                let prev = if t > j {
                    out.get(t - 1 - j, i)
                } else {
                    d_s0[(j - t) * r + i] += phi.get(j, i) * a;
                    s0.get(j - t, i)
                };
                d_phi[j * r + i] += a * prev;
            }
        }
    }
    ArGrads {
        eta: Tensor::matrix(t_len, r, d_eta),
        phi: Tensor::matrix(p, r, d_phi),
        b: Tensor::matrix(1, r, d_b),
        s0: Tensor::matrix(p, r, d_s0),
    }
}
