use std::borrow::Cow;

use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Huber(Var, Var, f64),
    StraightThrough(Var),
    GcnNorm(Var),
    EgoNorm(Var, usize),
    GraphPropagate(Var, Var, usize),
    PairwiseDot(Var, usize, f64),
    GatherCols(Var, Vec<usize>),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    PlackettLuce(Var, Vec<Vec<usize>>),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode gradient tape.
///
/// Every operation appends a node holding its forward value. Parameters are
/// bound by reference so forward passes never copy weights.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient of `v`, zeros when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("unary keeps shape")
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient is tracked through it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input leaf whose gradient is reported by [`Gradients`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Borrowed leaf, used for parameters.
    pub fn leaf_ref(&mut self, t: &'a Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(t), op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `x[R, C] + b[C]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.cols();
        if bv.len() != c {
            return shape_err(format!("bias of {} entries for {} columns", bv.len(), c));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(out, Op::AddRow(x, b), ng))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, "elementwise op")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Minimum(a, b), f64::min)
    }

    /// `x[R, C] * s[R, 1]`, scaling each row by its own factor.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let (r, c) = (xv.rows(), xv.cols());
        if sv.len() != r {
            return shape_err(format!("row scale of {} entries for {} rows", sv.len(), r));
        }
        let mut out = xv.clone();
        for (row, &f) in out.data_mut().chunks_mut(c).zip(sv.data()) {
            for o in row {
                *o *= f;
            }
        }
        let ng = self.ng(x) || self.ng(s);
        Ok(self.push(out, Op::MulCol(x, s), ng))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = unary(self.value(x), |v| v * k);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, k), ng)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let out = unary(self.value(x), |v| v + k);
        let ng = self.ng(x);
        self.push(out, Op::AddScalar(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = unary(self.value(x), |v| v.max(0.0));
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = unary(self.value(x), f64::tanh);
        let ng = self.ng(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = unary(self.value(x), |v| 1.0 / (1.0 + (-v).exp()));
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = unary(self.value(x), f64::exp);
        let ng = self.ng(x);
        self.push(out, Op::Exp(x), ng)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = unary(self.value(x), f64::ln);
        let ng = self.ng(x);
        self.push(out, Op::Log(x), ng)
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = unary(self.value(x), |v| v.clamp(lo, hi));
        let ng = self.ng(x);
        self.push(out, Op::Clamp(x, lo, hi), ng)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = Tensor::zeros(xv.shape());
        for (row, o) in xv.data().chunks(c).zip(out.data_mut().chunks_mut(c)) {
            softmax_row(row, o);
        }
        let ng = self.ng(x);
        self.push(out, Op::SoftmaxRows(x), ng)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = Tensor::zeros(xv.shape());
        for (row, o) in xv.data().chunks(c).zip(out.data_mut().chunks_mut(c)) {
            let lse = log_sum_exp(row.iter().cloned());
            for (oo, &v) in o.iter_mut().zip(row) {
                *oo = v - lse;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::LogSoftmaxRows(x), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat of nothing");
        };
        let r = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            if self.value(p).rows() != r {
                return shape_err(format!(
                    "concat rows {} vs {}",
                    self.value(p).rows(),
                    r
                ));
            }
            widths.push(self.value(p).cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let out = Tensor::matrix(r, total, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if start + width > c || width == 0 {
            return shape_err(format!("slice [{start}, {}) of {c} columns", start + width));
        }
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&xv.row_slice(i)[start..start + width]);
        }
        let out = Tensor::matrix(r, width, data)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceCols(x, start), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// `[R, C] -> [R, 1]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let data: Vec<f64> = xv.data().chunks(c).map(|r| r.iter().sum()).collect();
        let out = Tensor::matrix(xv.rows(), 1, data).expect("sum_rows shape");
        let ng = self.ng(x);
        self.push(out, Op::SumRows(x), ng)
    }

    /// Mean Huber loss between `pred` and `target`.
    pub fn huber(&mut self, pred: Var, target: Var, delta: f64) -> Result<Var> {
        self.same_shape(pred, target, "huber")?;
        let (p, t) = (self.value(pred), self.value(target));
        let n = p.len() as f64;
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| {
                let e = (a - b).abs();
                if e <= delta {
                    0.5 * e * e
                } else {
                    delta * (e - 0.5 * delta)
                }
            })
            .sum();
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(Tensor::scalar(s / n), Op::Huber(pred, target, delta), ng))
    }

    /// Forward value `hard`, backward gradient routed to `soft`.
    pub fn straight_through(&mut self, hard: Tensor, soft: Var) -> Result<Var> {
        if hard.shape() != self.value(soft).shape() {
            return shape_err("straight-through hard/soft shapes differ");
        }
        let ng = self.ng(soft);
        Ok(self.push(hard, Op::StraightThrough(soft), ng))
    }

    /// Symmetric GCN normalization `D^-1/2 (A + I) D^-1/2` with `D` the row
    /// degrees of `A + I`.
    pub fn gcn_norm(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = av.rows();
        if av.shape().len() != 2 || av.cols() != n {
            return shape_err(format!("adjacency must be square, got {:?}", av.shape()));
        }
        if av.data().iter().any(|&x| x < 0.0) {
            return Err(Error::Input("adjacency has negative entries".into()));
        }
        let s = gcn_inv_sqrt_degrees(av);
        let mut out = av.clone();
        for i in 0..n {
            for j in 0..n {
                let at = av.at(i, j) + if i == j { 1.0 } else { 0.0 };
                out.data_mut()[i * n + j] = at * s[i] * s[j];
            }
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::GcnNorm(a), ng))
    }

    /// Ego-subgraph normalization for stacked `[B*n, n]` adjacency rows.
    ///
    /// Row `r` belongs to node `k = r % n`. Only node `k`'s out-edges are kept
    /// plus every self-loop, so neighbor degrees are 1 and node `k` has degree
    /// `d = 1 + sum(row)`. The result holds node `k`'s row of the normalized
    /// matrix: `a_rj / sqrt(d)` off the diagonal, `(a_rk + 1) / d` on it.
    pub fn ego_norm(&mut self, a: Var, n: usize) -> Result<Var> {
        let av = self.value(a);
        if av.cols() != n || !av.rows().is_multiple_of(n) {
            return shape_err(format!("ego_norm expects [B*{n}, {n}], got {:?}", av.shape()));
        }
        if av.data().iter().any(|&x| x < 0.0) {
            return Err(Error::Input("adjacency has negative entries".into()));
        }
        let mut out = av.clone();
        for (r, row) in out.data_mut().chunks_mut(n).enumerate() {
            let k = r % n;
            let d = 1.0 + row.iter().sum::<f64>();
            let sd = d.sqrt();
            for (j, x) in row.iter_mut().enumerate() {
                *x = if j == k { (*x + 1.0) / d } else { *x / sd };
            }
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::EgoNorm(a, n), ng))
    }

    /// Block-diagonal propagation: for each of the `B` graphs,
    /// `out_b = M_b H_b` with `M` stacked `[B*n, n]` and `H` stacked `[B*n, F]`.
    pub fn graph_propagate(&mut self, m: Var, h: Var, n: usize) -> Result<Var> {
        let (mv, hv) = (self.value(m), self.value(h));
        if mv.cols() != n || mv.rows() % n != 0 || hv.rows() != mv.rows() {
            return shape_err(format!(
                "graph_propagate: M {:?}, H {:?}, n={n}",
                mv.shape(),
                hv.shape()
            ));
        }
        let f = hv.cols();
        let b = mv.rows() / n;
        let mut out = vec![0.0; mv.rows() * f];
        for g in 0..b {
            let ms = &mv.data()[g * n * n..(g + 1) * n * n];
            let hs = &hv.data()[g * n * f..(g + 1) * n * f];
            matmul_into(ms, hs, &mut out[g * n * f..(g + 1) * n * f], n, n, f);
        }
        let out = Tensor::matrix(mv.rows(), f, out)?;
        let ng = self.ng(m) || self.ng(h);
        Ok(self.push(out, Op::GraphPropagate(m, h, n), ng))
    }

    /// Scaled pairwise dot products inside each group of `n` rows:
    /// `[B*n, F] -> [B*n, n]`, entry `(b*n+i, j) = scale * <x_bi, x_bj>`.
    pub fn pairwise_dot(&mut self, x: Var, n: usize, scale: f64) -> Result<Var> {
        let xv = self.value(x);
        if !xv.rows().is_multiple_of(n) {
            return shape_err(format!("pairwise_dot: {} rows not divisible by {n}", xv.rows()));
        }
        let f = xv.cols();
        let b = xv.rows() / n;
        let mut out = vec![0.0; xv.rows() * n];
        for g in 0..b {
            let xs = &xv.data()[g * n * f..(g + 1) * n * f];
            matmul_bt_into(xs, xs, &mut out[g * n * n..(g + 1) * n * n], n, f, n);
        }
        for o in &mut out {
            *o *= scale;
        }
        let out = Tensor::matrix(xv.rows(), n, out)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::PairwiseDot(x, n, scale), ng))
    }

    /// Picks `x[r, idx[r]]` for each row: `[R, C] -> [R, 1]`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if idx.len() != r {
            return shape_err(format!("gather with {} indices for {r} rows", idx.len()));
        }
        let mut data = Vec::with_capacity(r);
        for (i, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(Error::Input(format!("index {j} out of range for {c} columns")));
            }
            data.push(xv.at(i, j));
        }
        let out = Tensor::matrix(r, 1, data)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::GatherCols(x, idx.to_vec()), ng))
    }

    /// Plackett-Luce log-likelihood of each row's permutation under the
    /// row's scores: `[B, n] -> [B, 1]`.
    pub fn plackett_luce(&mut self, scores: Var, perms: &[Vec<usize>]) -> Result<Var> {
        let sv = self.value(scores);
        let (b, n) = (sv.rows(), sv.cols());
        if perms.len() != b {
            return shape_err(format!("{} permutations for {b} score rows", perms.len()));
        }
        let mut data = Vec::with_capacity(b);
        for (r, p) in perms.iter().enumerate() {
            if !is_permutation(p, n) {
                return Err(Error::Input(format!("row {r} is not a permutation of 0..{n}")));
            }
            let s = sv.row_slice(r);
            let mut lp = 0.0;
            for i in 0..n {
                lp += s[p[i]] - log_sum_exp(p[i..].iter().map(|&j| s[j]));
            }
            data.push(lp);
        }
        let out = Tensor::matrix(b, 1, data)?;
        let ng = self.ng(scores);
        Ok(self.push(out, Op::PlackettLuce(scores, perms.to_vec()), ng))
    }

    /// Backpropagates from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return shape_err(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            ));
        }
        self.backward_with(loss, Tensor::filled(self.value(loss).shape(), 1.0))
    }

    /// Backpropagates an arbitrary upstream gradient `seed` from `out`.
    pub fn backward_with(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(out).shape() {
            return shape_err("seed shape differs from output");
        }
        let n = out.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed.into_data());
        for i in (0..n).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, nn) = (av.rows(), av.cols(), bv.cols());
                acc(*a, &mut |s| matmul_bt_into(g, bv.data(), s, m, nn, k));
                acc(*b, &mut |s| matmul_at_into(av.data(), g, s, m, k, nn));
            }
            Op::AddRow(x, b) => {
                acc(*x, &mut |s| add_into(s, g));
                let c = self.value(*b).len();
                acc(*b, &mut |s| {
                    for row in g.chunks(c) {
                        add_into(s, row);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| {
                    for (o, &gg) in s.iter_mut().zip(g) {
                        *o -= gg;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| {
                    for ((o, &gg), &y) in s.iter_mut().zip(g).zip(bv) {
                        *o += gg * y;
                    }
                });
                acc(*b, &mut |s| {
                    for ((o, &gg), &x) in s.iter_mut().zip(g).zip(av) {
                        *o += gg * x;
                    }
                });
            }
            Op::MulCol(x, sc) => {
                let (xv, sv) = (self.value(*x), self.value(*sc));
                let c = xv.cols();
                acc(*x, &mut |s| {
                    for ((o, gg), &f) in s.chunks_mut(c).zip(g.chunks(c)).zip(sv.data()) {
                        for (oo, &ggg) in o.iter_mut().zip(gg) {
                            *oo += ggg * f;
                        }
                    }
                });
                acc(*sc, &mut |s| {
                    for (r, o) in s.iter_mut().enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        *o += gr.iter().zip(xv.row_slice(r)).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::Scale(x, k) => acc(*x, &mut |s| {
                for (o, &gg) in s.iter_mut().zip(g) {
                    *o += gg * k;
                }
            }),
            Op::AddScalar(x) | Op::Reshape(x) | Op::StraightThrough(x) => {
                acc(*x, &mut |s| add_into(s, g))
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |s| {
                    for ((o, &gg), &v) in s.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *o += gg;
                        }
                    }
                })
            }
            Op::Tanh(x) => acc(*x, &mut |s| {
                for ((o, &gg), &t) in s.iter_mut().zip(g).zip(y.data()) {
                    *o += gg * (1.0 - t * t);
                }
            }),
            Op::Sigmoid(x) => acc(*x, &mut |s| {
                for ((o, &gg), &t) in s.iter_mut().zip(g).zip(y.data()) {
                    *o += gg * t * (1.0 - t);
                }
            }),
            Op::Exp(x) => acc(*x, &mut |s| {
                for ((o, &gg), &t) in s.iter_mut().zip(g).zip(y.data()) {
                    *o += gg * t;
                }
            }),
            Op::Log(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |s| {
                    for ((o, &gg), &v) in s.iter_mut().zip(g).zip(xv) {
                        *o += gg / v;
                    }
                })
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |s| {
                    for ((o, &gg), &v) in s.iter_mut().zip(g).zip(xv) {
                        if v >= *lo && v <= *hi {
                            *o += gg;
                        }
                    }
                })
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| {
                    for (k, o) in s.iter_mut().enumerate() {
                        if av[k] <= bv[k] {
                            *o += g[k];
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for (k, o) in s.iter_mut().enumerate() {
                        if av[k] > bv[k] {
                            *o += g[k];
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let c = y.cols();
                acc(*x, &mut |s| {
                    for ((o, gg), p) in s.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                        let dot: f64 = gg.iter().zip(p).map(|(a, b)| a * b).sum();
                        for ((oo, &ggg), &pp) in o.iter_mut().zip(gg).zip(p) {
                            *oo += pp * (ggg - dot);
                        }
                    }
                })
            }
            Op::LogSoftmaxRows(x) => {
                let c = y.cols();
                acc(*x, &mut |s| {
                    for ((o, gg), lp) in s.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                        let gs: f64 = gg.iter().sum();
                        for ((oo, &ggg), &l) in o.iter_mut().zip(gg).zip(lp) {
                            *oo += ggg - l.exp() * gs;
                        }
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(p, &mut |s| {
                        for (o, gg) in s.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(o, &gg[off..off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols(x, start) => {
                let c = self.value(*x).cols();
                let w = y.cols();
                acc(*x, &mut |s| {
                    for (o, gg) in s.chunks_mut(c).zip(g.chunks(w)) {
                        add_into(&mut o[*start..*start + w], gg);
                    }
                })
            }
            Op::Sum(x) => acc(*x, &mut |s| {
                for o in s.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                acc(*x, &mut |s| {
                    for o in s.iter_mut() {
                        *o += g[0] / n;
                    }
                })
            }
            Op::SumRows(x) => {
                let c = self.value(*x).cols();
                acc(*x, &mut |s| {
                    for (o, &gg) in s.chunks_mut(c).zip(g) {
                        for oo in o {
                            *oo += gg;
                        }
                    }
                })
            }
            Op::Huber(p, t, delta) => {
                let (pv, tv) = (self.value(*p).data(), self.value(*t).data());
                let n = pv.len() as f64;
                let d: Vec<f64> = pv
                    .iter()
                    .zip(tv)
                    .map(|(&a, &b)| (a - b).clamp(-delta, *delta) * g[0] / n)
                    .collect();
                acc(*p, &mut |s| add_into(s, &d));
                acc(*t, &mut |s| {
                    for (o, dd) in s.iter_mut().zip(&d) {
                        *o -= dd;
                    }
                });
            }
            Op::GcnNorm(a) => {
                let av = self.value(*a);
                let n = av.rows();
                let sq = gcn_inv_sqrt_degrees(av);
                let at = |i: usize, j: usize| av.at(i, j) + if i == j { 1.0 } else { 0.0 };
                // Each d_i feeds row i and column i of the output.
                let mut c = vec![0.0; n];
                for i in 0..n {
                    let mut t = 0.0;
                    for l in 0..n {
                        t += g[i * n + l] * at(i, l) * sq[l];
                        t += g[l * n + i] * at(l, i) * sq[l];
                    }
                    c[i] = -0.5 * sq[i].powi(3) * t;
                }
                acc(*a, &mut |s| {
                    for i in 0..n {
                        for j in 0..n {
                            s[i * n + j] += g[i * n + j] * sq[i] * sq[j] + c[i];
                        }
                    }
                });
            }
            Op::EgoNorm(a, n) => {
                let av = self.value(*a);
                let n = *n;
                acc(*a, &mut |s| {
                    for (r, row) in av.data().chunks(n).enumerate() {
                        let k = r % n;
                        let d = 1.0 + row.iter().sum::<f64>();
                        let sd = d.sqrt();
                        let gr = &g[r * n..(r + 1) * n];
                        let mut c = 0.0;
                        for j in 0..n {
                            c += if j == k {
                                -gr[j] * (row[j] + 1.0) / (d * d)
                            } else {
                                -0.5 * gr[j] * row[j] / (d * sd)
                            };
                        }
                        for j in 0..n {
                            let direct = if j == k { gr[j] / d } else { gr[j] / sd };
                            s[r * n + j] += direct + c;
                        }
                    }
                });
            }
            Op::GraphPropagate(m, h, n) => {
                let (mv, hv) = (self.value(*m), self.value(*h));
                let n = *n;
                let f = hv.cols();
                let b = mv.rows() / n;
                acc(*m, &mut |s| {
                    for q in 0..b {
                        let gs = &g[q * n * f..(q + 1) * n * f];
                        let hs = &hv.data()[q * n * f..(q + 1) * n * f];
                        matmul_bt_into(gs, hs, &mut s[q * n * n..(q + 1) * n * n], n, f, n);
                    }
                });
                acc(*h, &mut |s| {
                    for q in 0..b {
                        let gs = &g[q * n * f..(q + 1) * n * f];
                        let ms = &mv.data()[q * n * n..(q + 1) * n * n];
                        matmul_at_into(ms, gs, &mut s[q * n * f..(q + 1) * n * f], n, n, f);
                    }
                });
            }
            Op::PairwiseDot(x, n, scale) => {
                let xv = self.value(*x);
                let n = *n;
                let f = xv.cols();
                let b = xv.rows() / n;
                acc(*x, &mut |s| {
                    for q in 0..b {
                        let gs = &g[q * n * n..(q + 1) * n * n];
                        let xs = &xv.data()[q * n * f..(q + 1) * n * f];
                        let mut sym = vec![0.0; n * n];
                        for i in 0..n {
                            for j in 0..n {
                                sym[i * n + j] = scale * (gs[i * n + j] + gs[j * n + i]);
                            }
                        }
                        matmul_into(&sym, xs, &mut s[q * n * f..(q + 1) * n * f], n, n, f);
                    }
                });
            }
            Op::GatherCols(x, idx) => {
                let c = self.value(*x).cols();
                acc(*x, &mut |s| {
                    for (r, &j) in idx.iter().enumerate() {
                        s[r * c + j] += g[r];
                    }
                })
            }
            Op::PlackettLuce(sc, perms) => {
                let sv = self.value(*sc);
                let c = sv.cols();
                acc(*sc, &mut |s| {
                    for (r, p) in perms.iter().enumerate() {
                        let sr = sv.row_slice(r);
                        let o = &mut s[r * c..(r + 1) * c];
                        for i in 0..c {
                            o[p[i]] += g[r];
                            let lse = log_sum_exp(p[i..].iter().map(|&j| sr[j]));
                            for &j in &p[i..] {
                                o[j] -= g[r] * (sr[j] - lse).exp();
                            }
                        }
                    }
                })
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn gcn_inv_sqrt_degrees(a: &Tensor) -> Vec<f64> {
    let n = a.rows();
    (0..n)
        .map(|i| {
            let d: f64 = 1.0 + a.row_slice(i).iter().sum::<f64>();
            1.0 / d.sqrt()
        })
        .collect()
}

pub(crate) fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &j in p {
        if j >= n || seen[j] {
            return false;
        }
        seen[j] = true;
    }
    true
}
