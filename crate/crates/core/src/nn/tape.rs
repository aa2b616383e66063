//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. [`Tape::backward`]
//! walks the record in reverse and returns [`Gradients`] for every node;
//! [`Tape::accumulate_into`] then adds the gradients of parameter leaves into
//! their [`ParameterSet`].
//!
//! The operator set is deliberately small: affine maps, pointwise
//! nonlinearities, reductions, row softmax and layer norm, grouped matrix
//! products for attention, and fused Gaussian NLL / binary cross-entropy.

use std::collections::HashMap;

use super::{Matrix, ParamId, ParameterSet};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub(crate) const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Maximum(Var, Var),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    MeanRows(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherCols(Var, Vec<usize>),
    Reshape(Var),
    GroupMatMulBt(Var, Var, usize),
    GroupMatMul(Var, Var, usize),
    GaussianNll(Var, Var, Var),
    Bce(Var, Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<(u64, usize), Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar node");
        m.get(0, 0)
    }

    /// Input or constant leaf.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.leaf(Matrix::scalar(x))
    }

    /// Leaf backed by a parameter tensor. Repeated requests for the same
    /// tensor return the same node.
    pub fn param(&mut self, set: &ParameterSet, id: ParamId) -> Var {
        let key = (set.uid(), id.0);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(set.value(id).clone(), Op::Param);
        self.params.insert(key, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a + row`, broadcasting a `1×m` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!(rm.rows(), 1, "add_row expects a row vector");
        assert_eq!(am.cols(), rm.cols(), "add_row width");
        let mut out = am.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(rm.row(0)) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// `a ⊙ row`, broadcasting a `1×m` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!(rm.rows(), 1, "mul_row expects a row vector");
        assert_eq!(am.cols(), rm.cols(), "mul_row width");
        let mut out = am.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(rm.row(0)) {
                *o *= b;
            }
        }
        self.push(out, Op::MulRow(a, row))
    }

    /// `a ⊙ col`, broadcasting an `n×1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (am, cm) = (self.value(a), self.value(col));
        assert_eq!(cm.cols(), 1, "mul_col expects a column");
        assert_eq!(am.rows(), cm.rows(), "mul_col height");
        let mut out = am.clone();
        for r in 0..out.rows() {
            let c = cm.get(r, 0);
            for o in out.row_mut(r) {
                *o *= c;
            }
        }
        self.push(out, Op::MulCol(a, col))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), f64::min);
        self.push(out, Op::Minimum(a, b))
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), f64::max);
        self.push(out, Op::Maximum(a, b))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let out = Matrix::scalar(m.sum() / m.len() as f64);
        self.push(out, Op::MeanAll(a))
    }

    /// Row sums as an `n×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let sums: Vec<f64> = (0..m.rows()).map(|r| m.row(r).iter().sum()).collect();
        self.push(Matrix::column(&sums), Op::SumCols(a))
    }

    /// Column means as a `1×m` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(1, m.cols());
        for r in 0..m.rows() {
            for (o, &x) in out.row_mut(0).iter_mut().zip(m.row(r)) {
                *o += x;
            }
        }
        let n = m.rows() as f64;
        out.scale_assign(1.0 / n);
        self.push(out, Op::MeanRows(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = m.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = m.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row {
                *x -= lse;
            }
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Normalize each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let m = self.value(a);
        let mut out = m.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for x in row {
                *x = (*x - mean) * inv;
            }
        }
        self.push(out, Op::LayerNormRows(a, eps))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let pm = self.value(p);
                assert_eq!(pm.rows(), rows, "concat row mismatch");
                out.row_mut(r)[c0..c0 + pm.cols()].copy_from_slice(pm.row(r));
                c0 += pm.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let m = self.value(a);
        assert!(start < end && end <= m.cols(), "slice out of range");
        let mut out = Matrix::zeros(m.rows(), end - start);
        for r in 0..m.rows() {
            out.row_mut(r).copy_from_slice(&m.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Pick column `idx[r]` from each row `r`, giving an `n×1` column.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let m = self.value(a);
        assert_eq!(m.rows(), idx.len(), "gather index count");
        let vals: Vec<f64> = idx.iter().enumerate().map(|(r, &c)| m.get(r, c)).collect();
        self.push(Matrix::column(&vals), Op::GatherCols(a, idx.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(a).clone().reshaped(rows, cols);
        self.push(out, Op::Reshape(a))
    }

    /// Grouped `A_g · B_gᵀ`. `a` is `(G·R)×e`, `b` is `(G·W)×e`; the result is
    /// `(G·R)×W` with group `g` using rows `g·R..` of `a` and `g·W..` of `b`.
    pub fn group_matmul_bt(&mut self, a: Var, b: Var, groups: usize) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        let (r, w) = group_dims(am.rows(), bm.rows(), groups);
        assert_eq!(am.cols(), bm.cols(), "group_matmul_bt inner dims");
        let mut out = Matrix::zeros(groups * r, w);
        for g in 0..groups {
            for i in 0..r {
                let arow = am.row(g * r + i);
                for j in 0..w {
                    out.set(g * r + i, j, super::matrix::dot(arow, bm.row(g * w + j)));
                }
            }
        }
        self.push(out, Op::GroupMatMulBt(a, b, groups))
    }

    /// Grouped `P_g · V_g`. `p` is `(G·R)×W`, `v` is `(G·W)×e`; the result is
    /// `(G·R)×e`.
    pub fn group_matmul(&mut self, p: Var, v: Var, groups: usize) -> Var {
        let (pm, vm) = (self.value(p), self.value(v));
        let (r, w) = group_dims(pm.rows(), vm.rows(), groups);
        assert_eq!(pm.cols(), w, "group_matmul inner dims");
        let e = vm.cols();
        let mut out = Matrix::zeros(groups * r, e);
        for g in 0..groups {
            for i in 0..r {
                let prow = pm.row(g * r + i).to_vec();
                let orow = out.row_mut(g * r + i);
                for (j, &pj) in prow.iter().enumerate() {
                    if pj == 0.0 {
                        continue;
                    }
                    for (o, &x) in orow.iter_mut().zip(vm.row(g * w + j)) {
                        *o += pj * x;
                    }
                }
            }
        }
        self.push(out, Op::GroupMatMul(p, v, groups))
    }

    /// Per-row diagonal Gaussian negative log-likelihood, summed over columns:
    /// `Σ_d ½ln2π + s_d + (t_d − μ_d)² / (2e^{2s_d})`. Returns `n×1`.
    pub fn gaussian_nll(&mut self, mu: Var, log_sigma: Var, target: Var) -> Var {
        let (m, s, t) = (self.value(mu), self.value(log_sigma), self.value(target));
        assert_eq!(m.shape(), s.shape(), "gaussian_nll shapes");
        assert_eq!(m.shape(), t.shape(), "gaussian_nll shapes");
        let mut out = Vec::with_capacity(m.rows());
        for r in 0..m.rows() {
            let mut acc = 0.0;
            for ((&mu, &ls), &tg) in m.row(r).iter().zip(s.row(r)).zip(t.row(r)) {
                let d = tg - mu;
                acc += 0.5 * LN_2PI + ls + d * d / (2.0 * (2.0 * ls).exp());
            }
            out.push(acc);
        }
        self.push(Matrix::column(&out), Op::GaussianNll(mu, log_sigma, target))
    }

    /// Elementwise binary cross-entropy with `p` clamped to
    /// `[1e-7, 1 − 1e-7]`; zero gradient where the clamp is active.
    pub fn bce(&mut self, p: Var, target: Var) -> Var {
        let out = self.value(p).zip_map(self.value(target), |p, t| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        });
        self.push(out, Op::Bce(p, target))
    }

    /// Sum of several same-shaped nodes.
    pub fn sum_vars(&mut self, vars: &[Var]) -> Var {
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    /// Add the gradients of this set's parameter leaves into its buffers.
    pub fn accumulate_into(&self, grads: &Gradients, set: &mut ParameterSet) {
        let uid = set.uid();
        for (&(u, idx), &v) in &self.params {
            if u != uid {
                continue;
            }
            if let Some(g) = grads.wrt(v) {
                set.grad_mut(ParamId(idx)).add_assign(g);
            }
        }
    }

    fn backprop_node(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                acc(grads, *a, g.matmul_bt(bm));
                acc(grads, *b, am.matmul_at(g));
            }
            Op::AddRow(a, row) => {
                acc(grads, *a, g.clone());
                acc(grads, *row, col_sums(g));
            }
            Op::MulRow(a, row) => {
                let (am, rm) = (self.value(*a), self.value(*row));
                let mut ga = g.clone();
                for r in 0..ga.rows() {
                    for (x, &w) in ga.row_mut(r).iter_mut().zip(rm.row(0)) {
                        *x *= w;
                    }
                }
                acc(grads, *a, ga);
                acc(grads, *row, col_sums(&g.zip_map(am, |x, y| x * y)));
            }
            Op::MulCol(a, col) => {
                let (am, cm) = (self.value(*a), self.value(*col));
                let mut ga = g.clone();
                let mut gc = Matrix::zeros(cm.rows(), 1);
                for r in 0..ga.rows() {
                    let c = cm.get(r, 0);
                    gc.set(r, 0, super::matrix::dot(g.row(r), am.row(r)));
                    for x in ga.row_mut(r) {
                        *x *= c;
                    }
                }
                acc(grads, *a, ga);
                acc(grads, *col, gc);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                acc(grads, *a, g.zip_map(bm, |x, y| x * y));
                acc(grads, *b, g.zip_map(am, |x, y| x * y));
            }
            Op::Scale(a, c) => acc(grads, *a, g.map(|x| c * x)),
            Op::Offset(a) | Op::Reshape(a) => {
                let am = self.value(*a);
                acc(grads, *a, g.clone().reshaped(am.rows(), am.cols()));
            }
            Op::Relu(a) => {
                let am = self.value(*a);
                acc(grads, *a, g.zip_map(am, |x, z| if z > 0.0 { x } else { 0.0 }));
            }
            Op::Tanh(a) => acc(grads, *a, g.zip_map(y, |x, t| x * (1.0 - t * t))),
            Op::Sigmoid(a) => acc(grads, *a, g.zip_map(y, |x, s| x * s * (1.0 - s))),
            Op::Exp(a) => acc(grads, *a, g.zip_map(y, |x, e| x * e)),
            Op::Log(a) => acc(grads, *a, g.zip_map(self.value(*a), |x, z| x / z)),
            Op::Abs(a) => acc(grads, *a, g.zip_map(self.value(*a), |x, z| x * sign(z))),
            Op::Square(a) => acc(grads, *a, g.zip_map(self.value(*a), |x, z| 2.0 * x * z)),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(
                    grads,
                    *a,
                    g.zip_map(self.value(*a), |x, z| if z >= lo && z <= hi { x } else { 0.0 }),
                );
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                let is_min = matches!(node.op, Op::Minimum(..));
                let (am, bm) = (self.value(*a), self.value(*b));
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                let mut gb = Matrix::zeros(g.rows(), g.cols());
                for k in 0..g.len() {
                    let (x, z) = (am.data()[k], bm.data()[k]);
                    let pick_a = if is_min { x <= z } else { x >= z };
                    if pick_a {
                        ga.data_mut()[k] = g.data()[k];
                    } else {
                        gb.data_mut()[k] = g.data()[k];
                    }
                }
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::SumAll(a) => {
                let am = self.value(*a);
                acc(grads, *a, Matrix::filled(am.rows(), am.cols(), g.get(0, 0)));
            }
            Op::MeanAll(a) => {
                let am = self.value(*a);
                let v = g.get(0, 0) / am.len() as f64;
                acc(grads, *a, Matrix::filled(am.rows(), am.cols(), v));
            }
            Op::SumCols(a) => {
                let am = self.value(*a);
                let mut ga = Matrix::zeros(am.rows(), am.cols());
                for r in 0..am.rows() {
                    ga.row_mut(r).fill(g.get(r, 0));
                }
                acc(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let am = self.value(*a);
                let n = am.rows() as f64;
                let mut ga = Matrix::zeros(am.rows(), am.cols());
                for r in 0..am.rows() {
                    for (x, &gv) in ga.row_mut(r).iter_mut().zip(g.row(0)) {
                        *x = gv / n;
                    }
                }
                acc(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let s = super::matrix::dot(g.row(r), y.row(r));
                    for ((o, &gy), &p) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = p * (gy - s);
                    }
                }
                acc(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let s: f64 = g.row(r).iter().sum();
                    for ((o, &gy), &ly) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = gy - ly.exp() * s;
                    }
                }
                acc(grads, *a, ga);
            }
            Op::LayerNormRows(a, eps) => {
                let am = self.value(*a);
                let mut ga = Matrix::zeros(am.rows(), am.cols());
                for r in 0..am.rows() {
                    let x = am.row(r);
                    let n = x.len() as f64;
                    let mean = x.iter().sum::<f64>() / n;
                    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let gy = g.row(r);
                    let xhat = y.row(r);
                    let mean_g = gy.iter().sum::<f64>() / n;
                    let mean_gx = super::matrix::dot(gy, xhat) / n;
                    for ((o, &gv), &xh) in ga.row_mut(r).iter_mut().zip(gy).zip(xhat) {
                        *o = inv * (gv - mean_g - xh * mean_gx);
                    }
                }
                acc(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let pm = self.value(p);
                    let mut gp = Matrix::zeros(pm.rows(), pm.cols());
                    for r in 0..pm.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + pm.cols()]);
                    }
                    c0 += pm.cols();
                    acc(grads, p, gp);
                }
            }
            Op::SliceCols(a, start) => {
                let am = self.value(*a);
                let mut ga = Matrix::zeros(am.rows(), am.cols());
                for r in 0..am.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(grads, *a, ga);
            }
            Op::GatherCols(a, idx) => {
                let am = self.value(*a);
                let mut ga = Matrix::zeros(am.rows(), am.cols());
                for (r, &c) in idx.iter().enumerate() {
                    ga.set(r, c, g.get(r, 0));
                }
                acc(grads, *a, ga);
            }
            Op::GroupMatMulBt(a, b, groups) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                let (r, w) = group_dims(am.rows(), bm.rows(), *groups);
                let mut ga = Matrix::zeros(am.rows(), am.cols());
                let mut gb = Matrix::zeros(bm.rows(), bm.cols());
                for gi in 0..*groups {
                    for i in 0..r {
                        let ar = gi * r + i;
                        for j in 0..w {
                            let gv = g.get(ar, j);
                            if gv == 0.0 {
                                continue;
                            }
                            let br = gi * w + j;
                            for (o, &x) in ga.row_mut(ar).iter_mut().zip(bm.row(br)) {
                                *o += gv * x;
                            }
                            for (o, &x) in gb.row_mut(br).iter_mut().zip(am.row(ar)) {
                                *o += gv * x;
                            }
                        }
                    }
                }
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::GroupMatMul(p, v, groups) => {
                let (pm, vm) = (self.value(*p), self.value(*v));
                let (r, w) = group_dims(pm.rows(), vm.rows(), *groups);
                let mut gp = Matrix::zeros(pm.rows(), pm.cols());
                let mut gv = Matrix::zeros(vm.rows(), vm.cols());
                for gi in 0..*groups {
                    for i in 0..r {
                        let pr = gi * r + i;
                        let grow = g.row(pr);
                        for j in 0..w {
                            let vr = gi * w + j;
                            gp.set(pr, j, super::matrix::dot(grow, vm.row(vr)));
                            let pj = pm.get(pr, j);
                            if pj != 0.0 {
                                for (o, &x) in gv.row_mut(vr).iter_mut().zip(grow) {
                                    *o += pj * x;
                                }
                            }
                        }
                    }
                }
                acc(grads, *p, gp);
                acc(grads, *v, gv);
            }
            Op::GaussianNll(mu, ls, t) => {
                let (m, s, tg) = (self.value(*mu), self.value(*ls), self.value(*t));
                let mut gm = Matrix::zeros(m.rows(), m.cols());
                let mut gs = Matrix::zeros(m.rows(), m.cols());
                let mut gt = Matrix::zeros(m.rows(), m.cols());
                for r in 0..m.rows() {
                    let gr = g.get(r, 0);
                    for c in 0..m.cols() {
                        let d = tg.get(r, c) - m.get(r, c);
                        let inv_var = (-2.0 * s.get(r, c)).exp();
                        gm.set(r, c, -gr * d * inv_var);
                        gt.set(r, c, gr * d * inv_var);
                        gs.set(r, c, gr * (1.0 - d * d * inv_var));
                    }
                }
                acc(grads, *mu, gm);
                acc(grads, *ls, gs);
                acc(grads, *t, gt);
            }
            Op::Bce(p, t) => {
                let (pm, tm) = (self.value(*p), self.value(*t));
                let mut gp = Matrix::zeros(pm.rows(), pm.cols());
                let mut gt = Matrix::zeros(pm.rows(), pm.cols());
                for k in 0..pm.len() {
                    let (pv, tv, gv) = (pm.data()[k], tm.data()[k], g.data()[k]);
                    let pc = pv.clamp(PROB_EPS, 1.0 - PROB_EPS);
                    if (PROB_EPS..=1.0 - PROB_EPS).contains(&pv) {
                        gp.data_mut()[k] = gv * (-tv / pc + (1.0 - tv) / (1.0 - pc));
                    }
                    gt.data_mut()[k] = gv * ((1.0 - pc).ln() - pc.ln());
                }
                acc(grads, *p, gp);
                acc(grads, *t, gt);
            }
        }
    }
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn col_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &x) in out.row_mut(0).iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

fn group_dims(a_rows: usize, b_rows: usize, groups: usize) -> (usize, usize) {
    assert!(groups > 0, "zero groups");
    assert!(
        a_rows.is_multiple_of(groups) && b_rows.is_multiple_of(groups),
        "rows not divisible by group count"
    );
    (a_rows / groups, b_rows / groups)
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of a scalar function of one leaf matrix.
    fn numeric_grad(x: &Matrix, f: &dyn Fn(&mut Tape, Var) -> Var) -> Matrix {
        let h = 1e-6;
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[k] += h;
            let mut xm = x.clone();
            xm.data_mut()[k] -= h;
            let mut t = Tape::new();
            let v = t.leaf(xp);
            let lp = f(&mut t, v);
            let fp = t.scalar(lp);
            let mut t = Tape::new();
            let v = t.leaf(xm);
            let lm = f(&mut t, v);
            let fm = t.scalar(lm);
            out.data_mut()[k] = (fp - fm) / (2.0 * h);
        }
        out
    }

    fn check(x: Matrix, f: &dyn Fn(&mut Tape, Var) -> Var) {
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let loss = f(&mut t, v);
        let g = t.backward(loss);
        let analytic = g.wrt(v).cloned().unwrap_or(Matrix::zeros(x.rows(), x.cols()));
        let numeric = numeric_grad(&x, f);
        for k in 0..x.len() {
            let (a, n) = (analytic.data()[k], numeric.data()[k]);
            assert!(
                (a - n).abs() <= 1e-6 * (1.0 + a.abs().max(n.abs())),
                "element {k}: analytic {a} numeric {n}"
            );
        }
    }

    fn sample() -> Matrix {
        Matrix::from_vec(3, 4, vec![
            0.3, -1.2, 0.7, 2.0, -0.4, 0.9, -2.2, 0.15, 1.1, -0.6, 0.05, -0.8,
        ])
    }

    #[test]
    fn pointwise_ops_match_central_differences() {
        check(sample(), &|t, x| {
            let a = t.tanh(x);
            let b = t.sigmoid(x);
            let c = t.mul(a, b);
            let e = t.exp(c);
            let sq = t.square(x);
            let l = t.offset(sq, 1.0);
            let l = t.log(l);
            let s = t.add(e, l);
            let ab = t.abs(x);
            let s = t.sub(s, ab);
            t.sum_all(s)
        });
    }

    #[test]
    fn softmax_and_layer_norm_match_central_differences() {
        let w = Matrix::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        check(sample(), &move |t, x| {
            let s = t.softmax_rows(x);
            let ls = t.log_softmax_rows(x);
            let ln = t.layer_norm_rows(x, 1e-5);
            let wv = t.leaf(w.clone());
            let a = t.mul(s, wv);
            let b = t.mul(ls, wv);
            let c = t.mul(ln, wv);
            let ab = t.add(a, b);
            let abc = t.add(ab, c);
            t.sum_all(abc)
        });
    }

    #[test]
    fn grouped_products_match_central_differences() {
        let other = Matrix::from_vec(4, 2, vec![0.5, -0.3, 1.2, 0.8, -0.7, 0.1, 0.9, -1.4]);
        // x is 3x4 viewed as 6x2; 2 groups of 3 query rows against 2 key rows.
        check(sample(), &move |t, x| {
            let q = t.reshape(x, 6, 2);
            let k = t.leaf(other.clone());
            let s = t.group_matmul_bt(q, k, 2);
            let p = t.softmax_rows(s);
            let o = t.group_matmul(p, k, 2);
            let o2 = t.square(o);
            t.sum_all(o2)
        });
        let p_fixed = Matrix::from_vec(6, 2, vec![0.2, 0.8, 0.5, 0.5, 1.0, 0.0, 0.3, 0.7, 0.9, 0.1, 0.4, 0.6]);
        check(Matrix::from_vec(4, 3, (0..12).map(|i| (i as f64).cos()).collect()), &move |t, v| {
            let p = t.leaf(p_fixed.clone());
            let o = t.group_matmul(p, v, 2);
            let o2 = t.square(o);
            t.sum_all(o2)
        });
    }

    #[test]
    fn structural_ops_match_central_differences() {
        let row = Matrix::row_vector(&[0.5, -1.0]);
        check(sample(), &move |t, x| {
            let a = t.slice_cols(x, 1, 3);
            let b = t.slice_cols(x, 0, 2);
            let r = t.leaf(row.clone());
            let a = t.add_row(a, r);
            let b = t.mul_row(b, r);
            let c = t.concat_cols(&[a, b]);
            let col = t.slice_cols(x, 3, 4);
            let c = t.mul_col(c, col);
            let g = t.gather_cols(c, &[0, 3, 2]);
            let m = t.mean_rows(c);
            let s = t.sum_cols(c);
            let g2 = t.square(g);
            let a1 = t.sum_all(g2);
            let a2 = t.sum_all(m);
            let s2 = t.square(s);
            let a3 = t.mean_all(s2);
            t.sum_vars(&[a1, a2, a3])
        });
    }

    #[test]
    fn matmul_and_relu_match_central_differences() {
        let w = Matrix::from_vec(4, 2, vec![0.3, -0.2, 0.1, 0.9, -0.5, 0.4, 0.7, 0.6]);
        check(sample(), &move |t, x| {
            let wv = t.leaf(w.clone());
            let h = t.matmul(x, wv);
            let h = t.relu(h);
            let h = t.clamp(h, 0.0, 0.5);
            t.sum_all(h)
        });
    }

    #[test]
    fn fused_losses_match_central_differences() {
        let target = Matrix::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.7).cos()).collect());
        let t2 = target.clone();
        check(sample(), &move |t, x| {
            let tg = t.leaf(t2.clone());
            let ls = t.scale(x, 0.3);
            let nll = t.gaussian_nll(x, ls, tg);
            t.sum_all(nll)
        });
        let labels = Matrix::from_vec(3, 4, (0..12).map(|i| (i % 2) as f64).collect());
        check(sample(), &move |t, x| {
            let p = t.sigmoid(x);
            let l = t.leaf(labels.clone());
            let b = t.bce(p, l);
            t.mean_all(b)
        });
    }

    #[test]
    fn min_max_route_gradient_to_selected_branch() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::row_vector(&[1.0, 5.0]));
        let b = t.leaf(Matrix::row_vector(&[2.0, 3.0]));
        let m = t.minimum(a, b);
        let s = t.sum_all(m);
        let g = t.backward(s);
        assert_eq!(g.wrt(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(g.wrt(b).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn param_leaves_are_shared_and_accumulated() {
        let mut set = ParameterSet::new();
        let id = set.add("w", Matrix::row_vector(&[2.0]));
        let mut t = Tape::new();
        let w1 = t.param(&set, id);
        let w2 = t.param(&set, id);
        assert_eq!(w1, w2);
        let y = t.mul(w1, w2);
        let s = t.sum_all(y);
        let g = t.backward(s);
        t.accumulate_into(&g, &mut set);
        assert_eq!(set.grad(id).data(), &[4.0]);
    }
}
