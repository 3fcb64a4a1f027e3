//! Reverse-mode differentiation tape.
//!
//! Every op evaluates eagerly and appends a node holding its output value and
//! the handles of its inputs. [`Tape::backward`] walks the nodes in exact
//! reverse order of execution, so a node's gradient is complete before it is
//! propagated to its inputs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::lstm::LstmRecord;
use crate::tensor::matrix::{gemm_nt, gemm_tn, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruptions of a backward rule. Used only as a negative
/// control for gradient checking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientFault {
    /// Scales the right-operand gradient of `matmul` by 1.25.
    MatmulRhs,
    /// Drops the forget-gate term from the LSTM cell-state recurrence.
    LstmCellCarry,
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxColumns(Var),
    ConcatRows(Var, Var),
    ConcatCols(Vec<Var>),
    SliceRows {
        input: Var,
        start: usize,
    },
    RowMaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Sum(Var),
    CrossEntropy {
        scores: Var,
        gold: usize,
        probs: Vec<T>,
    },
    Lstm(Box<LstmRecord<T>>),
}

pub(crate) struct Node<T> {
    pub(crate) value: Matrix<T>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Matrix<T>>>,
    pub(crate) fault: Option<GradientFault>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            fault: None,
        }
    }

    pub fn with_fault(fault: GradientFault) -> Self {
        Tape {
            fault: Some(fault),
            ..Self::new()
        }
    }

    pub fn fault(&self) -> Option<GradientFault> {
        self.fault
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Matrix<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Every node value in recording order.
    pub fn values(&self) -> impl Iterator<Item = &Matrix<T>> {
        self.nodes.iter().map(|n| &n.value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`. For leaves
    /// this is the sum over every backward call since the last
    /// [`Tape::zero_grad`].
    pub fn grad(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, rg, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elementwise_sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elementwise_mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    /// Adds the column vector `bias` (l×1) to every column of `m` (l×T).
    pub fn add_bias(&mut self, m: Var, bias: Var) -> Result<Var> {
        let (ms, bs) = (self.shape(m), self.shape(bias));
        if bs.1 != 1 || ms.0 != bs.0 {
            return Err(Error::Dimension {
                op: "add_bias_broadcast",
                left: ms,
                right: bs,
            });
        }
        let mut value = self.value(m).clone();
        let b = self.value(bias);
        for r in 0..ms.0 {
            let br = b[(r, 0)];
            for c in 0..ms.1 {
                value[(r, c)] = value[(r, c)] + br;
            }
        }
        let rg = self.rg(&[m, bias]);
        Ok(self.push(value, rg, Op::AddBias(m, bias)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map(|x| if x <= T::zero() { T::zero() } else { x });
        let rg = self.rg(&[a]);
        self.push(value, rg, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(value, rg, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(T::tanh);
        let rg = self.rg(&[a]);
        self.push(value, rg, Op::Tanh(a))
    }

    /// Column-wise softmax. `mask`, when given, is row-major with the same
    /// shape as `m`; `false` entries are excluded and come out exactly zero.
    pub fn softmax_columns(&mut self, m: Var, mask: Option<&[bool]>) -> Result<Var> {
        let input = self.value(m);
        let (rows, cols) = input.shape();
        if let Some(mask) = mask {
            if mask.len() != rows * cols {
                return Err(Error::Dimension {
                    op: "softmax_columns",
                    left: (rows, cols),
                    right: (mask.len(), 1),
                });
            }
        }
        let keep = |r: usize, c: usize| mask.is_none_or(|mk| mk[r * cols + c]);
        let mut value = Matrix::zeros(rows, cols);
        for c in 0..cols {
            let mut max = T::neg_infinity();
            let mut any = false;
            for r in 0..rows {
                if keep(r, c) {
                    any = true;
                    max = max.max(input[(r, c)]);
                }
            }
            if !any {
                return Err(Error::DegenerateMask {
                    op: "softmax_columns",
                    column: c,
                });
            }
            let mut total = T::zero();
            for r in 0..rows {
                if keep(r, c) {
                    let e = (input[(r, c)] - max).exp();
                    value[(r, c)] = e;
                    total = total + e;
                }
            }
            for r in 0..rows {
                if keep(r, c) {
                    value[(r, c)] = value[(r, c)] / total;
                }
            }
        }
        let rg = self.rg(&[m]);
        Ok(self.push(value, rg, Op::SoftmaxColumns(m)))
    }

    /// Softmax over rows where a whole row is either valid or padding.
    pub fn softmax_columns_row_masked(&mut self, m: Var, valid_rows: &[bool]) -> Result<Var> {
        let (rows, cols) = self.shape(m);
        if valid_rows.len() != rows {
            return Err(Error::Dimension {
                op: "softmax_columns",
                left: (rows, cols),
                right: (valid_rows.len(), 1),
            });
        }
        let mask: Vec<bool> = valid_rows
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, cols))
            .collect();
        self.softmax_columns(m, Some(&mask))
    }

    /// Stacks every part top to bottom.
    pub fn concat_rows_all(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts
            .split_first()
            .ok_or(Error::EmptySequence("concat_rows_all"))?;
        rest.iter()
            .try_fold(first, |acc, &v| self.concat_rows(acc, v))
    }

    /// Stacks `a` above `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(Error::Dimension {
                op: "concat_rows",
                left: sa,
                right: sb,
            });
        }
        let mut data = Vec::with_capacity((sa.0 + sb.0) * sa.1);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let value = Matrix::from_vec(sa.0 + sb.0, sa.1, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::ConcatRows(a, b)))
    }

    /// Places the inputs side by side; all must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of zero tensors".into()))?;
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: s,
                });
            }
            cols += s.1;
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let part = self.value(p);
            for r in 0..rows {
                for c in 0..part.cols() {
                    value[(r, offset + c)] = part[(r, c)];
                }
            }
            offset += part.cols();
        }
        let rg = self.rg(parts);
        Ok(self.push(value, rg, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.0 {
            return Err(Error::Dimension {
                op: "slice_rows",
                left: s,
                right: (start, len),
            });
        }
        let cols = s.1;
        let data = self.value(a).data()[start * cols..(start + len) * cols].to_vec();
        let value = Matrix::from_vec(len, cols, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, rg, Op::SliceRows { input: a, start }))
    }

    /// Per-row maximum over the (unmasked) columns, returned as an l×1 column.
    /// Ties go to the lowest column index.
    pub fn row_max_pool(&mut self, m: Var, mask: Option<&[bool]>) -> Result<Var> {
        let input = self.value(m);
        let (rows, cols) = input.shape();
        if let Some(mask) = mask {
            if mask.len() != cols {
                return Err(Error::Dimension {
                    op: "row_max_pool",
                    left: (rows, cols),
                    right: (1, mask.len()),
                });
            }
        }
        let keep: Vec<usize> = (0..cols).filter(|&c| mask.is_none_or(|mk| mk[c])).collect();
        if keep.is_empty() || rows == 0 {
            return Err(Error::DegeneratePool { op: "row_max_pool" });
        }
        let mut value = Matrix::zeros(rows, 1);
        let mut argmax = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut best = keep[0];
            for &c in &keep[1..] {
                if beats(input[(r, c)], input[(r, best)]) {
                    best = c;
                }
            }
            value[(r, 0)] = input[(r, best)];
            argmax.push(best);
        }
        let rg = self.rg(&[m]);
        Ok(self.push(value, rg, Op::RowMaxPool { input: m, argmax }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, rg, Op::Sum(a))
    }

    /// Negative log-probability of `gold` under a softmax over the K×1
    /// `scores`, computed with log-sum-exp.
    pub fn cross_entropy(&mut self, scores: Var, gold: usize) -> Result<Var> {
        let s = self.value(scores);
        let (k, cols) = s.shape();
        if cols != 1 || k == 0 {
            return Err(Error::Dimension {
                op: "candidate_loss",
                left: (k, cols),
                right: (k, 1),
            });
        }
        if gold >= k {
            return Err(Error::Validation(format!(
                "gold index {gold} out of range for {k} candidates"
            )));
        }
        let top = argmax_first(s.data());
        let max = s[(top, 0)];
        let rest: T = (0..k)
            .filter(|&j| j != top)
            .map(|j| (s[(j, 0)] - max).exp())
            .sum();
        let loss = (max - s[(gold, 0)]) + rest.ln_1p();
        let denom = T::one() + rest;
        let probs: Vec<T> = (0..k).map(|j| (s[(j, 0)] - max).exp() / denom).collect();
        let rg = self.rg(&[scores]);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            rg,
            Op::CrossEntropy {
                scores,
                gold,
                probs,
            },
        ))
    }

    /// Propagates d(loss)/d(·) to every reachable node that requires a
    /// gradient. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix<T>>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        if self.grads.len() < n {
            self.grads.resize_with(n, || None);
        }
        for (idx, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let is_leaf = matches!(self.nodes[idx].op, Op::Leaf);
            match (&mut self.grads[idx], is_leaf) {
                (Some(acc), true) => acc.add_assign(&g),
                (slot, _) => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        let mut acc = |v: Var, delta: Matrix<T>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let val = |v: Var| &nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if nodes[a.0].requires_grad {
                    let mut da = Matrix::zeros(va.rows(), va.cols());
                    gemm_nt(&mut da, g, vb);
                    acc(*a, da);
                }
                if nodes[b.0].requires_grad {
                    let mut db = Matrix::zeros(vb.rows(), vb.cols());
                    gemm_tn(&mut db, va, g);
                    if self.fault == Some(GradientFault::MatmulRhs) {
                        db.scale_in_place(T::lit(1.25));
                    }
                    acc(*b, db);
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |x, y| x * y));
                acc(*b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::AddBias(m, bias) => {
                acc(*m, g.clone());
                let mut db = Matrix::zeros(g.rows(), 1);
                for r in 0..g.rows() {
                    db[(r, 0)] = g.row(r).iter().copied().sum();
                }
                acc(*bias, db);
            }
            Op::Relu(a) => {
                let d = g.zip_map(val(*a), |gx, x| if x > T::zero() { gx } else { T::zero() });
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(&node.value, |gx, y| gx * y * (T::one() - y));
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(&node.value, |gx, y| gx * (T::one() - y * y));
                acc(*a, d);
            }
            Op::SoftmaxColumns(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for c in 0..y.cols() {
                    let dot: T = (0..y.rows()).map(|r| y[(r, c)] * g[(r, c)]).sum();
                    for r in 0..y.rows() {
                        d[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                    }
                }
                acc(*a, d);
            }
            Op::ConcatRows(a, b) => {
                let ra = val(*a).rows();
                let cols = g.cols();
                let (top, bottom) = g.data().split_at(ra * cols);
                acc(*a, Matrix::from_vec(ra, cols, top.to_vec()).expect("split"));
                acc(
                    *b,
                    Matrix::from_vec(g.rows() - ra, cols, bottom.to_vec()).expect("split"),
                );
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    let mut d = Matrix::zeros(g.rows(), pc);
                    for r in 0..g.rows() {
                        for c in 0..pc {
                            d[(r, c)] = g[(r, offset + c)];
                        }
                    }
                    offset += pc;
                    acc(p, d);
                }
            }
            Op::SliceRows { input, start } => {
                let src = val(*input);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        d[(start + r, c)] = g[(r, c)];
                    }
                }
                acc(*input, d);
            }
            Op::RowMaxPool { input, argmax } => {
                let src = val(*input);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for (r, &c) in argmax.iter().enumerate() {
                    d[(r, c)] = g[(r, 0)];
                }
                acc(*input, d);
            }
            Op::Sum(a) => {
                let s = val(*a).shape();
                acc(*a, Matrix::filled(s.0, s.1, g[(0, 0)]));
            }
            Op::CrossEntropy {
                scores,
                gold,
                probs,
            } => {
                let scale = g[(0, 0)];
                let d = probs
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| {
                        let onehot = if j == *gold { T::one() } else { T::zero() };
                        scale * (p - onehot)
                    })
                    .collect();
                acc(*scores, Matrix::column_vector(d));
            }
            Op::Lstm(record) => {
                let grads = record.backward(g, &node.value, val, self.fault);
                acc(record.input, grads.input);
                acc(record.w_ih, grads.w_ih);
                acc(record.w_hh, grads.w_hh);
                acc(record.bias, grads.bias);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Index of the maximum; ties resolve to the lowest index.
/// Strictly greater, with NaN above every number so it propagates.
fn beats<T: Scalar>(candidate: T, best: T) -> bool {
    candidate > best || (candidate.is_nan() && !best.is_nan())
}

pub(crate) fn argmax_first<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if beats(v, values[best]) {
            best = i;
        }
    }
    best
}
