use super::{DiffError, Tensor};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Abs(Var),
    MaxConst(Var, T),
    Recip(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    SumColGroups(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Transpose(Var),
    SliceRows(Var, usize),
    GatherCols(Var, Vec<usize>),
    MeanRowBlocks(Var, usize),
    Map(Var, fn(T) -> T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records primitive operations in evaluation order for reverse-mode
/// differentiation.
///
/// Nodes are append-only, so every input of a node has a smaller index than
/// the node itself and a reverse sweep visits each node once.
pub struct Tape<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf; it is differentiable iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs = tensor.requires_grad();
        let tensor = if needs && tensor.grad().is_none() {
            tensor.with_grad()
        } else {
            tensor
        };
        self.push(tensor, Op::Leaf, needs)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let shape = tensor.shape().to_vec();
        let t = Tensor::new(&shape, tensor.into_values()).expect("valid tensor");
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn values(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a differentiable leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize), DiffError> {
        self.value(v)
            .dims2()
            .ok_or_else(|| DiffError::RankMismatch {
                op,
                shape: self.shape(v).to_vec(),
            })
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = self.value(a);
        let out: Vec<T> = src.values().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(src.shape(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(t, op, needs)
    }

    fn binary_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        }
        let out: Vec<T> = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(ta.shape(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, op, needs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.values(a),
            false,
            self.values(b),
            false,
            T::zero(),
            &mut out,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, DiffError> {
        let (m, n) = self.dims2(name, a)?;
        if self.value(row).numel() != n {
            return Err(mismatch(name, self.shape(a), self.shape(row)));
        }
        let (ta, tr) = (self.values(a), self.values(row));
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(f(ta[i * n + j], tr[j]));
            }
        }
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(Tensor::new(&[m, n], out)?, op, needs))
    }

    /// `a[i, j] + row[j]` for a row of length `cols(a)`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        self.row_broadcast("add_row", a, row, |x, r| x + r, Op::AddRow(a, row))
    }

    /// `a[i, j] * row[j]`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        self.row_broadcast("mul_row", a, row, |x, r| x * r, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    /// `max(a, c)`; the subgradient at `a == c` is zero (the floor is active).
    pub fn max_const(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| if x > c { x } else { c }, Op::MaxConst(a, c))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.recip(), Op::Recip(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { T::zero() },
            Op::Relu(a),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Elementwise `f` whose derivative is supplied by the caller.
    pub fn map(&mut self, a: Var, f: fn(T) -> T, df: fn(T) -> T) -> Var {
        self.unary(a, f, Op::Map(a, df))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let n = src.last_dim().max(1);
        let mut out = src.values().to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let t = Tensor::new(src.shape(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(t, Op::Softmax(a), needs)
    }

    /// `x − max − ln Σ exp(x − max)` along the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let n = src.last_dim().max(1);
        let mut out = src.values().to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&v| (v - mx).exp()).sum();
            let shift = mx + total.ln();
            row.iter_mut().for_each(|v| *v = *v - shift);
        }
        let t = Tensor::new(src.shape(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(t, Op::LogSoftmax(a), needs)
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.values(a).iter().copied().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let vals = self.values(a);
        let s: T = vals.iter().copied().sum();
        let n = T::from_usize(vals.len().max(1)).unwrap();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s / n), Op::Mean(a), needs)
    }

    /// Row sums: `[m, n] -> [m, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, DiffError> {
        let (m, n) = self.dims2("sum_cols", a)?;
        let out: Vec<T> = self
            .values(a)
            .chunks(n.max(1))
            .map(|r| r.iter().copied().sum())
            .take(m)
            .collect();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(&[m, 1], out)?, Op::SumCols(a), needs))
    }

    /// Sums consecutive column groups of width `group`: `[m, g*k] -> [m, k]`.
    pub fn sum_col_groups(&mut self, a: Var, group: usize) -> Result<Var, DiffError> {
        let (m, n) = self.dims2("sum_col_groups", a)?;
        if group == 0 || n % group != 0 {
            return Err(mismatch("sum_col_groups", self.shape(a), &[group]));
        }
        let k = n / group;
        let src = self.values(a);
        let mut out = vec![T::zero(); m * k];
        for i in 0..m {
            for j in 0..n {
                out[i * k + j / group] += src[i * n + j];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(&[m, k], out)?,
            Op::SumColGroups(a, group),
            needs,
        ))
    }

    /// Concatenates rank-2 tensors along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = *parts.first().ok_or(DiffError::Empty("concat_cols"))?;
        let (m, _) = self.dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2("concat_cols", p)?;
            if r != m {
                return Err(mismatch("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.values(p)[i * w..(i + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(&[m, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            needs,
        ))
    }

    /// Concatenates rank-2 tensors along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = *parts.first().ok_or(DiffError::Empty("concat_rows"))?;
        let (_, n) = self.dims2("concat_rows", first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2("concat_rows", p)?;
            if c != n {
                return Err(mismatch("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
            out.extend_from_slice(self.values(p));
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(&[rows, n], out)?,
            Op::ConcatRows(parts.to_vec()),
            needs,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let vals = self.values(a).to_vec();
        let t = Tensor::new(shape, vals).map_err(|_| mismatch("reshape", self.shape(a), shape))?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::Reshape(a), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        let (m, n) = self.dims2("transpose", a)?;
        let src = self.values(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::Transpose(a), needs))
    }

    /// Rows `start..start + len` of a rank-2 tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let (m, n) = self.dims2("slice_rows", a)?;
        if start + len > m {
            return Err(mismatch("slice_rows", self.shape(a), &[start, len]));
        }
        let out = self.values(a)[start * n..(start + len) * n].to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(&[len, n], out)?, Op::SliceRows(a, start), needs))
    }

    /// Picks `a[i, index[i]]` from each row: `[m, n] -> [m, 1]`.
    pub fn gather_cols(&mut self, a: Var, index: &[usize]) -> Result<Var, DiffError> {
        let (m, n) = self.dims2("gather_cols", a)?;
        if index.len() != m || index.iter().any(|&j| j >= n) {
            return Err(mismatch("gather_cols", self.shape(a), &[index.len()]));
        }
        let src = self.values(a);
        let out: Vec<T> = index
            .iter()
            .enumerate()
            .map(|(i, &j)| src[i * n + j])
            .collect();
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(&[m, 1], out)?,
            Op::GatherCols(a, index.to_vec()),
            needs,
        ))
    }

    /// Averages `blocks` stacked row blocks: `[blocks*b, n] -> [b, n]`.
    pub fn mean_row_blocks(&mut self, a: Var, blocks: usize) -> Result<Var, DiffError> {
        let (m, n) = self.dims2("mean_row_blocks", a)?;
        if blocks == 0 || m % blocks != 0 {
            return Err(mismatch("mean_row_blocks", self.shape(a), &[blocks]));
        }
        let b = m / blocks;
        let src = self.values(a);
        let inv = T::one() / T::from_usize(blocks).unwrap();
        let mut out = vec![T::zero(); b * n];
        for q in 0..blocks {
            for (o, &v) in out.iter_mut().zip(&src[q * b * n..(q + 1) * b * n]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(&[b, n], out)?,
            Op::MeanRowBlocks(a, blocks),
            needs,
        ))
    }

    /// Accumulates `∂loss/∂leaf` into every differentiable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        if self.value(loss).numel() != 1 {
            return Err(DiffError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Op::Leaf = self.nodes[idx].op {
            if let Some(buf) = self.nodes[idx].value.grad_mut() {
                add_into(buf, g);
            }
            return;
        }
        let nodes = &self.nodes;
        let out = nodes[idx].value.values();
        let val = |v: Var| nodes[v.0].value.values();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()]);
            f(slot);
        };
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = nodes[a.0].value.dims2().unwrap();
                let n = nodes[b.0].value.last_dim();
                acc(*a, &mut |ga| {
                    T::gemm(m, n, k, g, false, val(*b), true, T::one(), ga);
                });
                acc(*b, &mut |gb| {
                    T::gemm(k, m, n, val(*a), true, g, false, T::one(), gb);
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, &d)| *x = *x - d));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((x, &d), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *x += d * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, &d), &y) in gb.iter_mut().zip(g).zip(va) {
                        *x += d * y;
                    }
                });
            }
            Op::AddRow(a, r) => {
                let n = nodes[r.0].value.numel();
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*r, &mut |gr| {
                    for row in g.chunks(n) {
                        add_into(gr, row);
                    }
                });
            }
            Op::MulRow(a, r) => {
                let n = nodes[r.0].value.numel();
                let (va, vr) = (val(*a), val(*r));
                acc(*a, &mut |ga| {
                    for (i, (x, &d)) in ga.iter_mut().zip(g).enumerate() {
                        *x += d * vr[i % n];
                    }
                });
                acc(*r, &mut |gr| {
                    for (i, (&d, &x)) in g.iter().zip(va).enumerate() {
                        gr[i % n] += d * x;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d * *c)
            }),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Abs(a) => {
                let va = val(*a);
                acc(*a, &mut |ga| {
                    for ((x, &d), &v) in ga.iter_mut().zip(g).zip(va) {
                        if v > T::zero() {
                            *x += d;
                        } else if v < T::zero() {
                            *x = *x - d;
                        }
                    }
                })
            }
            Op::MaxConst(a, c) => {
                let va = val(*a);
                acc(*a, &mut |ga| {
                    for ((x, &d), &v) in ga.iter_mut().zip(g).zip(va) {
                        if v > *c {
                            *x += d;
                        }
                    }
                })
            }
            Op::Relu(a) => {
                let va = val(*a);
                acc(*a, &mut |ga| {
                    for ((x, &d), &v) in ga.iter_mut().zip(g).zip(va) {
                        if v > T::zero() {
                            *x += d;
                        }
                    }
                })
            }
            Op::Recip(a) => acc(*a, &mut |ga| {
                for ((x, &d), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x = *x - d * y * y;
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for ((x, &d), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x += d * y * (T::one() - y);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for ((x, &d), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x += d * (T::one() - y * y);
                }
            }),
            Op::Exp(a) => acc(*a, &mut |ga| {
                for ((x, &d), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x += d * y;
                }
            }),
            Op::Log(a) => {
                let va = val(*a);
                acc(*a, &mut |ga| {
                    for ((x, &d), &v) in ga.iter_mut().zip(g).zip(va) {
                        *x += d / v;
                    }
                })
            }
            Op::Square(a) => {
                let va = val(*a);
                let two = T::one() + T::one();
                acc(*a, &mut |ga| {
                    for ((x, &d), &v) in ga.iter_mut().zip(g).zip(va) {
                        *x += d * two * v;
                    }
                })
            }
            Op::Map(a, df) => {
                let va = val(*a);
                acc(*a, &mut |ga| {
                    for ((x, &d), &v) in ga.iter_mut().zip(g).zip(va) {
                        *x += d * df(v);
                    }
                })
            }
            Op::Softmax(a) => {
                let n = nodes[a.0].value.last_dim().max(1);
                acc(*a, &mut |ga| {
                    for ((gx, gy), y) in ga.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let dot: T = gy.iter().zip(y).map(|(&d, &p)| d * p).sum();
                        for ((x, &d), &p) in gx.iter_mut().zip(gy).zip(y) {
                            *x += p * (d - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let n = nodes[a.0].value.last_dim().max(1);
                acc(*a, &mut |ga| {
                    for ((gx, gy), y) in ga.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let total: T = gy.iter().copied().sum();
                        for ((x, &d), &l) in gx.iter_mut().zip(gy).zip(y) {
                            *x += d - l.exp() * total;
                        }
                    }
                })
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let inv = g[0] / T::from_usize(nodes[a.0].value.numel().max(1)).unwrap();
                acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += inv))
            }
            Op::SumCols(a) => {
                let n = nodes[a.0].value.last_dim().max(1);
                acc(*a, &mut |ga| {
                    for (row, &d) in ga.chunks_mut(n).zip(g) {
                        row.iter_mut().for_each(|x| *x += d);
                    }
                })
            }
            Op::SumColGroups(a, group) => {
                let n = nodes[a.0].value.last_dim();
                let k = n / group;
                acc(*a, &mut |ga| {
                    for (i, x) in ga.iter_mut().enumerate() {
                        let (r, c) = (i / n, i % n);
                        *x += g[r * k + c / group];
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let total = nodes[idx].value.last_dim();
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].value.last_dim();
                    acc(*p, &mut |gp| {
                        for (i, row) in gp.chunks_mut(w).enumerate() {
                            add_into(row, &g[i * total + offset..i * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.numel();
                    acc(*p, &mut |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::Transpose(a) => {
                let (m, n) = nodes[a.0].value.dims2().unwrap();
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                })
            }
            Op::SliceRows(a, start) => {
                let n = nodes[a.0].value.last_dim();
                acc(*a, &mut |ga| {
                    add_into(&mut ga[start * n..start * n + g.len()], g);
                })
            }
            Op::GatherCols(a, index) => {
                let n = nodes[a.0].value.last_dim();
                acc(*a, &mut |ga| {
                    for (i, (&j, &d)) in index.iter().zip(g).enumerate() {
                        ga[i * n + j] += d;
                    }
                })
            }
            Op::MeanRowBlocks(a, blocks) => {
                let inv = T::one() / T::from_usize(*blocks).unwrap();
                acc(*a, &mut |ga| {
                    for chunk in ga.chunks_mut(g.len()) {
                        for (x, &d) in chunk.iter_mut().zip(g) {
                            *x += d * inv;
                        }
                    }
                })
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (x, &d) in dst.iter_mut().zip(src) {
        *x += d;
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
