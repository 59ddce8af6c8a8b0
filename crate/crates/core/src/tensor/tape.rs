use super::kernels::{matmul_at_into, matmul_bt_into, matmul_into};
use super::Tensor;
use crate::error::{Error, Result};

/// Norm floor below which a vector is considered degenerate.
pub const NORM_FLOOR: f64 = 1e-8;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean allow-mask over a `rows × cols` score matrix.
///
/// Every row must allow at least one column; a fully masked row would turn
/// into a 0/0 softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::Dimension {
                op: "mask",
                lhs: vec![rows, cols],
                rhs: vec![allowed.len()],
            });
        }
        for r in 0..rows {
            if !allowed[r * cols..(r + 1) * cols].iter().any(|&a| a) {
                return Err(Error::Precondition(format!(
                    "mask row {r} allows no position"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            allowed,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let allowed = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self::new(rows, cols, allowed)
    }

    pub fn all(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    /// Lower-triangular mask: row `t` sees columns `0..=t`.
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i).expect("causal rows are never empty")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    RepeatRows(Var, usize),
    Softmax { x: Var, axis: usize },
    MaskedSoftmax(Var),
    SoftmaxCe { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64> },
    SoftCe { logits: Var, target: Vec<f64>, probs: Vec<f64> },
    Tanh(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SegmentMean { x: Var, segments: Vec<(usize, usize)> },
    NormalizeRows { x: Var, norms: Vec<f64> },
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ReverseRows(Var),
    Reshape(Var),
    ScalarFn { x: Var, dfdx: Vec<f64> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records one forward pass for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so reverse index order is a valid
/// topological order for the backward sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn softmax_in_place(row: &mut [f64]) {
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

fn masked_softmax_in_place(row: &mut [f64], allowed: &[bool]) {
    let max = row
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(x, _)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (x, &a) in row.iter_mut().zip(allowed) {
        *x = if a { (*x - max).exp() } else { 0.0 };
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
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
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward output with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.nodes[v.0].value.shape(), g.clone()).expect("grad shape"))
    }

    /// Number of gradient buffers currently allocated.
    pub fn grad_buffers(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    /// Copy of `v` cut off from the gradient graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("sub", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let value = Tensor::new(ta.shape(), ta.data().iter().map(|x| x * c).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(value, rg, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let value = Tensor::new(ta.shape(), ta.data().iter().map(|x| x + c).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(value, rg, Op::AddScalar(a))
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = match (ta.dims2(), tb.dims2()) {
            (Ok(x), Ok(y)) => (x, y),
            _ => return Err(shape_err("matmul", ta, tb)),
        };
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), m, k, n, &mut out);
        let value = Tensor::new(&[m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (n, k2)) = match (ta.dims2(), tb.dims2()) {
            (Ok(x), Ok(y)) => (x, y),
            _ => return Err(shape_err("matmul_bt", ta, tb)),
        };
        if k != k2 {
            return Err(shape_err("matmul_bt", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        matmul_bt_into(ta.data(), tb.data(), m, k, n, &mut out);
        let value = Tensor::new(&[m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::MatMulBt(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ta.data()[i * n + j];
            }
        }
        let value = Tensor::new(&[n, m], out)?;
        let rg = self.rg(a);
        Ok(self.push(value, rg, Op::Transpose(a)))
    }

    fn row_operand(&self, op: &'static str, x: Var, r: Var) -> Result<(usize, usize)> {
        let (tx, tr) = (self.value(x), self.value(r));
        let (m, n) = tx.dims2().map_err(|_| shape_err(op, tx, tr))?;
        if tr.len() != n || tr.cols() != n {
            return Err(shape_err(op, tx, tr));
        }
        Ok((m, n))
    }

    /// Adds a length-`n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, n) = self.row_operand("add_row", x, row)?;
        let tx = self.value(x);
        let tr = self.value(row).data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tr[i % n])
            .collect();
        let value = Tensor::new(tx.shape(), data)?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(value, rg, Op::AddRow(x, row)))
    }

    /// Multiplies every row of an `m×n` matrix elementwise by a length-`n` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, n) = self.row_operand("mul_row", x, row)?;
        let tx = self.value(x);
        let tr = self.value(row).data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * tr[i % n])
            .collect();
        let value = Tensor::new(tx.shape(), data)?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(value, rg, Op::MulRow(x, row)))
    }

    /// Repeats every row `times` times consecutively: `m×n -> (m·times)×n`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        let mut out = Vec::with_capacity(m * times * n);
        for i in 0..m {
            for _ in 0..times {
                out.extend_from_slice(tx.row(i));
            }
        }
        let value = Tensor::new(&[m * times, n], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::RepeatRows(x, times)))
    }

    /// Softmax along `axis`, stabilized by max-subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let shape = tx.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Precondition(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out = tx.data().to_vec();
        let mut buf = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                for (l, b) in buf.iter_mut().enumerate() {
                    *b = out[(o * len + l) * inner + i];
                }
                softmax_in_place(&mut buf);
                for (l, b) in buf.iter().enumerate() {
                    out[(o * len + l) * inner + i] = *b;
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::Softmax { x, axis }))
    }

    /// Row softmax where disallowed positions get exactly zero weight.
    pub fn masked_softmax(&mut self, x: Var, mask: &Mask) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        if (m, n) != (mask.rows, mask.cols) {
            return Err(Error::Dimension {
                op: "masked_softmax",
                lhs: vec![m, n],
                rhs: vec![mask.rows, mask.cols],
            });
        }
        let mut out = tx.data().to_vec();
        for i in 0..m {
            masked_softmax_in_place(
                &mut out[i * n..(i + 1) * n],
                &mask.allowed[i * n..(i + 1) * n],
            );
        }
        let value = Tensor::new(&[m, n], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::MaskedSoftmax(x)))
    }

    /// Sum over rows of `-log softmax(logits_i)[target_i]`.
    ///
    /// Rows whose target is `None` are skipped. With a mask, disallowed columns
    /// are removed from the softmax support.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        mask: Option<&Mask>,
    ) -> Result<Var> {
        let tl = self.value(logits);
        let (m, n) = tl.dims2()?;
        if targets.len() != m {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                lhs: vec![m, n],
                rhs: vec![targets.len()],
            });
        }
        if let Some(mask) = mask {
            if (mask.rows, mask.cols) != (m, n) {
                return Err(Error::Dimension {
                    op: "softmax_cross_entropy",
                    lhs: vec![m, n],
                    rhs: vec![mask.rows, mask.cols],
                });
            }
        }
        let mut probs = tl.data().to_vec();
        let mut loss = 0.0;
        for i in 0..m {
            let row = &mut probs[i * n..(i + 1) * n];
            let logits_row = tl.row(i);
            let (max, lse) = match mask {
                Some(mask) => {
                    let allowed = &mask.allowed[i * n..(i + 1) * n];
                    masked_softmax_in_place(row, allowed);
                    let max = logits_row
                        .iter()
                        .zip(allowed)
                        .filter(|(_, &a)| a)
                        .map(|(x, _)| *x)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = logits_row
                        .iter()
                        .zip(allowed)
                        .filter(|(_, &a)| a)
                        .map(|(x, _)| (x - max).exp())
                        .sum();
                    (max, s.ln())
                }
                None => {
                    softmax_in_place(row);
                    let max = logits_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = logits_row.iter().map(|x| (x - max).exp()).sum();
                    (max, s.ln())
                }
            };
            if let Some(t) = targets[i] {
                if t >= n {
                    return Err(Error::Precondition(format!(
                        "target {t} out of range for {n} classes"
                    )));
                }
                if let Some(mask) = mask {
                    if !mask.allows(i, t) {
                        return Err(Error::Precondition(format!(
                            "target {t} of row {i} is masked out"
                        )));
                    }
                }
                loss += max + lse - logits_row[t];
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Sum over rows of `-Σ_j target_ij · log softmax(logits_i)_j`; `target`
    /// is a constant.
    pub fn soft_cross_entropy(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let tl = self.value(logits);
        if tl.shape() != target.shape() {
            return Err(shape_err("soft_cross_entropy", tl, target));
        }
        let (m, n) = tl.dims2()?;
        let mut probs = tl.data().to_vec();
        let mut loss = 0.0;
        for i in 0..m {
            softmax_in_place(&mut probs[i * n..(i + 1) * n]);
            let row = tl.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for (x, t) in row.iter().zip(target.row(i)) {
                loss -= t * (x - lse);
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftCe {
                logits,
                target: target.data().to_vec(),
                probs,
            },
        ))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let value = Tensor::new(tx.shape(), tx.data().iter().map(|v| v.tanh()).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(value, rg, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let value = Tensor::new(tx.shape(), tx.data().iter().map(|v| v.max(0.0)).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(value, rg, Op::Relu(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let s = tx.data().iter().sum::<f64>() / tx.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), rg, Op::Mean(x))
    }

    /// Mean over the row axis: `m×n -> 1×n`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(tx.row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let value = Tensor::new(&[1, n], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::MeanRows(x)))
    }

    /// Mean of each contiguous `(start, len)` row segment: `m×n -> s×n`.
    pub fn segment_mean(&mut self, x: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        if segments.is_empty() {
            return Err(Error::Precondition("segment_mean needs ≥1 segment".into()));
        }
        let mut out = vec![0.0; segments.len() * n];
        for (s, &(start, len)) in segments.iter().enumerate() {
            if len == 0 || start + len > m {
                return Err(Error::Precondition(format!(
                    "segment ({start}, {len}) invalid for {m} rows"
                )));
            }
            let o = &mut out[s * n..(s + 1) * n];
            for r in start..start + len {
                for (acc, v) in o.iter_mut().zip(tx.row(r)) {
                    *acc += v;
                }
            }
            for acc in o.iter_mut() {
                *acc /= len as f64;
            }
        }
        let value = Tensor::new(&[segments.len(), n], out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            rg,
            Op::SegmentMean {
                x,
                segments: segments.to_vec(),
            },
        ))
    }

    /// L2-normalizes every row. Rows with norm ≤ [`NORM_FLOOR`] are rejected.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        let mut norms = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = tx.row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > NORM_FLOOR) {
                return Err(Error::DegenerateVector {
                    row: Some(i),
                    norm,
                    floor: NORM_FLOOR,
                });
            }
            norms.push(norm);
            out.extend(row.iter().map(|v| v / norm));
        }
        let value = Tensor::new(&[m, n], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::NormalizeRows { x, norms }))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        let mut inv_std = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = tx.row(i);
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            out.extend(row.iter().map(|v| (v - mu) * is));
        }
        let value = Tensor::new(&[m, n], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::LayerNorm { x, inv_std }))
    }

    /// Row lookup: `out[r] = table[ids[r]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, n) = tt.dims2()?;
        if ids.is_empty() {
            return Err(Error::Precondition("gather_rows needs ≥1 id".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= v {
                return Err(Error::Precondition(format!(
                    "row id {id} out of range for table of {v} rows"
                )));
            }
            out.extend_from_slice(tt.row(id));
        }
        let value = Tensor::new(&[ids.len(), n], out)?;
        let rg = self.rg(table);
        Ok(self.push(
            value,
            rg,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Precondition("concat_rows needs ≥1 part".into()))?;
        let n = self.value(*first).dims2()?.1;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let tp = self.value(p);
            let (pm, pn) = tp.dims2()?;
            if pn != n {
                return Err(shape_err("concat_rows", self.value(*first), tp));
            }
            m += pm;
            out.extend_from_slice(tp.data());
        }
        let value = Tensor::new(&[m, n], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, rg, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Precondition("concat_cols needs ≥1 part".into()))?;
        let m = self.value(*first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let tp = self.value(p);
            let (pm, pn) = tp.dims2()?;
            if pm != m {
                return Err(shape_err("concat_cols", self.value(*first), tp));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(&[m, n], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        if start >= end || end > m {
            return Err(Error::Precondition(format!(
                "row slice {start}..{end} invalid for {m} rows"
            )));
        }
        let value = Tensor::new(&[end - start, n], tx.data()[start * n..end * n].to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::SliceRows { x, start }))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        if start >= end || end > n {
            return Err(Error::Precondition(format!(
                "column slice {start}..{end} invalid for {n} columns"
            )));
        }
        let mut out = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            out.extend_from_slice(&tx.row(i)[start..end]);
        }
        let value = Tensor::new(&[m, end - start], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::SliceCols { x, start }))
    }

    pub fn reverse_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        let mut out = Vec::with_capacity(m * n);
        for i in (0..m).rev() {
            out.extend_from_slice(tx.row(i));
        }
        let value = Tensor::new(&[m, n], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::ReverseRows(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    /// A scalar node whose value and gradient with respect to `x` were
    /// computed outside the tape.
    pub fn scalar_fn(&mut self, x: Var, value: f64, dfdx: Tensor) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape() != dfdx.shape() {
            return Err(shape_err("scalar_fn", tx, &dfdx));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(value),
            rg,
            Op::ScalarFn {
                x,
                dfdx: dfdx.into_data(),
            },
        ))
    }

    /// Cosine similarity of two equal-length vectors (any shape, flattened).
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        if na != nb {
            return Err(shape_err("cosine_sim", self.value(a), self.value(b)));
        }
        let a2 = self.reshape(a, &[1, na])?;
        let b2 = self.reshape(b, &[1, nb])?;
        let an = self.normalize_rows(a2).map_err(|e| strip_row(e))?;
        let bn = self.normalize_rows(b2).map_err(|e| strip_row(e))?;
        let dot = self.matmul_bt(an, bn)?;
        self.reshape(dot, &[1])
    }

    /// Reverse sweep from the scalar `out`. Returns the number of nodes visited.
    pub fn backward(&mut self, out: Var) -> Result<usize> {
        if self.value(out).len() != 1 {
            return Err(Error::Precondition(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(out).shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(out) {
            return Ok(0);
        }
        self.grads[out.0] = Some(vec![1.0]);
        let mut visited = 0;
        for i in (0..=out.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            visited += 1;
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(visited)
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Temporarily move the op out so parent buffers can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(*b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(*b) {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x -= y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let vb = self.nodes[b.0].value.data().to_vec();
                let va = self.nodes[a.0].value.data().to_vec();
                if let Some(ga) = self.acc(*a) {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(&vb) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = self.acc(*b) {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(&va) {
                        *x += gi * ai;
                    }
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                if let Some(ga) = self.acc(*a) {
                    for (x, gi) in ga.iter_mut().zip(g) {
                        *x += c * gi;
                    }
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = self.acc(*a) {
                    add_into(ga, g);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().expect("2d");
                let n = self.nodes[b.0].value.cols();
                if self.rg(*a) {
                    let vb = self.nodes[b.0].value.data().to_vec();
                    let ga = self.acc(*a).expect("rg");
                    // g[m×n] · b[k×n]ᵀ
                    matmul_bt_into(g, &vb, m, n, k, ga);
                }
                if self.rg(*b) {
                    let va = self.nodes[a.0].value.data().to_vec();
                    let gb = self.acc(*b).expect("rg");
                    matmul_at_into(&va, g, m, k, n, gb);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().expect("2d");
                let n = self.nodes[b.0].value.rows();
                if self.rg(*a) {
                    let vb = self.nodes[b.0].value.data().to_vec();
                    let ga = self.acc(*a).expect("rg");
                    // g[m×n] · b[n×k]
                    matmul_into(g, &vb, m, n, k, ga);
                }
                if self.rg(*b) {
                    let va = self.nodes[a.0].value.data().to_vec();
                    let gb = self.acc(*b).expect("rg");
                    // g[m×n]ᵀ · a[m×k]
                    matmul_at_into(g, &va, m, n, k, gb);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.nodes[a.0].value.dims2().expect("2d");
                if let Some(ga) = self.acc(*a) {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::AddRow(x, r) => {
                let n = self.nodes[r.0].value.len();
                if let Some(gx) = self.acc(*x) {
                    add_into(gx, g);
                }
                if let Some(gr) = self.acc(*r) {
                    for (idx, gi) in g.iter().enumerate() {
                        gr[idx % n] += gi;
                    }
                }
            }
            Op::MulRow(x, r) => {
                let n = self.nodes[r.0].value.len();
                let vr = self.nodes[r.0].value.data().to_vec();
                let vx = self.nodes[x.0].value.data().to_vec();
                if let Some(gx) = self.acc(*x) {
                    for (idx, (o, gi)) in gx.iter_mut().zip(g).enumerate() {
                        *o += gi * vr[idx % n];
                    }
                }
                if let Some(gr) = self.acc(*r) {
                    for (idx, gi) in g.iter().enumerate() {
                        gr[idx % n] += gi * vx[idx];
                    }
                }
            }
            Op::RepeatRows(x, times) => {
                let times = *times;
                let n = self.nodes[x.0].value.cols();
                if let Some(gx) = self.acc(*x) {
                    for (r, grow) in g.chunks(n).enumerate() {
                        let dst = &mut gx[(r / times) * n..(r / times + 1) * n];
                        add_into(dst, grow);
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let y = self.nodes[i].value.data().to_vec();
                let shape = self.nodes[i].value.shape().to_vec();
                let (outer, len, inner) = axis_split(&shape, *axis);
                if let Some(gx) = self.acc(*x) {
                    for o in 0..outer {
                        for c in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + c;
                            let dot: f64 = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                            for l in 0..len {
                                gx[idx(l)] += y[idx(l)] * (g[idx(l)] - dot);
                            }
                        }
                    }
                }
            }
            Op::MaskedSoftmax(x) => {
                let y = self.nodes[i].value.data().to_vec();
                let n = self.nodes[i].value.cols();
                if let Some(gx) = self.acc(*x) {
                    for ((gxr, yr), gr) in gx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, yi), gi) in gxr.iter_mut().zip(yr).zip(gr) {
                            // masked entries have yi == 0 and receive nothing
                            if *yi != 0.0 {
                                *o += yi * (gi - dot);
                            }
                        }
                    }
                }
            }
            Op::SoftmaxCe {
                logits,
                targets,
                probs,
            } => {
                let n = self.nodes[logits.0].value.cols();
                let g0 = g[0];
                if let Some(gl) = self.acc(*logits) {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        let row = &mut gl[r * n..(r + 1) * n];
                        for (j, o) in row.iter_mut().enumerate() {
                            let p = probs[r * n + j];
                            let y = if j == *t { 1.0 } else { 0.0 };
                            *o += g0 * (p - y);
                        }
                    }
                }
            }
            Op::SoftCe {
                logits,
                target,
                probs,
            } => {
                let n = self.nodes[logits.0].value.cols();
                let g0 = g[0];
                if let Some(gl) = self.acc(*logits) {
                    for ((o, t), p) in gl.chunks_mut(n).zip(target.chunks(n)).zip(probs.chunks(n))
                    {
                        let mass: f64 = t.iter().sum();
                        for ((oj, tj), pj) in o.iter_mut().zip(t).zip(p) {
                            *oj += g0 * (mass * pj - tj);
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                let y = self.nodes[i].value.data().to_vec();
                if let Some(gx) = self.acc(*x) {
                    for ((o, gi), yi) in gx.iter_mut().zip(g).zip(&y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Relu(x) => {
                let vx = self.nodes[x.0].value.data().to_vec();
                if let Some(gx) = self.acc(*x) {
                    for ((o, gi), xi) in gx.iter_mut().zip(g).zip(&vx) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(*x) {
                    for o in gx.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.acc(*x) {
                    let s = g[0] / gx.len() as f64;
                    for o in gx.iter_mut() {
                        *o += s;
                    }
                }
            }
            Op::MeanRows(x) => {
                let (m, n) = self.nodes[x.0].value.dims2().expect("2d");
                if let Some(gx) = self.acc(*x) {
                    for r in 0..m {
                        for (o, gi) in gx[r * n..(r + 1) * n].iter_mut().zip(g) {
                            *o += gi / m as f64;
                        }
                    }
                }
            }
            Op::SegmentMean { x, segments } => {
                let n = self.nodes[x.0].value.cols();
                if let Some(gx) = self.acc(*x) {
                    for (s, &(start, len)) in segments.iter().enumerate() {
                        let gs = &g[s * n..(s + 1) * n];
                        for r in start..start + len {
                            for (o, gi) in gx[r * n..(r + 1) * n].iter_mut().zip(gs) {
                                *o += gi / len as f64;
                            }
                        }
                    }
                }
            }
            Op::NormalizeRows { x, norms } => {
                let y = self.nodes[i].value.data().to_vec();
                let n = self.nodes[i].value.cols();
                if let Some(gx) = self.acc(*x) {
                    for (r, norm) in norms.iter().enumerate() {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, gi), yi) in gx[r * n..(r + 1) * n].iter_mut().zip(gr).zip(yr) {
                            *o += (gi - yi * dot) / norm;
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let y = self.nodes[i].value.data().to_vec();
                let n = self.nodes[i].value.cols();
                if let Some(gx) = self.acc(*x) {
                    for (r, is) in inv_std.iter().enumerate() {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let mean_g = gr.iter().sum::<f64>() / n as f64;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for ((o, gi), yi) in gx[r * n..(r + 1) * n].iter_mut().zip(gr).zip(yr) {
                            *o += is * (gi - mean_g - yi * mean_gy);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let n = self.nodes[table.0].value.cols();
                if let Some(gt) = self.acc(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * n..(id + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(gp) = self.acc(*p) {
                        add_into(gp, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = self.nodes[i].value.cols();
                let mut col = 0;
                for p in parts {
                    let (m, w) = self.nodes[p.0].value.dims2().expect("2d");
                    if let Some(gp) = self.acc(*p) {
                        for r in 0..m {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + col..r * total + col + w],
                            );
                        }
                    }
                    col += w;
                }
            }
            Op::SliceRows { x, start } => {
                let n = self.nodes[x.0].value.cols();
                let start = *start;
                if let Some(gx) = self.acc(*x) {
                    add_into(&mut gx[start * n..start * n + g.len()], g);
                }
            }
            Op::SliceCols { x, start } => {
                let n = self.nodes[x.0].value.cols();
                let w = self.nodes[i].value.cols();
                let start = *start;
                if let Some(gx) = self.acc(*x) {
                    for (r, gr) in g.chunks(w).enumerate() {
                        add_into(&mut gx[r * n + start..r * n + start + w], gr);
                    }
                }
            }
            Op::ReverseRows(x) => {
                let (m, n) = self.nodes[x.0].value.dims2().expect("2d");
                if let Some(gx) = self.acc(*x) {
                    for r in 0..m {
                        let src = m - 1 - r;
                        add_into(&mut gx[src * n..(src + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(*x) {
                    add_into(gx, g);
                }
            }
            Op::ScalarFn { x, dfdx } => {
                let g0 = g[0];
                if let Some(gx) = self.acc(*x) {
                    for (o, d) in gx.iter_mut().zip(dfdx) {
                        *o += g0 * d;
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn strip_row(e: Error) -> Error {
    match e {
        Error::DegenerateVector { norm, floor, .. } => Error::DegenerateVector {
            row: None,
            norm,
            floor,
        },
        other => other,
    }
}

/// Result of [`masked_attention`]: the attended values and the weight matrix.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub out: Var,
    pub weights: Var,
}

/// Scaled dot-product attention `softmax_mask(q·kᵀ/√C) · v`.
pub fn masked_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: &Mask,
) -> Result<AttentionOutput> {
    let (_, c) = tape.value(q).dims2()?;
    let (nk, ck) = tape.value(k).dims2()?;
    let (nv, cv) = tape.value(v).dims2()?;
    if ck != c {
        return Err(shape_err("masked_attention", tape.value(q), tape.value(k)));
    }
    if nv != nk {
        return Err(shape_err("masked_attention", tape.value(k), tape.value(v)));
    }
    let _ = cv;
    let scores = tape.matmul_bt(q, k)?;
    let scaled = tape.scale(scores, 1.0 / (c as f64).sqrt());
    let weights = tape.masked_softmax(scaled, mask)?;
    let out = tape.matmul(weights, v)?;
    Ok(AttentionOutput { out, weights })
}
