//! Action–phrase alignment: cosine cost matrices, Soft-DTW with its analytic
//! gradient, the exact hard-DTW reference, the reversed-order hinge, and the
//! normalized path cost used as a representation diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Largest cost matrix (in cells) the hard DP accepts.
pub const HARD_DP_MAX_CELLS: usize = 1_000_000;
/// Largest side length for which monotone paths are enumerated exhaustively.
pub const ENUMERATION_MAX_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtwConfig {
    /// Margin of the order hinge.
    pub beta: f64,
    /// Weight of the order hinge inside the batch objective.
    pub gamma_weight: f64,
    /// Soft-min smoothing temperature.
    pub gamma_smooth: f64,
    /// Divide each alignment value by `K + M` before use.
    #[serde(default)]
    pub normalize: bool,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            gamma_weight: 0.5,
            gamma_smooth: 0.1,
            normalize: false,
        }
    }
}

/// Soft-DTW value and gradient together with the hard optimal path.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    pub soft_value: f64,
    /// ∂ soft_value / ∂ C, i.e. the expected path occupancy.
    pub grad: Tensor,
    pub path: Vec<(usize, usize)>,
}

impl AlignmentResult {
    pub fn path_len(&self) -> usize {
        self.path.len()
    }
}

/// Exact minimum-cost monotone alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct HardDtw {
    pub cost: f64,
    pub path: Vec<(usize, usize)>,
    /// Minimum found by exhaustive path enumeration, for small matrices.
    pub enumerated: Option<f64>,
}

/// `C[i][j] = 1 - cos(s_i, v_j)` for `s: K×C`, `v: M×C`.
pub fn cost_matrix(tape: &mut Tape, s: Var, v: Var) -> Result<Var> {
    let (_, cs) = tape.value(s).dims2()?;
    let (_, cv) = tape.value(v).dims2()?;
    if cs != cv {
        return Err(Error::Dimension {
            op: "cost_matrix",
            lhs: tape.value(s).shape().to_vec(),
            rhs: tape.value(v).shape().to_vec(),
        });
    }
    let sn = tape.normalize_rows(s)?;
    let vn = tape.normalize_rows(v)?;
    let sim = tape.matmul_bt(sn, vn)?;
    let neg = tape.scale(sim, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

fn check_finite(cost: &Tensor) -> Result<(usize, usize)> {
    let dims = cost.dims2()?;
    if let Some(i) = cost.data().iter().position(|x| !x.is_finite()) {
        return Err(Error::NumericDomain(format!(
            "cost entry ({}, {}) is {}",
            i / dims.1,
            i % dims.1,
            cost.data()[i]
        )));
    }
    Ok(dims)
}

fn softmin3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let m = a.min(b).min(c);
    if m == f64::INFINITY {
        return m;
    }
    let s: f64 = [a, b, c]
        .iter()
        .filter(|x| x.is_finite())
        .map(|x| (-(x - m) / gamma).exp())
        .sum();
    m - gamma * s.ln()
}

/// Soft-DTW value and gradient of a `K×M` cost matrix.
///
/// The gradient comes from the backward occupancy recursion rather than from
/// differentiating the forward DP node by node.
pub fn soft_dtw(cost: &Tensor, gamma: f64) -> Result<AlignmentResult> {
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("soft-DTW smoothing must be > 0, got {gamma}")));
    }
    let (k, m) = check_finite(cost)?;
    let w = m + 2;
    let at = |i: usize, j: usize| i * w + j;

    let mut r = vec![f64::INFINITY; (k + 2) * w];
    r[at(0, 0)] = 0.0;
    for i in 1..=k {
        for j in 1..=m {
            r[at(i, j)] = cost.at(i - 1, j - 1)
                + softmin3(r[at(i - 1, j - 1)], r[at(i - 1, j)], r[at(i, j - 1)], gamma);
        }
    }
    let value = r[at(k, m)];

    let mut d = vec![0.0; (k + 2) * w];
    for i in 1..=k {
        for j in 1..=m {
            d[at(i, j)] = cost.at(i - 1, j - 1);
        }
    }
    for i in 1..=k {
        r[at(i, m + 1)] = f64::NEG_INFINITY;
    }
    for j in 1..=m {
        r[at(k + 1, j)] = f64::NEG_INFINITY;
    }
    r[at(k + 1, m + 1)] = value;

    let mut e = vec![0.0; (k + 2) * w];
    e[at(k + 1, m + 1)] = 1.0;
    for j in (1..=m).rev() {
        for i in (1..=k).rev() {
            let rij = r[at(i, j)];
            let a = ((r[at(i + 1, j)] - rij - d[at(i + 1, j)]) / gamma).exp();
            let b = ((r[at(i, j + 1)] - rij - d[at(i, j + 1)]) / gamma).exp();
            let c = ((r[at(i + 1, j + 1)] - rij - d[at(i + 1, j + 1)]) / gamma).exp();
            e[at(i, j)] = e[at(i + 1, j)] * a + e[at(i, j + 1)] * b + e[at(i + 1, j + 1)] * c;
        }
    }
    let mut grad = Vec::with_capacity(k * m);
    for i in 1..=k {
        for j in 1..=m {
            grad.push(e[at(i, j)]);
        }
    }
    let hard = hard_dp(cost)?;
    Ok(AlignmentResult {
        soft_value: value,
        grad: Tensor::new(&[k, m], grad)?,
        path: hard.1,
    })
}

/// Soft-DTW of a cost matrix living on the tape, as a differentiable scalar.
pub fn soft_dtw_on_tape(tape: &mut Tape, cost: Var, gamma: f64) -> Result<Var> {
    let res = soft_dtw(tape.value(cost), gamma)?;
    tape.scalar_fn(cost, res.soft_value, res.grad)
}

/// Exact DP minimum and its path. Ties prefer the diagonal, then the step
/// down, then the step right.
fn hard_dp(cost: &Tensor) -> Result<(f64, Vec<(usize, usize)>)> {
    let (k, m) = check_finite(cost)?;
    if k * m > HARD_DP_MAX_CELLS {
        return Err(Error::Resource(format!(
            "hard DTW on {k}×{m} exceeds {HARD_DP_MAX_CELLS} cells"
        )));
    }
    let mut acc = vec![f64::INFINITY; k * m];
    for i in 0..k {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = cost.at(i, j) + best;
        }
    }
    let mut path = vec![(k - 1, m - 1)];
    let (mut i, mut j) = (k - 1, m - 1);
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
        let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok((acc[k * m - 1], path))
}

/// Minimum over every monotone path by depth-first enumeration. Returns the
/// minimum, one minimizing path, and the number of paths visited.
pub fn enumerate_paths(cost: &Tensor) -> Result<(f64, Vec<(usize, usize)>, u64)> {
    let (k, m) = check_finite(cost)?;
    if k > ENUMERATION_MAX_SIDE || m > ENUMERATION_MAX_SIDE {
        return Err(Error::Resource(format!(
            "path enumeration limited to {ENUMERATION_MAX_SIDE}×{ENUMERATION_MAX_SIDE}, got {k}×{m}"
        )));
    }
    struct Search<'a> {
        cost: &'a Tensor,
        k: usize,
        m: usize,
        best: f64,
        best_path: Vec<(usize, usize)>,
        stack: Vec<(usize, usize)>,
        count: u64,
    }
    impl Search<'_> {
        fn go(&mut self, i: usize, j: usize, acc: f64) {
            let acc = acc + self.cost.at(i, j);
            self.stack.push((i, j));
            if (i, j) == (self.k - 1, self.m - 1) {
                self.count += 1;
                if acc < self.best {
                    self.best = acc;
                    self.best_path = self.stack.clone();
                }
            } else {
                if i + 1 < self.k && j + 1 < self.m {
                    self.go(i + 1, j + 1, acc);
                }
                if i + 1 < self.k {
                    self.go(i + 1, j, acc);
                }
                if j + 1 < self.m {
                    self.go(i, j + 1, acc);
                }
            }
            self.stack.pop();
        }
    }
    let mut s = Search {
        cost,
        k,
        m,
        best: f64::INFINITY,
        best_path: Vec::new(),
        stack: Vec::new(),
        count: 0,
    };
    s.go(0, 0, 0.0);
    Ok((s.best, s.best_path, s.count))
}

/// Exact hard-DTW minimum by DP, cross-checked by enumeration when small.
pub fn hard_dtw_oracle(cost: &Tensor) -> Result<HardDtw> {
    let (k, m) = cost.dims2()?;
    let (best, path) = hard_dp(cost)?;
    let enumerated = if k <= ENUMERATION_MAX_SIDE && m <= ENUMERATION_MAX_SIDE {
        Some(enumerate_paths(cost)?.0)
    } else {
        None
    };
    Ok(HardDtw {
        cost: best,
        path,
        enumerated,
    })
}

/// Alignment loss `Soft-DTW(C(s, v))`, optionally divided by `K + M`.
pub fn alignment_loss(tape: &mut Tape, s: Var, v: Var, cfg: &DtwConfig) -> Result<Var> {
    let c = cost_matrix(tape, s, v)?;
    let value = soft_dtw_on_tape(tape, c, cfg.gamma_smooth)?;
    if cfg.normalize {
        let (k, m) = tape.value(c).dims2()?;
        Ok(tape.scale(value, 1.0 / (k + m) as f64))
    } else {
        Ok(value)
    }
}

/// Alignment and order terms for one sequence pair.
#[derive(Clone, Copy, Debug)]
pub struct OrderTerms {
    pub align: Var,
    pub reversed: Var,
    pub order: Var,
}

/// `max(0, align(S, V) − align(reverse(S), V) + β)`.
pub fn order_loss(tape: &mut Tape, s: Var, v: Var, cfg: &DtwConfig) -> Result<OrderTerms> {
    if !(cfg.beta >= 0.0) {
        return Err(Error::Config(format!("order margin must be ≥ 0, got {}", cfg.beta)));
    }
    let align = alignment_loss(tape, s, v, cfg)?;
    let s_rev = tape.reverse_rows(s)?;
    let reversed = alignment_loss(tape, s_rev, v, cfg)?;
    let diff = tape.sub(align, reversed)?;
    let shifted = tape.add_scalar(diff, cfg.beta);
    let order = tape.relu(shifted);
    Ok(OrderTerms {
        align,
        reversed,
        order,
    })
}

/// Batch objective `(1/B) Σ (align_i + γ_weight · order_i)`, summed in item order.
pub fn dtw_objective(tape: &mut Tape, items: &[(Var, Var)], cfg: &DtwConfig) -> Result<Var> {
    if items.is_empty() {
        return Err(Error::Config("DTW objective needs a non-empty batch".into()));
    }
    let mut total: Option<Var> = None;
    for &(s, v) in items {
        let t = order_loss(tape, s, v, cfg)?;
        let weighted = tape.scale(t.order, cfg.gamma_weight);
        let item = tape.add(t.align, weighted)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, item)?,
            None => item,
        });
    }
    let total = total.expect("non-empty");
    Ok(tape.scale(total, 1.0 / items.len() as f64))
}

/// Mean of `1 − S_ij` along the hard-DTW path of the cost `1 − S`.
pub fn normalized_dtw_cost(similarity: &Tensor) -> Result<f64> {
    let (k, m) = similarity.dims2()?;
    let cost = Tensor::new(&[k, m], similarity.data().iter().map(|s| 1.0 - s).collect())?;
    let (_, path) = hard_dp(&cost)?;
    let total: f64 = path.iter().map(|&(i, j)| cost.at(i, j)).sum();
    Ok(total / path.len() as f64)
}

/// Cosine similarity matrix between the rows of two plain tensors.
pub fn cosine_similarity_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let va = tape.constant(a.clone());
    let vb = tape.constant(b.clone());
    let c = cost_matrix(&mut tape, va, vb)?;
    let cost = tape.value(c);
    Tensor::new(cost.shape(), cost.data().iter().map(|x| 1.0 - x).collect())
}
