//! Parameter storage, the few layers the models are built from, and the
//! optimizers that update them.

use std::ops::Index;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{masked_attention, Mask, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameter tensors, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Parameters bound as leaves on one tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl Bound {
    /// Binds parameters from existing tape variables, in registration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "parameter {name:?} registered twice"
        );
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn add_randn<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> ParamId {
        let t = Tensor::randn(shape, scale, rng);
        self.add(name, t)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    /// Replaces every tensor from `(name, tensor)` pairs. Every registered name
    /// must be present with its registered shape.
    pub fn load_from(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        for (name, slot) in self.names.iter().zip(self.tensors.iter_mut()) {
            let (_, t) = entries
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Schema(format!("missing tensor {name:?}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Schema(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(())
    }

    /// Records every parameter as a leaf. With `trainable == false` no
    /// gradient buffers will ever be allocated for them.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect();
        Bound { vars }
    }

    /// Gradients after `tape.backward`, one slot per parameter.
    pub fn grads(&self, tape: &Tape, bound: &Bound) -> Vec<Option<Tensor>> {
        bound.vars.iter().map(|&v| tape.grad(v)).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// `x·W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add_randn(
            format!("{name}.w"),
            &[fan_in, fan_out],
            1.0 / (fan_in as f64).sqrt(),
            rng,
        );
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[fan_out])));
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.w])?;
        match self.b {
            Some(b) => tape.add_row(y, p[b]),
            None => Ok(y),
        }
    }
}

/// Row-wise layer normalization with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::filled(&[dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x)?;
        let g = tape.mul_row(n, p[self.gain])?;
        tape.add_row(g, p[self.bias])
    }
}

/// Two-layer ReLU feed-forward block.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, p, x)?;
        let h = tape.relu(h);
        self.fc2.forward(tape, p, h)
    }
}

/// Multi-head attention with separate query and key/value inputs.
#[derive(Clone, Debug)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

/// Output of one attention call, with the per-head weight matrices.
pub struct Attended {
    pub out: Var,
    pub weights: Vec<Var>,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads do not divide width {dim}"
            )));
        }
        Ok(Self {
            wq: Linear::new(store, &format!("{name}.q"), dim, dim, false, rng),
            wk: Linear::new(store, &format!("{name}.k"), dim, dim, false, rng),
            wv: Linear::new(store, &format!("{name}.v"), dim, dim, false, rng),
            wo: Linear::new(store, &format!("{name}.o"), dim, dim, false, rng),
            heads,
        })
    }

    /// Projects keys and values once so several query sets can reuse them.
    pub fn project_kv(&self, tape: &mut Tape, p: &Bound, kv: Var) -> Result<(Var, Var)> {
        let k = self.wk.forward(tape, p, kv)?;
        let v = self.wv.forward(tape, p, kv)?;
        Ok((k, v))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        queries: Var,
        kv: Var,
        mask: &Mask,
    ) -> Result<Attended> {
        let (k, v) = self.project_kv(tape, p, kv)?;
        self.attend(tape, p, queries, k, v, mask)
    }

    /// Attention over already projected keys and values.
    pub fn attend(
        &self,
        tape: &mut Tape,
        p: &Bound,
        queries: Var,
        k: Var,
        v: Var,
        mask: &Mask,
    ) -> Result<Attended> {
        let q = self.wq.forward(tape, p, queries)?;
        let dim = tape.value(q).cols();
        let mut weights = Vec::with_capacity(self.heads);
        let merged = if self.heads == 1 {
            let att = masked_attention(tape, q, k, v, mask)?;
            weights.push(att.weights);
            att.out
        } else {
            let hd = dim / self.heads;
            let mut outs = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = tape.slice_cols(q, h * hd, (h + 1) * hd)?;
                let kh = tape.slice_cols(k, h * hd, (h + 1) * hd)?;
                let vh = tape.slice_cols(v, h * hd, (h + 1) * hd)?;
                let att = masked_attention(tape, qh, kh, vh, mask)?;
                weights.push(att.weights);
                outs.push(att.out);
            }
            tape.concat_cols(&outs)?
        };
        let out = self.wo.forward(tape, p, merged)?;
        Ok(Attended { out, weights })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Plain (optionally momentum) gradient descent or Adam, with an optional
/// global-norm gradient clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64, clip_norm: f64, store: &ParamStore) -> Self {
        let zeros = || store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            kind,
            lr,
            momentum,
            clip_norm,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Moment buffers, for checkpointing.
    pub fn state(&self) -> (u64, &[Vec<f64>], &[Vec<f64>]) {
        (self.step, &self.first, &self.second)
    }

    pub fn restore(&mut self, step: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Result<()> {
        if first.len() != self.first.len()
            || second.len() != self.second.len()
            || first.iter().zip(&self.first).any(|(a, b)| a.len() != b.len())
            || second.iter().zip(&self.second).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::Schema("optimizer state does not match parameters".into()));
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) {
        self.step += 1;
        let scale = if self.clip_norm > 0.0 {
            let norm = grads
                .iter()
                .flatten()
                .flat_map(|g| g.data())
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            if norm > self.clip_norm {
                self.clip_norm / norm
            } else {
                1.0
            }
        } else {
            1.0
        };
        let t = self.step as i32;
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let param = store.tensors[i].data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    let vel = &mut self.first[i];
                    for ((w, gi), v) in param.iter_mut().zip(g.data()).zip(vel.iter_mut()) {
                        let gi = gi * scale;
                        if self.momentum > 0.0 {
                            *v = self.momentum * *v + gi;
                            *w -= self.lr * *v;
                        } else {
                            *w -= self.lr * gi;
                        }
                    }
                }
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - ADAM_BETA1.powi(t);
                    let bc2 = 1.0 - ADAM_BETA2.powi(t);
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (((w, gi), mi), vi) in param
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        let gi = gi * scale;
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                        let mh = *mi / bc1;
                        let vh = *vi / bc2;
                        *w -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bound_constants_allocate_no_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "lin", 3, 2, true, &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::filled(&[2, 3], 0.5));
        let y = lin.forward(&mut tape, &p, x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad_buffers(), 0);
    }

    #[test]
    fn multi_head_attention_passes_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let att = Attention::new(&mut store, "att", 4, 2, &mut rng).unwrap();
        let q = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let kv = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let mut inputs = vec![q, kv];
        inputs.extend(store.tensors().iter().cloned());
        let err = gradcheck(
            |t, v| {
                let bound = Bound::from_vars(v[2..].to_vec());
                let mask = Mask::from_fn(3, 5, |i, j| j >= i)?;
                let out = att.forward(t, &bound, v[0], v[1], &mask)?;
                let sq = t.mul(out.out, out.out)?;
                Ok(t.sum(sq))
            },
            &inputs,
        )
        .unwrap();
        assert!(err < 1e-4, "rel error {err}");
    }

    #[test]
    fn sgd_and_adam_descend_on_a_quadratic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut store = ParamStore::new();
            let id = store.add("w", Tensor::vector(vec![3.0, -2.0]).unwrap());
            let mut opt = Optimizer::new(kind, 0.1, 0.0, 0.0, &store);
            for _ in 0..200 {
                let mut tape = Tape::new();
                let p = store.bind(&mut tape, true);
                let sq = tape.mul(p[id], p[id]).unwrap();
                let loss = tape.sum(sq);
                tape.backward(loss).unwrap();
                let g = store.grads(&tape, &p);
                opt.update(&mut store, &g);
            }
            let w = store.get(id).data();
            assert!(w.iter().all(|x| x.abs() < 0.05), "{kind:?} ended at {w:?}");
        }
    }

    #[test]
    fn load_from_requires_every_name() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::zeros(&[2]));
        store.add("b", Tensor::zeros(&[3]));
        let err = store
            .load_from(&[("a".to_string(), Tensor::filled(&[2], 1.0))])
            .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }
}
