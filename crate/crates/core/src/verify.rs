//! Finite-difference gradient suite and the DTW oracle comparison used by the
//! `gradcheck` and `oracle` subcommands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::align::{cost_matrix, dtw_objective, hard_dtw_oracle, soft_dtw, soft_dtw_on_tape, DtwConfig};
use crate::error::{Error, Result};
use crate::mam::{mam_loss, Decoder, DecoderConfig, MASK};
use crate::nn::{Attention, Bound, ParamStore};
use crate::perceiver::distill_loss;
use crate::tensor::{gradcheck, Mask, Tape, Tensor, Var};
use crate::trainer::{vtc_loss, HnTags};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradReport {
    pub op: &'static str,
    pub seeds: u64,
    pub max_rel_err: f64,
}

pub const GRADCHECK_OPS: [&str; 8] = [
    "softmax",
    "attention",
    "cosine_cost",
    "soft_dtw",
    "dtw_objective",
    "distill_loss",
    "decoder",
    "vtc_loss",
];

fn weighted_sum(t: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let shape = t.value(x).shape().to_vec();
    let w = t.constant(Tensor::randn(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed)));
    let y = t.mul(x, w)?;
    Ok(t.sum(y))
}

fn check_once(op: &str, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match op {
        "softmax" => {
            let x = Tensor::randn(&[3, 6], 2.0, &mut rng);
            gradcheck(
                |t, v| {
                    let s = t.softmax(v[0], 1)?;
                    weighted_sum(t, s, seed)
                },
                &[x],
            )
        }
        "attention" => {
            let mut store = ParamStore::new();
            let att = Attention::new(&mut store, "a", 4, 2, &mut rng)?;
            let q = Tensor::randn(&[3, 4], 1.0, &mut rng);
            let kv = Tensor::randn(&[5, 4], 1.0, &mut rng);
            let mask = Mask::from_fn(3, 5, |i, j| j.abs_diff(2 * i) <= 1)?;
            let mut inputs = vec![q, kv];
            inputs.extend(store.tensors().iter().cloned());
            gradcheck(
                |t, v| {
                    let p = Bound::from_vars(v[2..].to_vec());
                    let a = att.forward(t, &p, v[0], v[1], &mask)?;
                    weighted_sum(t, a.out, seed)
                },
                &inputs,
            )
        }
        "cosine_cost" => {
            let s = Tensor::randn(&[4, 5], 1.0, &mut rng);
            let v = Tensor::randn(&[3, 5], 1.0, &mut rng);
            gradcheck(
                |t, x| {
                    let c = cost_matrix(t, x[0], x[1])?;
                    weighted_sum(t, c, seed)
                },
                &[s, v],
            )
        }
        "soft_dtw" => {
            let (k, m) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let data = (0..k * m).map(|_| rng.random_range(0.0..2.0)).collect();
            let c = Tensor::new(&[k, m], data)?;
            let gamma = [0.05, 0.1, 1.0][seed as usize % 3];
            gradcheck(|t, v| soft_dtw_on_tape(t, v[0], gamma), &[c])
        }
        "dtw_objective" => {
            let cfg = DtwConfig { beta: 2.0, ..DtwConfig::default() };
            let inputs = vec![
                Tensor::randn(&[4, 5], 1.0, &mut rng),
                Tensor::randn(&[3, 5], 1.0, &mut rng),
                Tensor::randn(&[5, 5], 1.0, &mut rng),
                Tensor::randn(&[2, 5], 1.0, &mut rng),
            ];
            gradcheck(|t, v| dtw_objective(t, &[(v[0], v[1]), (v[2], v[3])], &cfg), &inputs)
        }
        "distill_loss" => {
            let s = Tensor::randn(&[4, 4], 1.0, &mut rng);
            let sp = Tensor::randn(&[4, 4], 1.0, &mut rng);
            gradcheck(|t, v| distill_loss(t, v[0], &sp, 0.4), &[s])
        }
        "decoder" => {
            let mut store = ParamStore::new();
            let cfg = DecoderConfig { dim: 8, layers: 2, heads: 2, max_len: 8, mlp_hidden: 12 };
            let d = Decoder::new(&mut store, cfg, 7, &mut rng)?;
            let s = Tensor::randn(&[2, 8], 1.0, &mut rng);
            let mut inputs = vec![s];
            inputs.extend(store.tensors().iter().cloned());
            gradcheck(
                |t, v| {
                    let p = Bound::from_vars(v[1..].to_vec());
                    let logits = d.forward(t, &p, &[1, MASK, 5, 6], v[0])?;
                    mam_loss(t, logits, &[1, 4, 5, 6])
                },
                &inputs,
            )
        }
        "vtc_loss" => {
            let video = Tensor::randn(&[3, 4], 1.0, &mut rng);
            let text = Tensor::randn(&[3, 4], 1.0, &mut rng);
            let negs = Tensor::randn(&[2, 4], 1.0, &mut rng);
            let tags = HnTags { sources: vec![0, 2] };
            gradcheck(|t, v| vtc_loss(t, v[0], v[1], Some((v[2], &tags)), 0.5), &[video, text, negs])
        }
        other => Err(Error::Precondition(format!("unknown gradcheck op {other:?}"))),
    }
}

/// Worst relative error of each differentiable op over `seeds` random draws.
pub fn gradcheck_suite(seeds: u64) -> Result<Vec<GradReport>> {
    if seeds == 0 {
        return Err(Error::Config("gradcheck needs at least one seed".into()));
    }
    GRADCHECK_OPS
        .iter()
        .map(|&op| {
            let mut worst: f64 = 0.0;
            for seed in 0..seeds {
                worst = worst.max(check_once(op, seed)?);
            }
            Ok(GradReport { op, seeds, max_rel_err: worst })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub gamma: f64,
    pub soft: f64,
    pub hard: f64,
    pub enumerated: Option<f64>,
    pub path: Vec<(usize, usize)>,
}

impl OracleReport {
    pub fn gap(&self) -> f64 {
        (self.soft - self.hard).abs()
    }
}

/// Soft-DTW against the exact DP (and enumeration when small) on a random
/// `rows×cols` cost drawn from `[0, 2)`.
pub fn dtw_oracle(rows: usize, cols: usize, seed: u64, gamma: f64) -> Result<OracleReport> {
    if rows == 0 || cols == 0 {
        return Err(Error::Precondition(format!("cost matrix {rows}x{cols} is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(0.0..2.0)).collect();
    let cost = Tensor::new(&[rows, cols], data)?;
    let soft = soft_dtw(&cost, gamma)?;
    let hard = hard_dtw_oracle(&cost)?;
    Ok(OracleReport {
        rows,
        cols,
        seed,
        gamma,
        soft: soft.soft_value,
        hard: hard.cost,
        enumerated: hard.enumerated,
        path: hard.path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_two_seeds() {
        for r in gradcheck_suite(2).unwrap() {
            assert!(r.max_rel_err < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn oracle_agrees_at_small_gamma() {
        let r = dtw_oracle(5, 4, 3, 1e-3).unwrap();
        assert!(r.gap() < 0.01, "{r:?}");
        assert_eq!(r.enumerated, Some(r.hard));
        assert!(dtw_oracle(0, 4, 3, 1e-3).is_err());
    }
}
