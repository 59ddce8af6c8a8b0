//! Latent resampler from `T×N×C` frame features to `K` action tokens with
//! temporally windowed cross-attention, the phrase-query teacher pass, and the
//! score-distillation loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Attention, Bound, LayerNorm, Mlp, ParamId, ParamStore};
use crate::tensor::{Mask, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceiverConfig {
    pub frames: usize,
    pub patches: usize,
    pub dim: usize,
    pub latents: usize,
    /// Window half-width in frames; `ceil(T / K)` when absent.
    pub window: Option<usize>,
    pub heads: usize,
    pub depth: usize,
    pub mlp_hidden: usize,
    /// Residual self-attention among the queries after each cross-attention.
    pub latent_self_attn: bool,
}

impl Default for PerceiverConfig {
    fn default() -> Self {
        Self {
            frames: 16,
            patches: 4,
            dim: 32,
            latents: 8,
            window: None,
            heads: 1,
            depth: 1,
            mlp_hidden: 64,
            latent_self_attn: true,
        }
    }
}

#[derive(Clone, Debug)]
struct Layer {
    attn: Attention,
    latent: Option<(LayerNorm, Attention)>,
    ln: LayerNorm,
    mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct Perceiver {
    cfg: PerceiverConfig,
    latents: ParamId,
    temporal: ParamId,
    layers: Vec<Layer>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenSource {
    Student,
    Teacher,
}

/// Token matrix plus the attention weights of every layer and head.
pub struct ActionTokens {
    pub tokens: Var,
    pub source: TokenSource,
    pub weights: Vec<Var>,
}

impl Perceiver {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: PerceiverConfig, rng: &mut R) -> Result<Self> {
        if cfg.latents == 0 || cfg.frames == 0 || cfg.patches == 0 || cfg.depth == 0 {
            return Err(Error::Config(
                "latents, frames, patches and depth must be positive".into(),
            ));
        }
        let c = cfg.dim;
        let scale = 1.0 / (c as f64).sqrt();
        let latents = store.add_randn("perceiver.latents", &[cfg.latents, c], 1.0, rng);
        let temporal = store.add_randn("perceiver.temporal", &[cfg.frames, c], scale, rng);
        let layers = (0..cfg.depth)
            .map(|l| {
                Ok(Layer {
                    attn: Attention::new(store, &format!("perceiver.l{l}.attn"), c, cfg.heads, rng)?,
                    latent: if cfg.latent_self_attn {
                        Some((
                            LayerNorm::new(store, &format!("perceiver.l{l}.ln_self"), c),
                            Attention::new(store, &format!("perceiver.l{l}.self"), c, cfg.heads, rng)?,
                        ))
                    } else {
                        None
                    },
                    ln: LayerNorm::new(store, &format!("perceiver.l{l}.ln"), c),
                    mlp: Mlp::new(store, &format!("perceiver.l{l}.mlp"), c, cfg.mlp_hidden, rng),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            latents,
            temporal,
            layers,
        })
    }

    pub fn config(&self) -> &PerceiverConfig {
        &self.cfg
    }

    pub fn latents_param(&self) -> ParamId {
        self.latents
    }

    pub fn window(&self) -> usize {
        self.cfg
            .window
            .unwrap_or_else(|| self.cfg.frames.div_ceil(self.cfg.latents))
    }

    /// Window centre of each latent, in frames.
    pub fn centers(&self) -> Vec<f64> {
        let (t, k) = (self.cfg.frames, self.cfg.latents);
        if k == 1 {
            return vec![(t - 1) as f64 / 2.0];
        }
        (0..k)
            .map(|i| ((i * (t - 1)) as f64 / (k - 1) as f64).round())
            .collect()
    }

    fn frame_mask(&self, centers: &[f64], w: f64) -> Result<Mask> {
        let n = self.cfg.patches;
        Mask::from_fn(centers.len(), self.cfg.frames * n, |i, j| {
            ((j / n) as f64 - centers[i]).abs() <= w
        })
    }

    /// Latent `i` may attend to the patches of frames within `w` of its centre.
    pub fn student_mask(&self) -> Result<Mask> {
        self.frame_mask(&self.centers(), self.window() as f64)
    }

    /// Query `j` is windowed around the midpoint of segment `j`; unmasked when
    /// segments are unknown.
    pub fn teacher_mask(&self, queries: usize, segments: Option<&[(usize, usize)]>) -> Result<Mask> {
        match segments {
            None => Ok(Mask::all(queries, self.cfg.frames * self.cfg.patches)),
            Some(segs) => {
                if segs.len() != queries {
                    return Err(Error::Dimension {
                        op: "teacher_mask",
                        lhs: vec![queries],
                        rhs: vec![segs.len()],
                    });
                }
                let mids: Vec<f64> = segs.iter().map(|&(s, e)| ((s + e - 1) / 2) as f64).collect();
                self.frame_mask(&mids, self.window() as f64)
            }
        }
    }

    /// Flattens `T×N×C` (or `(T·N)×C`) frames and adds the temporal table.
    pub fn keys(&self, tape: &mut Tape, p: &Bound, frames: Var) -> Result<Var> {
        let (t, n, c) = (self.cfg.frames, self.cfg.patches, self.cfg.dim);
        let shape = tape.value(frames).shape().to_vec();
        let flat = match shape.as_slice() {
            [a, b, d] if (*a, *b, *d) == (t, n, c) => tape.reshape(frames, &[t * n, c])?,
            [a, d] if (*a, *d) == (t * n, c) => frames,
            _ => {
                return Err(Error::Dimension {
                    op: "perceiver input",
                    lhs: shape,
                    rhs: vec![t, n, c],
                })
            }
        };
        let te = tape.repeat_rows(p[self.temporal], n)?;
        tape.add(flat, te)
    }

    /// Cross-attention stack over precomputed keys.
    pub fn attend(&self, tape: &mut Tape, p: &Bound, queries: Var, keys: Var, mask: &Mask) -> Result<(Var, Vec<Var>)> {
        let qc = tape.value(queries).cols();
        if qc != self.cfg.dim {
            return Err(Error::Dimension {
                op: "perceiver queries",
                lhs: tape.value(queries).shape().to_vec(),
                rhs: vec![mask.rows(), self.cfg.dim],
            });
        }
        let mut x = queries;
        let mut weights = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let att = layer.attn.forward(tape, p, x, keys, mask)?;
            weights.extend(att.weights);
            let mut h = if l == 0 { att.out } else { tape.add(x, att.out)? };
            if let Some((ln, sa)) = &layer.latent {
                let n = ln.forward(tape, p, h)?;
                let rows = tape.value(n).rows();
                let a = sa.forward(tape, p, n, n, &Mask::all(rows, rows))?;
                h = tape.add(h, a.out)?;
            }
            let n = layer.ln.forward(tape, p, h)?;
            let f = layer.mlp.forward(tape, p, n)?;
            x = tape.add(h, f)?;
        }
        Ok((x, weights))
    }

    pub fn student_forward(&self, tape: &mut Tape, p: &Bound, frames: Var) -> Result<ActionTokens> {
        let keys = self.keys(tape, p, frames)?;
        self.student_from_keys(tape, p, keys)
    }

    pub fn student_from_keys(&self, tape: &mut Tape, p: &Bound, keys: Var) -> Result<ActionTokens> {
        let mask = self.student_mask()?;
        let (tokens, weights) = self.attend(tape, p, p[self.latents], keys, &mask)?;
        Ok(ActionTokens {
            tokens,
            source: TokenSource::Student,
            weights,
        })
    }

    /// Same weights with phrase embeddings as queries. The result stays on the
    /// graph; callers that use it as a target read its value.
    pub fn teacher_forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        frames: Var,
        phrases: Var,
        segments: Option<&[(usize, usize)]>,
    ) -> Result<ActionTokens> {
        let keys = self.keys(tape, p, frames)?;
        self.teacher_from_keys(tape, p, keys, phrases, segments)
    }

    pub fn teacher_from_keys(
        &self,
        tape: &mut Tape,
        p: &Bound,
        keys: Var,
        phrases: Var,
        segments: Option<&[(usize, usize)]>,
    ) -> Result<ActionTokens> {
        let m = tape.value(phrases).rows();
        let mask = self.teacher_mask(m, segments)?;
        let (tokens, weights) = self.attend(tape, p, phrases, keys, &mask)?;
        Ok(ActionTokens {
            tokens,
            source: TokenSource::Teacher,
            weights,
        })
    }
}

/// Cosine similarities between rows of `video` (`B×C`) and `text` (`n×C`),
/// divided by the temperature.
pub fn similarity_scores(tape: &mut Tape, video: Var, text: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    let v = tape.normalize_rows(video)?;
    let t = tape.normalize_rows(text)?;
    let s = tape.matmul_bt(v, t)?;
    Ok(tape.scale(s, 1.0 / temperature))
}

/// Mean-pools the tokens and scores them against every text row: `1×n`.
pub fn scores_from_tokens(tape: &mut Tape, tokens: Var, text: Var, temperature: f64) -> Result<Var> {
    let pooled = tape.mean_rows(tokens)?;
    similarity_scores(tape, pooled, text, temperature)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

fn softmax_row(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Mean over rows of `−(1−α) Σ y log σ(s) − α Σ σ(s′) log σ(s)`, where row `r`
/// has its positive at `labels[r]`. Teacher scores enter as constants.
pub fn distill_single(tape: &mut Tape, s: Var, s_prime: &Tensor, labels: &[usize], alpha: f64) -> Result<Var> {
    check_alpha(alpha)?;
    let (rows, cols) = tape.value(s).dims2()?;
    if s_prime.shape() != [rows, cols] || labels.len() != rows {
        return Err(Error::Dimension {
            op: "distill",
            lhs: vec![rows, cols],
            rhs: s_prime.shape().to_vec(),
        });
    }
    let mut target = Vec::with_capacity(rows * cols);
    for (r, &y) in labels.iter().enumerate() {
        if y >= cols {
            return Err(Error::Precondition(format!("label {y} out of range for {cols} scores")));
        }
        let soft = softmax_row(s_prime.row(r));
        for (c, q) in soft.into_iter().enumerate() {
            let hard = if c == y { 1.0 } else { 0.0 };
            target.push((1.0 - alpha) * hard + alpha * q);
        }
    }
    let target = Tensor::new(&[rows, cols], target)?;
    let total = tape.soft_cross_entropy(s, &target)?;
    Ok(tape.scale(total, 1.0 / rows as f64))
}

/// Both retrieval directions summed. `s_v2t` is video-by-text; the text-to-video
/// scores are its transpose. The positive of row `i` is column `i`.
pub fn distill_loss(tape: &mut Tape, s_v2t: Var, s_prime_v2t: &Tensor, alpha: f64) -> Result<Var> {
    let (b, b2) = tape.value(s_v2t).dims2()?;
    if b != b2 {
        return Err(Error::Dimension {
            op: "distill_loss",
            lhs: vec![b, b2],
            rhs: vec![b, b],
        });
    }
    let labels: Vec<usize> = (0..b).collect();
    let v2t = distill_single(tape, s_v2t, s_prime_v2t, &labels, alpha)?;
    let st = tape.transpose(s_v2t)?;
    let mut pt = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            pt[j * b + i] = s_prime_v2t.at(i, j);
        }
    }
    let t2v = distill_single(tape, st, &Tensor::new(&[b, b], pt)?, &labels, alpha)?;
    tape.add(v2t, t2v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(cfg: PerceiverConfig, seed: u64) -> (ParamStore, Perceiver) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = Perceiver::new(&mut store, cfg, &mut rng).unwrap();
        (store, p)
    }

    fn frames(cfg: &PerceiverConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(&[cfg.frames, cfg.patches, cfg.dim], 1.0, &mut rng)
    }

    #[test]
    fn output_shapes() {
        let cfg = PerceiverConfig { frames: 8, patches: 4, dim: 16, latents: 6, ..Default::default() };
        let (store, per) = build(cfg.clone(), 0);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let v = tape.constant(frames(&cfg, 1));
        let s = per.student_forward(&mut tape, &p, v).unwrap();
        assert_eq!(tape.value(s.tokens).shape(), &[6, 16]);

        let cfg = PerceiverConfig { frames: 16, dim: 16, ..Default::default() };
        let (store, per) = build(cfg.clone(), 0);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let v = tape.constant(frames(&cfg, 1));
        let ph = tape.constant(Tensor::filled(&[3, 16], 0.3));
        let t = per.teacher_forward(&mut tape, &p, v, ph, Some(&[(0, 5), (5, 10), (10, 16)])).unwrap();
        assert_eq!(tape.value(t.tokens).shape(), &[3, 16]);
        assert_eq!(t.source, TokenSource::Teacher);
    }

    #[test]
    fn wrong_input_shape_is_a_dimension_error() {
        let cfg = PerceiverConfig::default();
        let (store, per) = build(cfg, 0);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let v = tape.constant(Tensor::zeros(&[15, 4, 32]));
        assert!(matches!(per.student_forward(&mut tape, &p, v), Err(Error::Dimension { .. })));
    }

    #[test]
    fn window_mass_outside_is_exactly_zero() {
        for (t, k, w) in [(16, 8, None), (16, 4, Some(0)), (8, 3, Some(1)), (12, 1, Some(2)), (10, 10, Some(3))] {
            let cfg = PerceiverConfig { frames: t, latents: k, window: w, dim: 8, heads: 2, depth: 2, ..Default::default() };
            let (store, per) = build(cfg.clone(), t as u64);
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, false);
            let v = tape.constant(frames(&cfg, 3));
            let s = per.student_forward(&mut tape, &p, v).unwrap();
            let centers = per.centers();
            let win = per.window() as f64;
            for wv in &s.weights {
                let wt = tape.value(*wv);
                for i in 0..k {
                    for j in 0..t * cfg.patches {
                        let frame = (j / cfg.patches) as f64;
                        if (frame - centers[i]).abs() > win {
                            assert_eq!(wt.at(i, j), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zero_window_sees_only_the_centre_frame() {
        let cfg = PerceiverConfig { frames: 9, latents: 3, window: Some(0), dim: 8, ..Default::default() };
        let (store, per) = build(cfg.clone(), 1);
        assert_eq!(per.centers(), vec![0.0, 4.0, 8.0]);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let v = tape.constant(frames(&cfg, 2));
        let s = per.student_forward(&mut tape, &p, v).unwrap();
        let wt = tape.value(s.weights[0]);
        for (i, c) in [0usize, 4, 8].into_iter().enumerate() {
            for j in 0..9 * 4 {
                assert_eq!(wt.at(i, j) != 0.0, j / 4 == c, "latent {i} key {j}");
            }
        }
    }

    #[test]
    fn single_wide_latent_matches_unmasked_attention() {
        let cfg = PerceiverConfig { frames: 6, latents: 1, window: Some(6), dim: 8, ..Default::default() };
        let (store, per) = build(cfg.clone(), 4);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let v = tape.constant(frames(&cfg, 5));
        let s = per.student_forward(&mut tape, &p, v).unwrap();
        let keys = per.keys(&mut tape, &p, v).unwrap();
        let (out, _) = per.attend(&mut tape, &p, p[per.latents], keys, &Mask::all(1, 24)).unwrap();
        assert_eq!(tape.value(s.tokens), tape.value(out));
    }

    #[test]
    fn teacher_equals_student_for_identical_queries() {
        let cfg = PerceiverConfig { frames: 6, latents: 1, window: Some(6), dim: 8, ..Default::default() };
        let (store, per) = build(cfg.clone(), 6);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let v = tape.constant(frames(&cfg, 7));
        let s = per.student_forward(&mut tape, &p, v).unwrap();
        let l = tape.constant(store.get(per.latents_param()).clone());
        let t = per.teacher_forward(&mut tape, &p, v, l, None).unwrap();
        assert_eq!(tape.value(s.tokens), tape.value(t.tokens));
    }

    #[test]
    fn permuting_patches_within_a_frame_changes_nothing() {
        let cfg = PerceiverConfig { frames: 5, patches: 3, latents: 2, dim: 8, heads: 2, ..Default::default() };
        let (store, per) = build(cfg.clone(), 8);
        let f = frames(&cfg, 9);
        let mut g = f.clone();
        let c = cfg.dim;
        for t in 0..cfg.frames {
            // rotate patches of frame t by one
            for pch in 0..cfg.patches {
                let src = (pch + 1) % cfg.patches;
                let from = (t * cfg.patches + src) * c;
                let to = (t * cfg.patches + pch) * c;
                g.data_mut()[to..to + c].copy_from_slice(&f.data()[from..from + c]);
            }
        }
        let run = |x: Tensor| {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, false);
            let v = tape.constant(x);
            let s = per.student_forward(&mut tape, &p, v).unwrap();
            tape.value(s.tokens).clone()
        };
        assert!(run(f).max_abs_diff(&run(g)) < 1e-12);
    }

    fn path_gradcheck(teacher: bool) {
        let cfg = PerceiverConfig { frames: 4, patches: 2, latents: 2, dim: 4, heads: 2, depth: 2, mlp_hidden: 6, ..Default::default() };
        for seed in 0..3 {
            let (store, per) = build(cfg.clone(), seed);
            let mut inputs = vec![frames(&cfg, seed + 10), Tensor::randn(&[2, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))];
            inputs.extend(store.tensors().iter().cloned());
            let err = gradcheck(
                |t, v| {
                    let p = Bound::from_vars(v[2..].to_vec());
                    let out = if teacher {
                        per.teacher_forward(t, &p, v[0], v[1], Some(&[(0, 2), (2, 4)]))?.tokens
                    } else {
                        per.student_forward(t, &p, v[0])?.tokens
                    };
                    let sq = t.tanh(out);
                    let w = t.constant(Tensor::randn(&[2, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(99)));
                    let prod = t.mul(sq, w)?;
                    Ok(t.sum(prod))
                },
                &inputs,
            )
            .unwrap();
            assert!(err < 1e-4, "teacher={teacher} seed {seed}: {err}");
        }
    }

    #[test]
    fn student_path_gradcheck() {
        path_gradcheck(false);
    }

    #[test]
    fn teacher_path_gradcheck() {
        path_gradcheck(true);
    }

    #[test]
    fn score_examples() {
        let mut tape = Tape::new();
        let tok = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap());
        let text = tape.constant(Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap());
        let s1 = scores_from_tokens(&mut tape, tok, text, 1.0).unwrap();
        assert_eq!(tape.value(s1).data(), &[1.0, 0.0]);
        let s2 = scores_from_tokens(&mut tape, tok, text, 2.0).unwrap();
        assert_eq!(tape.value(s2).data(), &[0.5, 0.0]);
        assert!(matches!(scores_from_tokens(&mut tape, tok, text, 0.0), Err(Error::Config(_))));
    }

    fn scalar_distill(s: &[f64], sp: &[f64], y: usize, alpha: f64) -> f64 {
        let ls: Vec<f64> = {
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
            s.iter().map(|v| v - m - z.ln()).collect()
        };
        let zp: f64 = sp.iter().map(|v| v.exp()).sum();
        let mut l = -(1.0 - alpha) * ls[y];
        for i in 0..s.len() {
            l -= alpha * (sp[i].exp() / zp) * ls[i];
        }
        l
    }

    #[test]
    fn distill_matches_scalar_evaluation() {
        let mut tape = Tape::new();
        let s = tape.param(Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap());
        let sp = Tensor::from_rows(&[vec![0.0, 2.0]]).unwrap();
        let l = distill_single(&mut tape, s, &sp, &[0], 0.5).unwrap();
        // hand evaluation: log σ(s) = (−ln(1+e⁻²), −2−ln(1+e⁻²)), σ(s′) = (1/(1+e²), e²/(1+e²))
        let lse = (1.0 + (-2.0f64).exp()).ln();
        let q1 = 2.0f64.exp() / (1.0 + 2.0f64.exp());
        let want = 0.5 * lse + 0.5 * ((1.0 - q1) * lse + q1 * (2.0 + lse));
        assert!((tape.value(l).item() - want).abs() < 1e-10);
        assert!((want - scalar_distill(&[2.0, 0.0], &[0.0, 2.0], 0, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn distill_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st = Tensor::randn(&[1, 5], 1.0, &mut rng);
        let mut tape = Tape::new();
        let s = tape.constant(st.clone());
        let a = distill_single(&mut tape, s, &Tensor::randn(&[1, 5], 1.0, &mut rng), &[2], 0.0).unwrap();
        let b = distill_single(&mut tape, s, &Tensor::randn(&[1, 5], 1.0, &mut rng), &[2], 0.0).unwrap();
        assert_eq!(tape.value(a).item(), tape.value(b).item());
        let ce = tape.softmax_cross_entropy(s, &[Some(2)], None).unwrap();
        assert!((tape.value(a).item() - tape.value(ce).item()).abs() < 1e-12);
        let ent = distill_single(&mut tape, s, &st, &[2], 1.0).unwrap();
        let p = softmax_row(st.data());
        let h: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
        assert!((tape.value(ent).item() - h).abs() < 1e-12);
        assert!(matches!(distill_single(&mut tape, s, &st, &[2], 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn bidirectional_distill_gradcheck() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = Tensor::randn(&[3, 3], 1.0, &mut rng);
            let sp = Tensor::randn(&[3, 3], 1.0, &mut rng);
            let err = gradcheck(|t, v| distill_loss(t, v[0], &sp, 0.4), &[s]).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }
}
