//! Synthetic clips with known action programs. Each frame mixes a constant
//! object prototype with a phase-dependent motion prototype, weighted by the
//! object-bias strength `lambda_obj`.

mod dataset;

pub use dataset::{build_dataset, ClipMeta, Dataset, DynamicsPool, McqItem, Split, StepMeta};

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curation::{Caption, Lexicon, Pattern, VerbPhrase};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub frames: usize,
    pub patches: usize,
    pub dim: usize,
    /// Verbs used, taken from the lexicon in cluster order.
    pub n_verbs: usize,
    /// Objects used, taken from the front of the lexicon's noun list.
    pub n_objects: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    /// Probability that a later step reuses the previous step's object.
    pub object_reuse: f64,
    pub noise: f64,
    pub lambda_obj: f64,
    pub train_clips: usize,
    pub eval_clips: usize,
    /// Dynamics pools smaller than this are dropped.
    pub min_pool_size: usize,
    pub semantic_negatives: usize,
    /// Optional lexicon file; the built-in one otherwise.
    pub lexicon: Option<std::path::PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 16,
            patches: 4,
            dim: 32,
            n_verbs: 64,
            n_objects: 40,
            min_steps: 1,
            max_steps: 4,
            object_reuse: 0.3,
            noise: 0.1,
            lambda_obj: 0.7,
            train_clips: 2000,
            eval_clips: 400,
            min_pool_size: 2,
            semantic_negatives: 9,
            lexicon: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frames == 0 || self.patches == 0 || self.dim == 0 {
            return bad("frames, patches and dim must be positive".into());
        }
        if self.min_steps == 0 || self.min_steps > self.max_steps {
            return bad(format!("step range [{}, {}] is empty", self.min_steps, self.max_steps));
        }
        if !(0.0..=1.0).contains(&self.lambda_obj) || !(0.0..=1.0).contains(&self.object_reuse) {
            return bad("lambda_obj and object_reuse must lie in [0, 1]".into());
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise must be ≥ 0, got {}", self.noise));
        }
        if self.min_pool_size < 2 {
            return bad("pools need at least 2 clips".into());
        }
        if self.n_verbs < 2 || self.n_objects < 1 {
            return bad("need at least 2 verbs and 1 object".into());
        }
        Ok(())
    }

    pub fn load_lexicon(&self) -> Result<Lexicon> {
        match &self.lexicon {
            Some(p) => Lexicon::load(p),
            None => Ok(Lexicon::builtin()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub verb: usize,
    pub object: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionProgram {
    pub steps: Vec<Step>,
}

impl ActionProgram {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Verb and object names plus their prototype tables.
#[derive(Clone, Debug)]
pub struct World {
    pub verbs: Vec<String>,
    pub verb_cluster: Vec<usize>,
    pub objects: Vec<String>,
    /// Per object: N×C.
    pub object_protos: Vec<Tensor>,
    /// Per verb: cosine, sine and constant N×C components.
    pub motion_protos: Vec<[Tensor; 3]>,
    pub patches: usize,
    pub dim: usize,
}

impl World {
    pub fn new(cfg: &SynthConfig, lex: &Lexicon, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let all = lex.verbs();
        if cfg.n_verbs > all.len() {
            return Err(Error::Config(format!(
                "{} verbs requested, lexicon has {}",
                cfg.n_verbs,
                all.len()
            )));
        }
        if cfg.n_objects > lex.data().nouns.len() {
            return Err(Error::Config(format!(
                "{} objects requested, lexicon has {}",
                cfg.n_objects,
                lex.data().nouns.len()
            )));
        }
        let verbs: Vec<String> = all[..cfg.n_verbs].to_vec();
        let verb_cluster = verbs.iter().map(|v| lex.cluster_of(v).expect("lexicon verb")).collect();
        let objects = lex.data().nouns[..cfg.n_objects].to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive_seed(seed, "world", "prototypes"));
        let (n, c) = (cfg.patches, cfg.dim);
        let scale = 1.0 / (c as f64).sqrt();
        let object_protos = (0..cfg.n_objects)
            .map(|_| Tensor::randn(&[n, c], scale, &mut rng))
            .collect();
        let motion_protos = (0..cfg.n_verbs)
            .map(|_| {
                [
                    Tensor::randn(&[n, c], scale, &mut rng),
                    Tensor::randn(&[n, c], scale, &mut rng),
                    Tensor::randn(&[n, c], scale, &mut rng),
                ]
            })
            .collect();
        Ok(Self {
            verbs,
            verb_cluster,
            objects,
            object_protos,
            motion_protos,
            patches: n,
            dim: c,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.verb_cluster.iter().max().map_or(0, |m| m + 1)
    }

    /// Noise-free patch features of one step at phase `phi` ∈ [0, 1).
    pub fn frame(&self, step: Step, phi: f64, lambda_obj: f64) -> Vec<f64> {
        let obj = self.object_protos[step.object].data();
        let [a, b, k] = &self.motion_protos[step.verb];
        let (cs, sn) = ((TAU * phi).cos(), (TAU * phi).sin());
        (0..obj.len())
            .map(|i| {
                let motion = a.data()[i] * cs + b.data()[i] * sn + k.data()[i];
                lambda_obj * obj[i] + (1.0 - lambda_obj) * motion
            })
            .collect()
    }
}

/// Contiguous near-equal segments partitioning `[0, frames)`.
pub fn segment_bounds(frames: usize, steps: usize) -> Result<Vec<(usize, usize)>> {
    if steps == 0 || frames < steps {
        return Err(Error::InfeasibleProgram { steps, frames });
    }
    Ok((0..steps)
        .map(|m| (m * frames / steps, (m + 1) * frames / steps))
        .collect())
}

/// Phase of frame `t` inside the segment `[s, e)`, at the frame centre.
pub fn phase(t: usize, (s, e): (usize, usize)) -> f64 {
    (t - s) as f64 / (e - s) as f64 + 0.5 / (e - s) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticClip {
    pub id: String,
    /// T×N×C.
    pub frames: Tensor,
    pub caption: Caption,
    pub phrases: Vec<VerbPhrase>,
    pub program: ActionProgram,
    pub segments: Vec<(usize, usize)>,
    pub lambda_obj: f64,
}

/// Renders "〈verb〉 the 〈object〉" steps joined by "and then", with the gold
/// phrase list.
pub fn render_caption(program: &ActionProgram, world: &World) -> (String, Vec<VerbPhrase>) {
    let mut parts = Vec::with_capacity(program.len());
    let mut phrases = Vec::with_capacity(program.len());
    for (i, s) in program.steps.iter().enumerate() {
        let (v, o) = (&world.verbs[s.verb], &world.objects[s.object]);
        parts.push(format!("{v} the {o}"));
        phrases.push(VerbPhrase {
            verb: v.clone(),
            pattern: Pattern::VerbNoun,
            object: Some(o.clone()),
            prep: None,
            order_index: i,
        });
    }
    (parts.join(" and then "), phrases)
}

/// Token spans of each rendered step: step `m` covers tokens `5m..5m+3`.
pub fn rendered_spans(steps: usize) -> Vec<(usize, usize)> {
    (0..steps).map(|m| (5 * m, 5 * m + 3)).collect()
}

/// Uniform step count, then steps without repeats; later steps reuse the
/// previous object with probability `object_reuse`.
pub fn sample_program<R: Rng>(cfg: &SynthConfig, world: &World, rng: &mut R) -> ActionProgram {
    let m = rng.random_range(cfg.min_steps..=cfg.max_steps);
    let mut steps: Vec<Step> = Vec::with_capacity(m);
    while steps.len() < m {
        let object = match steps.last() {
            Some(prev) if rng.random_bool(cfg.object_reuse) => prev.object,
            _ => rng.random_range(0..world.objects.len()),
        };
        let step = Step {
            verb: rng.random_range(0..world.verbs.len()),
            object,
        };
        if !steps.contains(&step) {
            steps.push(step);
        }
    }
    ActionProgram { steps }
}

/// Renders frames for a program.
pub fn generate_clip(
    id: &str,
    program: &ActionProgram,
    world: &World,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<SyntheticClip> {
    cfg.validate()?;
    if let Some(s) = program
        .steps
        .iter()
        .find(|s| s.verb >= world.verbs.len() || s.object >= world.objects.len())
    {
        return Err(Error::Precondition(format!("step {s:?} indexes past the prototype tables")));
    }
    let segments = segment_bounds(cfg.frames, program.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_frame = cfg.patches * cfg.dim;
    let mut data = Vec::with_capacity(cfg.frames * per_frame);
    for (m, &seg) in segments.iter().enumerate() {
        for t in seg.0..seg.1 {
            let clean = world.frame(program.steps[m], phase(t, seg), cfg.lambda_obj);
            data.extend(clean.into_iter().map(|x| {
                let z: f64 = rng.sample(StandardNormal);
                x + cfg.noise * z
            }));
        }
    }
    let (text, phrases) = render_caption(program, world);
    Ok(SyntheticClip {
        id: id.to_string(),
        frames: Tensor::new(&[cfg.frames, cfg.patches, cfg.dim], data)?,
        caption: Caption {
            id: format!("{id}.cap"),
            clip_id: id.to_string(),
            text,
            start: 0.0,
            end: cfg.frames as f64,
        },
        phrases,
        program: program.clone(),
        segments,
        lambda_obj: cfg.lambda_obj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::extract_verb_phrases;
    use proptest::prelude::*;

    fn setup(lambda_obj: f64, noise: f64) -> (SynthConfig, World) {
        let cfg = SynthConfig {
            lambda_obj,
            noise,
            ..SynthConfig::default()
        };
        let world = World::new(&cfg, &Lexicon::builtin(), 1).unwrap();
        (cfg, world)
    }

    fn prog(steps: &[(usize, usize)]) -> ActionProgram {
        ActionProgram {
            steps: steps.iter().map(|&(verb, object)| Step { verb, object }).collect(),
        }
    }

    fn frame_row(clip: &SyntheticClip, t: usize) -> &[f64] {
        let per = clip.frames.shape()[1] * clip.frames.shape()[2];
        &clip.frames.data()[t * per..(t + 1) * per]
    }

    #[test]
    fn pure_object_frames_are_constant_within_steps() {
        let (cfg, world) = setup(1.0, 0.0);
        let clip = generate_clip("x", &prog(&[(0, 1), (5, 2), (9, 1)]), &world, &cfg, 3).unwrap();
        for &(s, e) in &clip.segments {
            for t in s + 1..e {
                assert_eq!(frame_row(&clip, t), frame_row(&clip, s));
            }
        }
        // steps 0 and 2 share an object, so their frames coincide as well
        assert_eq!(frame_row(&clip, 0), frame_row(&clip, 15));
    }

    #[test]
    fn pure_motion_frames_depend_on_verbs() {
        let (cfg, world) = setup(0.0, 0.0);
        let a = generate_clip("a", &prog(&[(0, 3), (1, 4)]), &world, &cfg, 0).unwrap();
        let b = generate_clip("b", &prog(&[(2, 3), (1, 4)]), &world, &cfg, 0).unwrap();
        assert_ne!(a.frames, b.frames);
    }

    #[test]
    fn too_many_steps_is_infeasible() {
        let (mut cfg, world) = setup(0.5, 0.0);
        cfg.frames = 2;
        let err = generate_clip("x", &prog(&[(0, 0), (1, 1), (2, 2)]), &world, &cfg, 0).unwrap_err();
        assert!(matches!(err, Error::InfeasibleProgram { steps: 3, frames: 2 }));
    }

    #[test]
    fn caption_templates() {
        let (_, world) = setup(0.5, 0.0);
        let v = |name: &str| world.verbs.iter().position(|x| x == name).unwrap();
        let o = |name: &str| world.objects.iter().position(|x| x == name).unwrap();
        let (t, _) = render_caption(&prog(&[(v("crack"), o("egg"))]), &world);
        assert_eq!(t, "crack the egg");
        let (t, _) = render_caption(&prog(&[(v("crack"), o("egg")), (v("whisk"), o("egg"))]), &world);
        assert_eq!(t, "crack the egg and then whisk the egg");
    }

    /// Assigns each frame to the step whose prototypes explain it: subtract the
    /// step's constant part and require the remainder to lie in the span of its
    /// cosine and sine components.
    fn decode_segments(clip: &SyntheticClip, world: &World) -> Vec<(usize, usize)> {
        let lam = clip.lambda_obj;
        let t_len = clip.frames.shape()[0];
        let mut labels = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let f = frame_row(clip, t);
            let mut best = (f64::INFINITY, 0);
            for (m, s) in clip.program.steps.iter().enumerate() {
                let obj = world.object_protos[s.object].data();
                let [a, b, k] = &world.motion_protos[s.verb];
                let r: Vec<f64> = (0..f.len())
                    .map(|i| f[i] - lam * obj[i] - (1.0 - lam) * k.data()[i])
                    .collect();
                // least squares on the two motion directions
                let (a, b) = (a.data(), b.data());
                let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
                let (aa, bb, ab) = (dot(a, a), dot(b, b), dot(a, b));
                let (ra, rb) = (dot(&r, a), dot(&r, b));
                let det = aa * bb - ab * ab;
                let x = (ra * bb - rb * ab) / det;
                let y = (rb * aa - ra * ab) / det;
                let resid: f64 = (0..r.len())
                    .map(|i| (r[i] - x * a[i] - y * b[i]).powi(2))
                    .sum();
                if resid < best.0 {
                    best = (resid, m);
                }
            }
            labels.push(best.1);
        }
        let mut out = Vec::new();
        let mut start = 0;
        for t in 1..=t_len {
            if t == t_len || labels[t] != labels[start] {
                out.push((start, t));
                start = t;
            }
        }
        out
    }

    #[test]
    fn noise_free_boundaries_are_recoverable() {
        let (cfg, world) = setup(0.5, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..20 {
            let p = sample_program(&cfg, &world, &mut rng);
            let clip = generate_clip(&format!("c{i}"), &p, &world, &cfg, i).unwrap();
            assert_eq!(decode_segments(&clip, &world), clip.segments);
        }
    }

    proptest! {
        #[test]
        fn rendered_captions_parse_back(seed in any::<u64>()) {
            let (cfg, world) = setup(0.7, 0.1);
            let lex = Lexicon::builtin();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = sample_program(&cfg, &world, &mut rng);
            let clip = generate_clip("c", &p, &world, &cfg, seed).unwrap();
            prop_assert!(clip.frames.is_finite());
            let parsed = extract_verb_phrases(&clip.caption, &lex).unwrap();
            prop_assert_eq!(&parsed, &clip.phrases);
            let spans: Vec<(usize, usize)> = crate::curation::locate_verb_phrases(
                &crate::curation::text::tokenize(&clip.caption.text), &lex)
                .iter().map(|l| l.span).collect();
            prop_assert_eq!(spans, rendered_spans(p.len()));
            let segs = &clip.segments;
            prop_assert_eq!(segs[0].0, 0);
            prop_assert_eq!(segs[segs.len() - 1].1, cfg.frames);
            prop_assert!(segs.windows(2).all(|w| w[0].1 == w[1].0 && w[0].0 < w[0].1));
        }
    }
}
