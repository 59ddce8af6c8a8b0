//! Joint training of the perceiver, text encoder and decoder on a synthetic
//! dataset, with hard negatives in the contrastive batch.

mod checkpoint;
mod text;
mod vtc;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use text::TextEncoder;
pub use vtc::{validate_batch, vtc_loss, HnTags};

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{dtw_objective, DtwConfig};
use crate::curation::text::tokenize;
use crate::curation::{gen_negatives, locate_verb_phrases, Lexicon, NegativeKind};
use crate::error::{Error, Result};
use crate::mam::{encode_caption, mam_batch_loss, mask_caption, Decoder, DecoderConfig, MaskedSample, Vocab};
use crate::nn::{Optimizer, ParamStore};
pub use crate::nn::OptimizerKind;
use crate::perceiver::{distill_loss, similarity_scores, ActionTokens, Perceiver, PerceiverConfig};
use crate::seed::derive_seed;
use crate::synthgen::{Dataset, Split};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latents: usize,
    pub window: Option<usize>,
    pub heads: usize,
    pub depth: usize,
    pub mlp_hidden: usize,
    pub latent_self_attn: bool,
    /// Pool phrase embeddings at their caption positions; `false` encodes
    /// each phrase as a standalone text.
    pub phrase_in_context: bool,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latents: 8,
            window: None,
            heads: 1,
            depth: 1,
            mlp_hidden: 64,
            latent_self_attn: true,
            phrase_in_context: true,
            decoder_layers: 2,
            decoder_heads: 1,
            max_len: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_vtc: f64,
    pub lambda_distill: f64,
    pub lambda_dtw: f64,
    pub lambda_mam: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_weight: f64,
    pub gamma_smooth: f64,
    pub dtw_normalize: bool,
    pub temperature: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    pub steps: u64,
    pub seed: u64,
    pub batch_size: usize,
    pub hn_kinds: Vec<NegativeKind>,
    pub hn_per_kind: usize,
    pub mask_prob: f64,
    /// Save every this many steps when a checkpoint path is given; 0 saves
    /// only at the end.
    pub checkpoint_every: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_vtc: 1.0,
            lambda_distill: 1.0,
            lambda_dtw: 1.0,
            lambda_mam: 1.0,
            alpha: 0.4,
            beta: 0.5,
            gamma_weight: 0.5,
            gamma_smooth: 0.1,
            dtw_normalize: false,
            temperature: 0.1,
            learning_rate: 0.05,
            momentum: 0.9,
            optimizer: OptimizerKind::Sgd,
            clip_norm: 5.0,
            steps: 1000,
            seed: 0,
            batch_size: 16,
            hn_kinds: vec![NegativeKind::VerbAltered, NegativeKind::OrderSwapped],
            hn_per_kind: 1,
            mask_prob: 0.5,
            checkpoint_every: 0,
            model: ModelConfig::default(),
        }
    }
}

/// Benchmark task a cross-evaluation preset targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossEvalTask {
    Semantic,
    Logic,
}

impl TrainConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Trains with the kind of negative the task does not test: order-swapped
    /// for the semantic task, verb-altered for the logic task.
    pub fn cross_eval(task: CrossEvalTask) -> Self {
        let kind = match task {
            CrossEvalTask::Semantic => NegativeKind::OrderSwapped,
            CrossEvalTask::Logic => NegativeKind::VerbAltered,
        };
        Self {
            hn_kinds: vec![kind],
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "cross_eval" | "cross_eval_semantic" => Ok(Self::cross_eval(CrossEvalTask::Semantic)),
            "cross_eval_logic" => Ok(Self::cross_eval(CrossEvalTask::Logic)),
            _ => Err(Error::Config(format!("unknown preset {name:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_vtc", self.lambda_vtc),
            ("lambda_distill", self.lambda_distill),
            ("lambda_dtw", self.lambda_dtw),
            ("lambda_mam", self.lambda_mam),
        ];
        for (k, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{k} must be a finite value >= 0, got {w}")));
            }
        }
        let contrastive = self.lambda_vtc > 0.0 || self.lambda_distill > 0.0;
        if contrastive && self.batch_size < 2 {
            return Err(Error::Config(format!(
                "contrastive terms need batch_size >= 2, got {}",
                self.batch_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) || !(self.gamma_weight >= 0.0) {
            return Err(Error::Config("beta and gamma_weight must be >= 0".into()));
        }
        if !(self.gamma_smooth > 0.0) || !(self.temperature > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "gamma_smooth, temperature and learning_rate must be > 0".into(),
            ));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return Err(Error::Config(format!("mask_prob must lie in (0, 1], got {}", self.mask_prob)));
        }
        Ok(())
    }

    pub fn dtw(&self) -> DtwConfig {
        DtwConfig {
            beta: self.beta,
            gamma_weight: self.gamma_weight,
            gamma_smooth: self.gamma_smooth,
            normalize: self.dtw_normalize,
        }
    }
}

/// Every learnable tensor plus the vocabulary they index.
#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore,
    pub perceiver: Perceiver,
    pub text: TextEncoder,
    pub decoder: Decoder,
    pub vocab: Vocab,
    pub config: ModelConfig,
    pub shape: [usize; 3],
}

impl Model {
    pub fn new(cfg: &ModelConfig, shape: [usize; 3], vocab: Vocab, seed: u64) -> Result<Self> {
        let [t, n, c] = shape;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "model", "init"));
        let mut store = ParamStore::new();
        let perceiver = Perceiver::new(
            &mut store,
            PerceiverConfig {
                frames: t,
                patches: n,
                dim: c,
                latents: cfg.latents,
                window: cfg.window,
                heads: cfg.heads,
                depth: cfg.depth,
                mlp_hidden: cfg.mlp_hidden,
                latent_self_attn: cfg.latent_self_attn,
            },
            &mut rng,
        )?;
        let text = TextEncoder::new(&mut store, vocab.len(), c, cfg.max_len, &mut rng);
        let decoder = Decoder::new(
            &mut store,
            DecoderConfig {
                dim: c,
                layers: cfg.decoder_layers,
                heads: cfg.decoder_heads,
                max_len: cfg.max_len,
                mlp_hidden: cfg.mlp_hidden,
            },
            vocab.len(),
            &mut rng,
        )?;
        Ok(Self {
            store,
            perceiver,
            text,
            decoder,
            vocab,
            config: cfg.clone(),
            shape,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut m = Self::new(&ck.config.model, ck.shape, ck.vocab.clone(), ck.config.seed)?;
        if ck.params.len() != m.store.len() {
            let known: HashSet<&str> = m.store.names().iter().map(String::as_str).collect();
            if let Some((extra, _)) = ck.params.iter().find(|(n, _)| !known.contains(n.as_str())) {
                return Err(Error::Schema(format!("unexpected tensor {extra:?}")));
            }
        }
        m.store.load_from(&ck.params)?;
        Ok(m)
    }

    pub fn encode_ids(&self, texts: &[&str]) -> Result<Vec<Vec<usize>>> {
        texts.iter().map(|t| self.vocab.encode(t)).collect()
    }

    /// Student action tokens of one clip, `K×C`.
    pub fn action_tokens(&self, frames: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, false);
        let v = tape.constant(frames.clone());
        let s = self.perceiver.student_forward(&mut tape, &p, v)?;
        Ok(tape.value(s.tokens).clone())
    }

    /// Mean-pooled action tokens, one row per clip.
    pub fn video_embeddings(&self, clips: &[Tensor]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, false);
        let mut rows = Vec::with_capacity(clips.len());
        for f in clips {
            let v = tape.constant(f.clone());
            let s = self.perceiver.student_forward(&mut tape, &p, v)?;
            rows.push(tape.mean_rows(s.tokens)?);
        }
        let all = tape.concat_rows(&rows)?;
        Ok(tape.value(all).clone())
    }

    /// Verb-phrase embeddings `M×C`, pooled at their positions in the caption.
    pub fn phrase_embeddings(&self, caption: &str, spans: &[(usize, usize)]) -> Result<Tensor> {
        let ids = self.vocab.encode(caption)?;
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, false);
        let e = self.text.encode_phrases(&mut tape, &p, &[ids], &[spans.to_vec()], self.config.phrase_in_context)?;
        Ok(tape.value(e).clone())
    }

    pub fn text_embeddings(&self, texts: &[&str]) -> Result<Tensor> {
        let ids = self.encode_ids(texts)?;
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, false);
        let e = self.text.encode(&mut tape, &p, &ids)?;
        Ok(tape.value(e).clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: u64,
    pub l_vtc: f64,
    pub l_distill: f64,
    pub l_dtw: f64,
    pub l_mam: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
struct TrainItem {
    clip: usize,
    caption: Vec<usize>,
    phrase_spans: Vec<(usize, usize)>,
    segments: Vec<(usize, usize)>,
    negatives: Vec<Vec<usize>>,
    mam_ids: Vec<usize>,
    verb_positions: Vec<usize>,
}

/// Token spans of the caption's verb phrases, verb through object.
pub fn phrase_spans(caption: &str, lexicon: &Lexicon) -> Vec<(usize, usize)> {
    locate_verb_phrases(&tokenize(caption), lexicon)
        .into_iter()
        .map(|l| l.span)
        .collect()
}

/// Closed vocabulary over everything the dataset, its lexicon and the
/// configured negatives can produce.
pub fn dataset_vocab(data: &Dataset, negatives: &[String]) -> Vocab {
    let lex_words = data.lexicon.words();
    let mut texts: Vec<&str> = lex_words.iter().map(String::as_str).collect();
    for c in &data.clips {
        texts.push(&c.caption.text);
    }
    for item in data.semantic.iter().chain(&data.logic) {
        texts.extend(item.candidates.iter().map(String::as_str));
    }
    texts.extend(negatives.iter().map(String::as_str));
    Vocab::build(texts)
}

/// Negatives minted for the training split by the curation generators.
fn training_negatives(data: &Dataset, cfg: &TrainConfig) -> Result<Vec<Vec<String>>> {
    let kinds: BTreeSet<NegativeKind> = cfg.hn_kinds.iter().copied().collect();
    let mut out = Vec::new();
    for i in data.split_indices(Split::Train) {
        let clip = &data.clips[i];
        let phrases = clip.phrases();
        let mut texts = Vec::new();
        for &kind in &kinds {
            if kind == NegativeKind::OrderSwapped && phrases.len() < 2 {
                continue;
            }
            let seed = derive_seed(cfg.seed, &clip.id, kind.as_str());
            match gen_negatives(&clip.caption, &phrases, &data.lexicon, kind, cfg.hn_per_kind, seed) {
                Ok(negs) => texts.extend(negs.into_iter().map(|n| n.text)),
                Err(Error::GenerationImpossible { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        out.push(texts);
    }
    Ok(out)
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub model: Model,
    data: &'a Dataset,
    items: Vec<TrainItem>,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    step: u64,
    last_good: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a Dataset) -> Result<Self> {
        config.validate()?;
        let negatives = training_negatives(data, &config)?;
        let flat: Vec<String> = negatives.iter().flatten().cloned().collect();
        let vocab = dataset_vocab(data, &flat);
        let shape = data
            .clips
            .first()
            .map(|c| c.shape)
            .ok_or_else(|| Error::Config("dataset has no clips".into()))?;
        let model = Model::new(&config.model, shape, vocab, config.seed)?;
        let optimizer = Optimizer::new(
            config.optimizer,
            config.learning_rate,
            config.momentum,
            config.clip_norm,
            &model.store,
        );
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "batches", ""));
        let items = Self::prepare(data, &model, &negatives)?;
        Ok(Self {
            config,
            model,
            data,
            items,
            optimizer,
            rng,
            step: 0,
            last_good: None,
        })
    }

    /// Continues from a checkpoint exactly where it stopped.
    pub fn resume(ck: &Checkpoint, data: &'a Dataset) -> Result<Self> {
        let mut t = Self::new(ck.config.clone(), data)?;
        if t.model.vocab != ck.vocab || t.model.shape != ck.shape {
            return Err(Error::Schema("checkpoint does not match this dataset".into()));
        }
        t.model = Model::from_checkpoint(ck)?;
        t.optimizer.restore(ck.optimizer_steps, ck.first.clone(), ck.second.clone())?;
        t.rng = ChaCha8Rng::from_seed(ck.rng_seed);
        t.rng.set_word_pos(ck.rng_word_pos);
        t.step = ck.step;
        Ok(t)
    }

    fn prepare(data: &Dataset, model: &Model, negatives: &[Vec<String>]) -> Result<Vec<TrainItem>> {
        let vocab = &model.vocab;
        data.split_indices(Split::Train)
            .into_iter()
            .zip(negatives)
            .map(|(i, negs)| {
                let clip = &data.clips[i];
                let caption = vocab.encode(&clip.caption.text)?;
                let phrase_spans = phrase_spans(&clip.caption.text, &data.lexicon);
                if phrase_spans.len() != clip.steps.len() {
                    return Err(Error::Inconsistency(format!(
                        "{}: located {} phrases for {} steps",
                        clip.id,
                        phrase_spans.len(),
                        clip.steps.len()
                    )));
                }
                let negatives = negs
                    .iter()
                    .map(|t| vocab.encode(t))
                    .collect::<Result<Vec<_>>>()?;
                let (mam_ids, verb_positions) = encode_caption(vocab, &data.lexicon, &clip.caption.text)?;
                Ok(TrainItem {
                    clip: i,
                    caption,
                    phrase_spans,
                    segments: clip.segments.clone(),
                    negatives,
                    mam_ids,
                    verb_positions,
                })
            })
            .collect()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Distinct-caption batch drawn from the training split.
    fn sample_batch(&mut self) -> Result<Vec<usize>> {
        let n = self.items.len();
        let b = self.config.batch_size;
        let distinct: HashSet<&Vec<usize>> = self.items.iter().map(|it| &it.caption).collect();
        if distinct.len() < b {
            return Err(Error::Config(format!(
                "training split has {} distinct captions, fewer than batch_size {b}",
                distinct.len()
            )));
        }
        let mut picked = Vec::with_capacity(b);
        let mut seen: HashSet<&Vec<usize>> = HashSet::new();
        while picked.len() < b {
            let i = self.rng.random_range(0..n);
            if seen.insert(&self.items[i].caption) {
                picked.push(i);
            }
        }
        Ok(picked)
    }

    /// One optimization step on a freshly sampled batch.
    pub fn train_step(&mut self) -> Result<LossBreakdown> {
        let batch = self.sample_batch()?;
        match self.step_on(&batch) {
            Err(Error::NumericDomain(_)) => Err(Error::Diverged { step: self.step, last_good: self.last_good.clone() }),
            Err(Error::DegenerateVector { norm, .. }) if !norm.is_finite() => Err(Error::Diverged { step: self.step, last_good: self.last_good.clone() }),
            r => r,
        }
    }

    fn step_on(&mut self, batch: &[usize]) -> Result<LossBreakdown> {
        let cfg = &self.config;
        let model = &self.model;
        let items: Vec<&TrainItem> = batch.iter().map(|&i| &self.items[i]).collect();
        let captions: Vec<Vec<usize>> = items.iter().map(|it| it.caption.clone()).collect();
        let mut negatives: Vec<(usize, Vec<usize>)> = Vec::new();
        if cfg.lambda_vtc > 0.0 {
            for (i, it) in items.iter().enumerate() {
                for n in &it.negatives {
                    if !captions.contains(n) {
                        negatives.push((i, n.clone()));
                    }
                }
            }
        }
        let contrastive = cfg.lambda_vtc > 0.0 || cfg.lambda_distill > 0.0;
        if contrastive {
            validate_batch(&captions, &negatives)?;
        }

        let mut tape = Tape::new();
        let p = model.store.bind(&mut tape, true);
        let mut keys = Vec::with_capacity(items.len());
        let mut tokens: Vec<ActionTokens> = Vec::with_capacity(items.len());
        for it in &items {
            let v = tape.constant(self.data.frames(it.clip));
            let k = model.perceiver.keys(&mut tape, &p, v)?;
            tokens.push(model.perceiver.student_from_keys(&mut tape, &p, k)?);
            keys.push(k);
        }
        let needs_phrases = cfg.lambda_distill > 0.0 || cfg.lambda_dtw > 0.0;
        let phrases: Vec<Var> = if needs_phrases {
            let seqs: Vec<Vec<usize>> = items.iter().map(|it| it.caption.clone()).collect();
            let spans: Vec<Vec<(usize, usize)>> = items.iter().map(|it| it.phrase_spans.clone()).collect();
            let all = model.text.encode_phrases(&mut tape, &p, &seqs, &spans, model.config.phrase_in_context)?;
            let all = tape.detach(all);
            let mut out = Vec::with_capacity(items.len());
            let mut at = 0;
            for it in &items {
                let m = it.phrase_spans.len();
                out.push(tape.slice_rows(all, at, at + m)?);
                at += m;
            }
            out
        } else {
            Vec::new()
        };

        let mut parts = [0.0; 4];
        let mut terms: Vec<Var> = Vec::new();
        if contrastive {
            let pooled = tokens
                .iter()
                .map(|s| tape.mean_rows(s.tokens))
                .collect::<Result<Vec<_>>>()?;
            let video = tape.concat_rows(&pooled)?;
            let mut seqs = captions.clone();
            seqs.extend(negatives.iter().map(|(_, n)| n.clone()));
            let text_all = model.text.encode(&mut tape, &p, &seqs)?;
            let b = items.len();
            let text = tape.slice_rows(text_all, 0, b)?;
            if cfg.lambda_vtc > 0.0 {
                let hn = if negatives.is_empty() {
                    None
                } else {
                    Some(tape.slice_rows(text_all, b, seqs.len())?)
                };
                let tags = HnTags { sources: negatives.iter().map(|(s, _)| *s).collect() };
                let l = vtc_loss(&mut tape, video, text, hn.map(|h| (h, &tags)), cfg.temperature)?;
                parts[0] = tape.value(l).item();
                terms.push(tape.scale(l, cfg.lambda_vtc));
            }
            if cfg.lambda_distill > 0.0 {
                let s = similarity_scores(&mut tape, video, text, cfg.temperature)?;
                let mut teacher_rows = Vec::with_capacity(b);
                for (i, it) in items.iter().enumerate() {
                    let t = model.perceiver.teacher_from_keys(&mut tape, &p, keys[i], phrases[i], Some(&it.segments))?;
                    teacher_rows.push(tape.mean_rows(t.tokens)?);
                }
                let tv = tape.concat_rows(&teacher_rows)?;
                let tv = tape.detach(tv);
                let tt = tape.detach(text);
                let sp = similarity_scores(&mut tape, tv, tt, cfg.temperature)?;
                let s_prime = tape.value(sp).clone();
                let l = distill_loss(&mut tape, s, &s_prime, cfg.alpha)?;
                parts[1] = tape.value(l).item();
                terms.push(tape.scale(l, cfg.lambda_distill));
            }
        }
        if cfg.lambda_dtw > 0.0 {
            let pairs: Vec<(Var, Var)> = tokens.iter().zip(&phrases).map(|(s, &ph)| (s.tokens, ph)).collect();
            let l = dtw_objective(&mut tape, &pairs, &cfg.dtw())?;
            parts[2] = tape.value(l).item();
            terms.push(tape.scale(l, cfg.lambda_dtw));
        }
        if cfg.lambda_mam > 0.0 {
            let mut samples: Vec<(MaskedSample, Var)> = Vec::new();
            for (it, s) in items.iter().zip(&tokens) {
                let id = &self.data.clips[it.clip].id;
                let seed = derive_seed(cfg.seed, id, &format!("mask-{}", self.step));
                if let Some(ms) = mask_caption(&it.mam_ids, &it.verb_positions, cfg.mask_prob, seed)? {
                    samples.push((ms, s.tokens));
                }
            }
            if !samples.is_empty() {
                let refs: Vec<(&MaskedSample, Var)> = samples.iter().map(|(m, v)| (m, *v)).collect();
                let l = mam_batch_loss(&mut tape, &p, &model.decoder, &refs)?;
                parts[3] = tape.value(l).item();
                terms.push(tape.scale(l, cfg.lambda_mam));
            }
        }
        if terms.is_empty() {
            return Err(Error::Config("every loss weight is zero".into()));
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        let total_value = tape.value(total).item();
        if !total_value.is_finite() {
            return Err(Error::Diverged { step: self.step, last_good: self.last_good.clone() });
        }
        tape.backward(total)?;
        let grads = model.store.grads(&tape, &p);
        if grads.iter().flatten().any(|g| g.data().iter().any(|x| !x.is_finite())) {
            return Err(Error::Diverged { step: self.step, last_good: self.last_good.clone() });
        }
        self.optimizer.update(&mut self.model.store, &grads);
        let out = LossBreakdown {
            step: self.step,
            l_vtc: parts[0],
            l_distill: parts[1],
            l_dtw: parts[2],
            l_mam: parts[3],
            total: total_value,
        };
        self.step += 1;
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (optimizer_steps, first, second) = self.optimizer.state();
        Checkpoint {
            config: self.config.clone(),
            shape: self.model.shape,
            vocab: self.model.vocab.clone(),
            step: self.step,
            params: self
                .model
                .store
                .names()
                .iter()
                .cloned()
                .zip(self.model.store.tensors().iter().cloned())
                .collect(),
            optimizer_steps,
            first: first.to_vec(),
            second: second.to_vec(),
            rng_seed: self.rng.get_seed(),
            rng_word_pos: self.rng.get_word_pos(),
        }
    }

    /// Runs until `config.steps`, logging one JSON line per step.
    pub fn fit(&mut self, mut log: Option<&mut dyn Write>, out: Option<&Path>) -> Result<Vec<LossBreakdown>> {
        let mut history = Vec::new();
        while self.step < self.config.steps {
            let rec = self.train_step()?;
            if let Some(w) = log.as_deref_mut() {
                serde_json::to_writer(&mut *w, &rec)?;
                w.write_all(b"\n")?;
            }
            history.push(rec);
            if let Some(path) = out {
                let every = self.config.checkpoint_every;
                if every > 0 && self.step % every == 0 && self.step < self.config.steps {
                    self.checkpoint().save(path)?;
                    self.last_good = Some(path.to_path_buf());
                }
            }
        }
        if let Some(path) = out {
            self.checkpoint().save(path)?;
            self.last_good = Some(path.to_path_buf());
        }
        Ok(history)
    }
}
