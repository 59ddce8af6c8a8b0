//! Masked action modeling: verb masking, a causal decoder that cross-attends
//! to action tokens, and the next-token loss.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curation::Lexicon;
use crate::curation::text::tokenize;
use crate::error::{Error, Result};
use crate::nn::{Attention, Bound, LayerNorm, Linear, Mlp, ParamId, ParamStore};
use crate::tensor::{Mask, Tape, Var};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const MASK: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<mask>"];

/// Closed-world token table. Ids 0..4 are reserved.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Builds the table from the lowercased tokens of `texts`, sorted.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts
            .into_iter()
            .flat_map(|t| tokenize(t).into_iter().map(|w| w.to_lowercase()))
            .filter(|w| !RESERVED.contains(&w.as_str()))
            .collect();
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect::<Vec<_>>();
        Self::from_tokens(tokens).expect("distinct by construction")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..4].iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::Schema("vocabulary lacks the reserved tokens".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.ids
            .get(&token.to_lowercase())
            .copied()
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids of `text` without BOS/EOS.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        tokenize(text).iter().map(|w| self.id(w)).collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, usize> {
        self.ids.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    pub fn from_map(map: &BTreeMap<String, usize>) -> Result<Self> {
        let mut tokens = vec![String::new(); map.len()];
        for (t, &i) in map {
            if i >= tokens.len() || !tokens[i].is_empty() {
                return Err(Error::Schema(format!("vocabulary ids are not a bijection at {t:?}")));
            }
            tokens[i] = t.clone();
        }
        Self::from_tokens(tokens)
    }
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, usize>::deserialize(d)?;
        Vocab::from_map(&map).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedSample {
    pub input: Vec<usize>,
    pub target: Vec<usize>,
    pub masked: Vec<usize>,
}

/// Masks each verb position with probability `mask_prob`, forcing the first
/// one when the draw selects none. `None` means the caption has no verb and
/// is skipped.
pub fn mask_caption(tokens: &[usize], verb_positions: &[usize], mask_prob: f64, seed: u64) -> Result<Option<MaskedSample>> {
    if !(mask_prob > 0.0 && mask_prob <= 1.0) {
        return Err(Error::Config(format!("mask_prob must lie in (0, 1], got {mask_prob}")));
    }
    if verb_positions.is_empty() {
        return Ok(None);
    }
    if let Some(&p) = verb_positions.iter().find(|&&p| p >= tokens.len()) {
        return Err(Error::Precondition(format!("verb position {p} beyond {} tokens", tokens.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked: Vec<usize> = verb_positions
        .iter()
        .copied()
        .filter(|_| rng.random_bool(mask_prob))
        .collect();
    if masked.is_empty() {
        masked.push(verb_positions[0]);
    }
    let mut input = tokens.to_vec();
    for &p in &masked {
        input[p] = MASK;
    }
    Ok(Some(MaskedSample {
        input,
        target: tokens.to_vec(),
        masked,
    }))
}

/// `BOS caption EOS` ids and the positions of lexicon verbs in that sequence.
pub fn encode_caption(vocab: &Vocab, lexicon: &Lexicon, text: &str) -> Result<(Vec<usize>, Vec<usize>)> {
    let words = tokenize(text);
    let mut ids = Vec::with_capacity(words.len() + 2);
    ids.push(BOS);
    let mut verbs = Vec::new();
    for w in &words {
        if lexicon.verb(w).is_some() {
            verbs.push(ids.len());
        }
        ids.push(vocab.id(w)?);
    }
    ids.push(EOS);
    Ok((ids, verbs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub mlp_hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            layers: 2,
            heads: 1,
            max_len: 32,
            mlp_hidden: 64,
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln_self: LayerNorm,
    self_attn: Attention,
    ln_cross: LayerNorm,
    cross_attn: Attention,
    ln_mlp: LayerNorm,
    mlp: Mlp,
}

/// Pre-norm decoder: causal self-attention, cross-attention over action
/// tokens, then a feed-forward block, each residual.
#[derive(Clone, Debug)]
pub struct Decoder {
    cfg: DecoderConfig,
    vocab_size: usize,
    embed: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    out: Linear,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: DecoderConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        if cfg.layers == 0 || vocab_size == 0 || cfg.max_len == 0 {
            return Err(Error::Config("decoder needs layers, vocabulary and max_len > 0".into()));
        }
        let c = cfg.dim;
        let scale = 1.0 / (c as f64).sqrt();
        let embed = store.add_randn("decoder.embed", &[vocab_size, c], 1.0, rng);
        let pos = store.add_randn("decoder.pos", &[cfg.max_len, c], scale, rng);
        let blocks = (0..cfg.layers)
            .map(|l| {
                let n = format!("decoder.l{l}");
                Ok(Block {
                    ln_self: LayerNorm::new(store, &format!("{n}.ln_self"), c),
                    self_attn: Attention::new(store, &format!("{n}.self"), c, cfg.heads, rng)?,
                    ln_cross: LayerNorm::new(store, &format!("{n}.ln_cross"), c),
                    cross_attn: Attention::new(store, &format!("{n}.cross"), c, cfg.heads, rng)?,
                    ln_mlp: LayerNorm::new(store, &format!("{n}.ln_mlp"), c),
                    mlp: Mlp::new(store, &format!("{n}.mlp"), c, cfg.mlp_hidden, rng),
                })
            })
            .collect::<Result<_>>()?;
        let ln_out = LayerNorm::new(store, "decoder.ln_out", c);
        let out = Linear::new(store, "decoder.out", c, vocab_size, true, rng);
        Ok(Self {
            cfg,
            vocab_size,
            embed,
            pos,
            blocks,
            ln_out,
            out,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Logits `N×|vocab|` for the input ids, conditioned on `tokens` (`K×C`).
    pub fn forward(&self, tape: &mut Tape, p: &Bound, ids: &[usize], tokens: Var) -> Result<Var> {
        let n = ids.len();
        if n > self.cfg.max_len {
            return Err(Error::Length { len: n, max: self.cfg.max_len });
        }
        if n == 0 {
            return Err(Error::Precondition("empty decoder input".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::Precondition(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
        }
        let e = tape.gather_rows(p[self.embed], ids)?;
        let pos = tape.slice_rows(p[self.pos], 0, n)?;
        let mut h = tape.add(e, pos)?;
        let causal = Mask::causal(n);
        let k = tape.value(tokens).rows();
        let full = Mask::all(n, k);
        for b in &self.blocks {
            let x = b.ln_self.forward(tape, p, h)?;
            let a = b.self_attn.forward(tape, p, x, x, &causal)?;
            h = tape.add(h, a.out)?;
            let x = b.ln_cross.forward(tape, p, h)?;
            let a = b.cross_attn.forward(tape, p, x, tokens, &full)?;
            h = tape.add(h, a.out)?;
            let x = b.ln_mlp.forward(tape, p, h)?;
            let f = b.mlp.forward(tape, p, x)?;
            h = tape.add(h, f)?;
        }
        let x = self.ln_out.forward(tape, p, h)?;
        self.out.forward(tape, p, x)
    }
}

/// `−Σ_t log P(y_{t+1} | h_{1:t}, S)` over one sequence; PAD targets are
/// skipped.
pub fn mam_loss(tape: &mut Tape, logits: Var, target: &[usize]) -> Result<Var> {
    let n = tape.value(logits).rows();
    if n != target.len() {
        return Err(Error::Dimension {
            op: "mam_loss",
            lhs: tape.value(logits).shape().to_vec(),
            rhs: vec![target.len()],
        });
    }
    let next: Vec<Option<usize>> = (0..n)
        .map(|t| target.get(t + 1).copied().filter(|&y| y != PAD))
        .collect();
    tape.softmax_cross_entropy(logits, &next, None)
}

/// Mean over samples of the per-sequence loss.
pub fn mam_batch_loss(tape: &mut Tape, p: &Bound, decoder: &Decoder, batch: &[(&MaskedSample, Var)]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Config("empty masked-modeling batch".into()));
    }
    let mut total: Option<Var> = None;
    for (sample, tokens) in batch {
        let logits = decoder.forward(tape, p, &sample.input, *tokens)?;
        let l = mam_loss(tape, logits, &sample.target)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    Ok(tape.scale(total.expect("nonempty"), 1.0 / batch.len() as f64))
}
