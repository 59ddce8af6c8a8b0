use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::text::{detokenize, inflect, is_terminal, match_case, tokenize};
use super::{locate_verb_phrases, Caption, Lexicon, VerbPhrase};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    VerbAltered,
    OrderSwapped,
}

impl NegativeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::VerbAltered => "verb_altered",
            Self::OrderSwapped => "order_swapped",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "verb" | "verb_altered" => Some(Self::VerbAltered),
            "order" | "order_swapped" => Some(Self::OrderSwapped),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardNegative {
    pub source_id: String,
    pub kind: NegativeKind,
    pub text: String,
}

fn impossible(kind: NegativeKind, c: &Caption, reason: impl Into<String>) -> Error {
    Error::GenerationImpossible {
        kind: kind.as_str(),
        source_id: c.id.clone(),
        reason: reason.into(),
    }
}

fn verb_altered_with<R: Rng>(
    c: &Caption,
    phrases: &[VerbPhrase],
    lex: &Lexicon,
    rng: &mut R,
) -> Result<String> {
    let kind = NegativeKind::VerbAltered;
    if phrases.is_empty() {
        return Err(impossible(kind, c, "no verb phrase"));
    }
    let mut tokens = tokenize(&c.text);
    let located = locate_verb_phrases(&tokens, lex);
    let same = located.len() == phrases.len()
        && located.iter().zip(phrases).all(|(l, p)| l.phrase.verb == p.verb);
    if !same {
        return Err(Error::Inconsistency(format!(
            "phrases supplied for caption {:?} do not match its text",
            c.id
        )));
    }
    let target = located.choose(rng).expect("non-empty");
    let cluster = lex
        .cluster_of(&target.phrase.verb)
        .ok_or_else(|| impossible(kind, c, format!("verb {:?} has no cluster", target.phrase.verb)))?;
    let pool: Vec<&String> = (0..lex.num_clusters())
        .filter(|&k| k != cluster)
        .flat_map(|k| lex.cluster_verbs(k))
        .collect();
    let Some(&replacement) = pool.choose(rng) else {
        return Err(impossible(kind, c, "lexicon has no other verb cluster"));
    };
    let src = &tokens[target.verb_token];
    let (_, form) = lex.verb(src).expect("located verb resolves");
    tokens[target.verb_token] = match_case(&inflect(replacement, form), src);
    Ok(detokenize(&tokens))
}

/// Clauses between connector runs that precede a verb, the connector runs
/// themselves, and any terminal punctuation suffix.
struct Clauses {
    clauses: Vec<Vec<String>>,
    joints: Vec<Vec<String>>,
    suffix: Vec<String>,
}

fn split_clauses(tokens: &[String], lex: &Lexicon) -> Clauses {
    let mut end = tokens.len();
    while end > 0 && is_terminal(&tokens[end - 1]) {
        end -= 1;
    }
    let body = &tokens[..end];
    let mut clauses = Vec::new();
    let mut joints = Vec::new();
    let mut cur = Vec::new();
    let mut i = 0;
    while i < body.len() {
        if lex.is_connector(&body[i]) && !cur.is_empty() {
            let mut j = i;
            while j < body.len() && lex.is_connector(&body[j]) {
                j += 1;
            }
            if j < body.len() && lex.verb(&body[j]).is_some() {
                clauses.push(std::mem::take(&mut cur));
                joints.push(body[i..j].to_vec());
                i = j;
                continue;
            }
            cur.extend(body[i..j].iter().cloned());
            i = j;
            continue;
        }
        cur.push(body[i].clone());
        i += 1;
    }
    if !cur.is_empty() {
        clauses.push(cur);
    }
    Clauses {
        clauses,
        joints,
        suffix: tokens[end..].to_vec(),
    }
}

fn render(parts: &Clauses, order: &[usize]) -> String {
    let mut toks: Vec<String> = Vec::new();
    for (k, &ci) in order.iter().enumerate() {
        if k > 0 {
            toks.extend(parts.joints[k - 1].iter().cloned());
        }
        toks.extend(parts.clauses[ci].iter().cloned());
    }
    toks.extend(parts.suffix.iter().cloned());
    detokenize(&toks)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

const MAX_ENUMERATED_CLAUSES: usize = 7;

/// All distinct non-identity reorderings, in lexicographic permutation order.
fn order_candidates<R: Rng>(c: &Caption, lex: &Lexicon, rng: &mut R) -> Result<Vec<String>> {
    let kind = NegativeKind::OrderSwapped;
    let parts = split_clauses(&tokenize(&c.text), lex);
    let n = parts.clauses.len();
    if n < 2 {
        return Err(impossible(kind, c, "fewer than two action clauses"));
    }
    let source = render(&parts, &(0..n).collect::<Vec<_>>());
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut push = |s: String| {
        if s != source && seen.insert(s.clone()) {
            out.push(s);
        }
    };
    if n <= MAX_ENUMERATED_CLAUSES {
        for p in permutations(n).into_iter().skip(1) {
            push(render(&parts, &p));
        }
    } else {
        for _ in 0..256 {
            let mut p: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(p.as_mut_slice(), rng);
            push(render(&parts, &p));
        }
    }
    if out.is_empty() {
        return Err(impossible(kind, c, "every reordering reproduces the source text"));
    }
    Ok(out)
}

fn order_swapped_with<R: Rng>(c: &Caption, phrases: &[VerbPhrase], lex: &Lexicon, rng: &mut R) -> Result<String> {
    if phrases.len() < 2 {
        return Err(impossible(NegativeKind::OrderSwapped, c, "single-action caption"));
    }
    let cands = order_candidates(c, lex, rng)?;
    Ok(cands.choose(rng).expect("non-empty").clone())
}

/// Replaces one action verb with a verb drawn uniformly from another cluster,
/// keeping its inflection and capitalization.
pub fn gen_verb_altered(c: &Caption, phrases: &[VerbPhrase], lex: &Lexicon, seed: u64) -> Result<HardNegative> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(HardNegative {
        source_id: c.id.clone(),
        kind: NegativeKind::VerbAltered,
        text: verb_altered_with(c, phrases, lex, &mut rng)?,
    })
}

/// Re-emits the caption's action clauses in a uniformly chosen different
/// order; connectors stay in place.
pub fn gen_order_swapped(c: &Caption, phrases: &[VerbPhrase], lex: &Lexicon, seed: u64) -> Result<HardNegative> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(HardNegative {
        source_id: c.id.clone(),
        kind: NegativeKind::OrderSwapped,
        text: order_swapped_with(c, phrases, lex, &mut rng)?,
    })
}

/// Up to `count` distinct negatives of one kind from a single seeded stream.
/// Fewer are returned when the caption admits fewer distinct texts.
pub fn gen_negatives(
    c: &Caption,
    phrases: &[VerbPhrase],
    lex: &Lexicon,
    kind: NegativeKind,
    count: usize,
    seed: u64,
) -> Result<Vec<HardNegative>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texts: Vec<String> = match kind {
        NegativeKind::VerbAltered => {
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for _ in 0..count.saturating_mul(16).max(1) {
                if out.len() == count {
                    break;
                }
                let t = verb_altered_with(c, phrases, lex, &mut rng)?;
                if seen.insert(t.clone()) {
                    out.push(t);
                }
            }
            out
        }
        NegativeKind::OrderSwapped => {
            if phrases.len() < 2 {
                return Err(impossible(kind, c, "single-action caption"));
            }
            let mut cands = order_candidates(c, lex, &mut rng)?;
            rand::seq::SliceRandom::shuffle(cands.as_mut_slice(), &mut rng);
            cands.truncate(count);
            cands
        }
    };
    Ok(texts
        .into_iter()
        .map(|text| HardNegative {
            source_id: c.id.clone(),
            kind,
            text,
        })
        .collect())
}
