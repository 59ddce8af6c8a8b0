//! Rule-based caption curation: keep instructional captions, parse them into
//! ordered verb phrases, and mint verb-altered and order-swapped negatives.

mod lexicon;
mod negatives;
mod pipeline;
pub mod text;

pub use lexicon::{Lexicon, LexiconData};
pub use negatives::{gen_negatives, gen_order_swapped, gen_verb_altered, HardNegative, NegativeKind};
pub use pipeline::{curate_caption, curate_jsonl, CurateOptions, CurateSummary, CuratedRecord, Curation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use text::{inflect, is_punct, tokenize, VerbForm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub id: String,
    pub clip_id: String,
    pub text: String,
    pub start: f64,
    pub end: f64,
}

impl Caption {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Precondition(format!("caption {:?} has empty text", self.id)));
        }
        if !(self.start >= 0.0 && self.end > self.start) {
            return Err(Error::Precondition(format!(
                "caption {:?} has span [{}, {}]",
                self.id, self.start, self.end
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pattern {
    #[serde(rename = "V+N")]
    VerbNoun,
    #[serde(rename = "V-ing")]
    VerbIng,
    #[serde(rename = "V+Prep+N")]
    VerbPrepNoun,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VerbPhrase {
    pub verb: String,
    pub pattern: Pattern,
    pub object: Option<String>,
    pub prep: Option<String>,
    pub order_index: usize,
}

impl VerbPhrase {
    /// Canonical short form: "crack egg", "whisking", "pour into pan".
    pub fn text(&self) -> String {
        match (self.pattern, &self.prep, &self.object) {
            (Pattern::VerbIng, _, _) => inflect(&self.verb, VerbForm::Ing),
            (Pattern::VerbPrepNoun, Some(p), Some(o)) => format!("{} {p} {o}", self.verb),
            (_, _, Some(o)) => format!("{} {o}", self.verb),
            _ => self.verb.clone(),
        }
    }
}

/// A phrase with its token positions in the caption.
#[derive(Clone, Debug, PartialEq)]
pub struct LocatedPhrase {
    pub phrase: VerbPhrase,
    pub verb_token: usize,
    /// Half-open token range from the verb through the object.
    pub span: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Kept,
    NoActionVerb,
    NoNoun,
    Blocklisted,
}

impl FilterReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Kept => "kept",
            Self::NoActionVerb => "no_action_verb",
            Self::NoNoun => "no_noun",
            Self::Blocklisted => "blocklisted",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterDecision {
    pub keep: bool,
    pub reason: FilterReason,
    /// Instructional cue words present, for the trace.
    pub cues: Vec<String>,
}

/// Keeps a caption iff it has an action verb, a noun, and no blocklisted
/// phrase; the reason is the first rule that fired.
pub fn filter_caption(c: &Caption, lex: &Lexicon) -> FilterDecision {
    let tokens = tokenize(&c.text);
    let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let cues = lower.iter().filter(|t| lex.is_cue(t)).cloned().collect();
    let reason = if !tokens.iter().any(|t| lex.verb(t).is_some()) {
        FilterReason::NoActionVerb
    } else if !tokens.iter().any(|t| lex.noun(t).is_some()) {
        FilterReason::NoNoun
    } else if lex
        .blocklist()
        .iter()
        .any(|pat| lower.windows(pat.len()).any(|w| w == pat.as_slice()))
    {
        FilterReason::Blocklisted
    } else {
        FilterReason::Kept
    };
    FilterDecision {
        keep: reason == FilterReason::Kept,
        reason,
        cues,
    }
}

fn is_stop_verb(lex: &Lexicon, tok: &str) -> bool {
    let w = tok.to_lowercase();
    text::verb_readings(&w)
        .iter()
        .any(|(l, _)| lex.data().stop_verbs.iter().any(|s| s == l))
}

/// Left-to-right scan producing one phrase per matched verb.
pub fn locate_verb_phrases(tokens: &[String], lex: &Lexicon) -> Vec<LocatedPhrase> {
    let mut out = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        let Some((lemma, form)) = lex.verb(tok) else { continue };
        let mut prep: Option<String> = None;
        let mut object: Option<(String, usize)> = None;
        for (j, t) in tokens.iter().enumerate().skip(i + 1) {
            if is_punct(t) || lex.is_connector(t) || lex.verb(t).is_some() || is_stop_verb(lex, t) {
                break;
            }
            if let Some(n) = lex.noun(t).or_else(|| lex.pronoun(t)) {
                object = Some((n, j));
                break;
            }
            if prep.is_none() && lex.is_prep(t) {
                prep = Some(t.to_lowercase());
            }
        }
        let (pattern, object, prep, end) = match object {
            Some((o, j)) if prep.is_some() => (Pattern::VerbPrepNoun, Some(o), prep, j + 1),
            Some((o, j)) => (Pattern::VerbNoun, Some(o), None, j + 1),
            None if form == VerbForm::Ing => (Pattern::VerbIng, None, None, i + 1),
            None => continue,
        };
        let order_index = out.len();
        out.push(LocatedPhrase {
            phrase: VerbPhrase {
                verb: lemma,
                pattern,
                object,
                prep,
                order_index,
            },
            verb_token: i,
            span: (i, end),
        });
    }
    out
}

/// Ordered verb phrases of a kept caption.
pub fn extract_verb_phrases(c: &Caption, lex: &Lexicon) -> Result<Vec<VerbPhrase>> {
    let phrases: Vec<VerbPhrase> = locate_verb_phrases(&tokenize(&c.text), lex)
        .into_iter()
        .map(|l| l.phrase)
        .collect();
    if phrases.is_empty() {
        return Err(Error::Inconsistency(format!(
            "no verb phrase parsed from caption {:?}: {:?}",
            c.id, c.text
        )));
    }
    Ok(phrases)
}

#[cfg(test)]
pub(crate) fn caption(text: &str) -> Caption {
    Caption {
        id: "c0".into(),
        clip_id: "v0".into(),
        text: text.into(),
        start: 0.0,
        end: 1.0,
    }
}
