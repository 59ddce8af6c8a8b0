use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{extract_verb_phrases, filter_caption, gen_negatives, Caption, FilterReason, Lexicon, NegativeKind, VerbPhrase};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct CurateOptions {
    pub seed: u64,
    pub kinds: Vec<NegativeKind>,
    /// Negatives generated per kind per caption.
    pub per_kind: usize,
}

impl Default for CurateOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            kinds: vec![NegativeKind::VerbAltered, NegativeKind::OrderSwapped],
            per_kind: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeRecord {
    pub kind: NegativeKind,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuratedRecord {
    #[serde(flatten)]
    pub caption: Caption,
    pub phrases: Vec<VerbPhrase>,
    pub negatives: Vec<NegativeRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Curation {
    Dropped(FilterReason),
    Kept(CuratedRecord),
}

/// Filters, parses, and mints negatives for one caption. Order-swapped
/// negatives are skipped for single-action captions.
pub fn curate_caption(c: &Caption, lex: &Lexicon, opts: &CurateOptions) -> Result<Curation> {
    c.validate()?;
    let decision = filter_caption(c, lex);
    if !decision.keep {
        return Ok(Curation::Dropped(decision.reason));
    }
    let phrases = extract_verb_phrases(c, lex)?;
    let mut negatives = Vec::new();
    for &kind in &opts.kinds {
        if kind == NegativeKind::OrderSwapped && phrases.len() < 2 {
            continue;
        }
        let seed = derive_seed(opts.seed, &c.id, kind.as_str());
        match gen_negatives(c, &phrases, lex, kind, opts.per_kind, seed) {
            Ok(ns) => negatives.extend(ns.into_iter().map(|n| NegativeRecord { kind, text: n.text })),
            Err(Error::GenerationImpossible { reason, .. }) if kind == NegativeKind::OrderSwapped => {
                log::debug!("caption {}: no order-swapped negative ({reason})", c.id);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Curation::Kept(CuratedRecord {
        caption: c.clone(),
        phrases,
        negatives,
    }))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CurateSummary {
    pub read: usize,
    pub kept: usize,
    pub dropped: BTreeMap<String, usize>,
    pub negatives: BTreeMap<String, usize>,
}

/// Streams caption JSON lines to curated JSON lines. Blank lines are skipped.
pub fn curate_jsonl<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    lex: &Lexicon,
    opts: &CurateOptions,
) -> Result<CurateSummary> {
    let mut summary = CurateSummary::default();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: Caption = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        summary.read += 1;
        match curate_caption(&c, lex, opts)? {
            Curation::Dropped(reason) => {
                *summary.dropped.entry(reason.as_str().to_string()).or_default() += 1;
            }
            Curation::Kept(rec) => {
                summary.kept += 1;
                for n in &rec.negatives {
                    *summary.negatives.entry(n.kind.as_str().to_string()).or_default() += 1;
                }
                serde_json::to_writer(&mut output, &rec)?;
                output.write_all(b"\n")?;
            }
        }
    }
    output.flush()?;
    Ok(summary)
}
