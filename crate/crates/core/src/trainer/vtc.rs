use crate::error::{Error, Result};
use crate::perceiver::similarity_scores;
use crate::tensor::{Mask, Tape, Var};

/// Hard negatives of a contrastive batch, each tagged with the batch item it
/// was minted from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HnTags {
    pub sources: Vec<usize>,
}

/// Checks the batch contract on token ids: at least two items, distinct
/// captions, and no negative equal to any caption in the batch.
pub fn validate_batch(captions: &[Vec<usize>], negatives: &[(usize, Vec<usize>)]) -> Result<()> {
    let b = captions.len();
    if b < 2 {
        return Err(Error::Config(format!("contrastive batch needs at least 2 items, got {b}")));
    }
    for i in 0..b {
        for j in i + 1..b {
            if captions[i] == captions[j] {
                return Err(Error::Precondition(format!(
                    "items {i} and {j} share a caption, which would be both positive and negative"
                )));
            }
        }
    }
    for (k, (src, ids)) in negatives.iter().enumerate() {
        if *src >= b {
            return Err(Error::Precondition(format!("negative {k} names item {src} outside the batch")));
        }
        if let Some(j) = captions.iter().position(|c| c == ids) {
            return Err(Error::Precondition(format!(
                "negative {k} of item {src} is identical to the caption of item {j}"
            )));
        }
    }
    Ok(())
}

/// Symmetric InfoNCE. Video `i` ranks all `B` captions plus the negatives
/// tagged with `i`; caption `j` ranks the `B` videos. Returns the mean of the
/// two directions' per-row means.
pub fn vtc_loss(tape: &mut Tape, video: Var, text: Var, negatives: Option<(Var, &HnTags)>, temperature: f64) -> Result<Var> {
    let b = tape.value(video).rows();
    if b < 2 {
        return Err(Error::Config(format!("contrastive batch needs at least 2 items, got {b}")));
    }
    if tape.value(text).rows() != b {
        return Err(Error::Dimension {
            op: "vtc_loss",
            lhs: tape.value(video).shape().to_vec(),
            rhs: tape.value(text).shape().to_vec(),
        });
    }
    let labels: Vec<Option<usize>> = (0..b).map(Some).collect();
    let (scores, mask) = match negatives {
        Some((hn, tags)) => {
            let h = tape.value(hn).rows();
            if tags.sources.len() != h {
                return Err(Error::Dimension {
                    op: "vtc_loss negatives",
                    lhs: vec![h],
                    rhs: vec![tags.sources.len()],
                });
            }
            if let Some(&s) = tags.sources.iter().find(|&&s| s >= b) {
                return Err(Error::Precondition(format!("negative tagged with item {s} outside the batch")));
            }
            let all = tape.concat_rows(&[text, hn])?;
            let scores = similarity_scores(tape, video, all, temperature)?;
            let mask = Mask::from_fn(b, b + h, |i, j| j < b || tags.sources[j - b] == i)?;
            (scores, Some(mask))
        }
        None => (similarity_scores(tape, video, text, temperature)?, None),
    };
    let v2t = tape.softmax_cross_entropy(scores, &labels, mask.as_ref())?;
    let square = if mask.is_some() { tape.slice_cols(scores, 0, b)? } else { scores };
    let st = tape.transpose(square)?;
    let t2v = tape.softmax_cross_entropy(st, &labels, None)?;
    let both = tape.add(v2t, t2v)?;
    Ok(tape.scale(both, 0.5 / b as f64))
}
