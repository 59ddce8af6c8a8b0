use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Bound, Linear, ParamId, ParamStore};
use crate::tensor::{Tape, Var};

/// Token embedding plus a learned position table, squashed, mean-pooled and
/// projected to the shared width.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    embed: ParamId,
    pos: ParamId,
    proj: Linear,
    max_len: usize,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, vocab_size: usize, dim: usize, max_len: usize, rng: &mut R) -> Self {
        Self {
            embed: store.add_randn("text.embed", &[vocab_size, dim], 1.0, rng),
            pos: store.add_randn("text.pos", &[max_len, dim], 1.0, rng),
            proj: Linear::new(store, "text.proj", dim, dim, true, rng),
            max_len,
        }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// One row per id sequence.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, seqs: &[Vec<usize>]) -> Result<Var> {
        let spans: Vec<Vec<(usize, usize)>> = seqs.iter().map(|s| vec![(0, s.len())]).collect();
        self.encode_spans(tape, p, seqs, &spans)
    }

    /// Phrase rows in span order, either pooled in context or with each span
    /// encoded as its own text.
    pub fn encode_phrases(
        &self,
        tape: &mut Tape,
        p: &Bound,
        seqs: &[Vec<usize>],
        spans: &[Vec<(usize, usize)>],
        in_context: bool,
    ) -> Result<Var> {
        if in_context {
            return self.encode_spans(tape, p, seqs, spans);
        }
        if seqs.len() != spans.len() {
            return Err(Error::Precondition("need one span list per text".into()));
        }
        let mut alone = Vec::new();
        for (s, sp) in seqs.iter().zip(spans) {
            for &(a, b) in sp {
                if a >= b || b > s.len() {
                    return Err(Error::Precondition(format!("span {a}..{b} outside {} tokens", s.len())));
                }
                alone.push(s[a..b].to_vec());
            }
        }
        self.encode(tape, p, &alone)
    }

    /// One row per half-open token span, pooled from the hidden states of the
    /// whole sequence so each row keeps its position in context.
    pub fn encode_spans(&self, tape: &mut Tape, p: &Bound, seqs: &[Vec<usize>], spans: &[Vec<(usize, usize)>]) -> Result<Var> {
        if seqs.is_empty() || seqs.len() != spans.len() {
            return Err(Error::Precondition("need one span list per text".into()));
        }
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut segments = Vec::new();
        for (s, sp) in seqs.iter().zip(spans) {
            if s.is_empty() {
                return Err(Error::Precondition("empty text".into()));
            }
            if s.len() > self.max_len {
                return Err(Error::Length { len: s.len(), max: self.max_len });
            }
            for &(a, b) in sp {
                if a >= b || b > s.len() {
                    return Err(Error::Precondition(format!("span {a}..{b} outside {} tokens", s.len())));
                }
                segments.push((ids.len() + a, b - a));
            }
            ids.extend_from_slice(s);
            positions.extend(0..s.len());
        }
        if segments.is_empty() {
            return Err(Error::Precondition("no spans to encode".into()));
        }
        let e = tape.gather_rows(p[self.embed], &ids)?;
        let q = tape.gather_rows(p[self.pos], &positions)?;
        let h = tape.add(e, q)?;
        let h = tape.tanh(h);
        let pooled = tape.segment_mean(h, &segments)?;
        self.proj.forward(tape, p, pooled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn enc() -> (ParamStore, TextEncoder) {
        let mut store = ParamStore::new();
        let e = TextEncoder::new(&mut store, 9, 6, 5, &mut ChaCha8Rng::seed_from_u64(0));
        (store, e)
    }

    fn rows(store: &ParamStore, e: &TextEncoder, seqs: &[Vec<usize>]) -> Tensor {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let v = e.encode(&mut tape, &p, seqs).unwrap();
        tape.value(v).clone()
    }

    #[test]
    fn batched_rows_match_single_encodings() {
        let (store, e) = enc();
        let seqs = vec![vec![4, 5, 6], vec![7], vec![8, 4, 4, 5, 6]];
        let all = rows(&store, &e, &seqs);
        assert_eq!(all.shape(), &[3, 6]);
        for (i, s) in seqs.iter().enumerate() {
            assert_eq!(rows(&store, &e, std::slice::from_ref(s)).row(0), all.row(i));
        }
    }

    #[test]
    fn word_order_matters() {
        let (store, e) = enc();
        let a = rows(&store, &e, &[vec![4, 5, 6, 7]]);
        let b = rows(&store, &e, &[vec![6, 7, 4, 5]]);
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn full_span_equals_plain_encoding() {
        let (store, e) = enc();
        let seqs = vec![vec![4, 5, 6, 7]];
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let whole = e.encode_spans(&mut tape, &p, &seqs, &[vec![(0, 4)]]).unwrap();
        let parts = e.encode_spans(&mut tape, &p, &seqs, &[vec![(0, 2), (2, 4)]]).unwrap();
        assert_eq!(tape.value(whole), &rows(&store, &e, &seqs));
        assert_eq!(tape.value(parts).shape(), &[2, 6]);
        // the same words at other positions pool differently
        let moved = e.encode_spans(&mut tape, &p, &[vec![6, 7, 4, 5]], &[vec![(2, 4)]]).unwrap();
        assert_ne!(tape.value(moved).row(0), tape.value(parts).row(0));
    }

    #[test]
    fn standalone_phrases_ignore_their_position() {
        let (store, e) = enc();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let a = e.encode_phrases(&mut tape, &p, &[vec![4, 5, 6, 7]], &[vec![(0, 2), (2, 4)]], false).unwrap();
        let b = e.encode_phrases(&mut tape, &p, &[vec![6, 7, 4, 5]], &[vec![(0, 2), (2, 4)]], false).unwrap();
        assert_eq!(tape.value(a).row(0), tape.value(b).row(1));
        assert_eq!(tape.value(a).row(1), &rows(&store, &e, &[vec![6, 7]]).row(0)[..]);
    }

    #[test]
    fn length_guard() {
        let (store, e) = enc();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        assert!(matches!(e.encode(&mut tape, &p, &[vec![4; 6]]), Err(Error::Length { len: 6, max: 5 })));
    }

    #[test]
    fn encoder_gradcheck() {
        let (store, e) = enc();
        let err = gradcheck(
            |t, v| {
                let p = Bound::from_vars(v.to_vec());
                let out = e.encode(t, &p, &[vec![4, 5, 4], vec![8, 1]])?;
                let sq = t.mul(out, out)?;
                Ok(t.sum(sq))
            },
            store.tensors(),
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
