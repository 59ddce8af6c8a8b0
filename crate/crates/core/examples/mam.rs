//! Masked action modeling: verbs are masked and a small decoder learns to fill
//! them back in from action tokens.

use instract::curation::Lexicon;
use instract::mam::{encode_caption, mam_batch_loss, mask_caption, Decoder, DecoderConfig, Vocab};
use instract::nn::{Optimizer, OptimizerKind, ParamStore};
use instract::tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> instract::Result<()> {
    let lex = Lexicon::builtin();
    let captions = ["crack the egg and then whisk the yolk", "pour the milk into the bowl", "chop the onion then fry the onion"];
    let words = lex.words();
    let vocab = Vocab::build(captions.iter().copied().chain(words.iter().map(String::as_str)));

    let mut samples = Vec::new();
    for (i, c) in captions.iter().enumerate() {
        let (ids, verbs) = encode_caption(&vocab, &lex, c)?;
        let s = mask_caption(&ids, &verbs, 1.0, i as u64)?.expect("every caption has a verb");
        let shown: Vec<&str> = s.input.iter().map(|&t| vocab.token(t).unwrap_or("?")).collect();
        println!("{}", shown.join(" "));
        samples.push(s);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let cfg = DecoderConfig { dim: 16, layers: 2, heads: 2, max_len: 16, mlp_hidden: 32 };
    let dec = Decoder::new(&mut store, cfg, vocab.len(), &mut rng)?;
    let tokens: Vec<Tensor> = (0..captions.len()).map(|_| Tensor::randn(&[4, 16], 1.0, &mut rng)).collect();
    let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-2, 0.0, 0.0, &store);
    for step in 0..=200 {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, true);
        let batch: Vec<_> = samples.iter().zip(&tokens).map(|(s, t)| (s, tape.constant(t.clone()))).collect();
        let loss = mam_batch_loss(&mut tape, &p, &dec, &batch)?;
        if step % 50 == 0 {
            println!("step {step:>3} loss {:.4}", tape.value(loss).item());
        }
        tape.backward(loss)?;
        let grads = store.grads(&tape, &p);
        opt.update(&mut store, &grads);
    }
    Ok(())
}
