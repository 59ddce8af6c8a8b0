//! Windowed latent queries: each action token only sees its own stretch of frames.

use instract::nn::ParamStore;
use instract::perceiver::{Perceiver, PerceiverConfig};
use instract::tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> instract::Result<()> {
    let cfg = PerceiverConfig { frames: 16, patches: 4, dim: 16, latents: 4, ..PerceiverConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let per = Perceiver::new(&mut store, cfg.clone(), &mut rng)?;
    println!("window {} frames, centres {:?}", per.window(), per.centers());

    let frames = Tensor::randn(&[cfg.frames, cfg.patches, cfg.dim], 1.0, &mut rng);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let v = tape.constant(frames);
    let out = per.student_forward(&mut tape, &p, v)?;
    println!("action tokens {:?}", tape.value(out.tokens).shape());

    // attention mass per frame, summed over patches
    let w = tape.value(out.weights[0]);
    for k in 0..cfg.latents {
        let row = w.row(k);
        let per_frame: Vec<String> = (0..cfg.frames)
            .map(|t| {
                let m: f64 = row[t * cfg.patches..(t + 1) * cfg.patches].iter().sum();
                if m == 0.0 { "  . ".into() } else { format!("{m:.2}") }
            })
            .collect();
        println!("latent {k}: {}", per_frame.join(" "));
    }
    Ok(())
}
