//! Builds a small synthetic dataset and shows one clip with its benchmark items.

use instract::synthgen::{build_dataset, Split, SynthConfig};

fn main() -> instract::Result<()> {
    let cfg = SynthConfig { train_clips: 200, eval_clips: 60, ..SynthConfig::default() };
    let data = build_dataset(&cfg, 11)?;
    println!(
        "{} train / {} eval clips, frames {}x{}x{}",
        data.split_indices(Split::Train).len(),
        data.split_indices(Split::Eval).len(),
        cfg.frames,
        cfg.patches,
        cfg.dim
    );

    let item = &data.logic[0];
    let i = data.clip_index(&item.clip_id).expect("clip of an item exists");
    let clip = &data.clips[i];
    println!("\nclip {}: {}", clip.id, clip.caption.text);
    for (s, (a, b)) in clip.steps.iter().zip(&clip.segments) {
        println!("  frames {a:>2}..{b:<2} {} {}", s.verb, s.object);
    }
    let frames = data.frames(i);
    println!("  frame tensor {:?}, lambda_obj {}", frames.shape(), clip.lambda_obj);

    println!("\nlogic item (answer {}):", item.answer);
    for c in &item.candidates {
        println!("  {c}");
    }
    let sem = data.semantic.iter().find(|s| s.clip_id == clip.id).expect("every eval clip has a semantic item");
    println!("\nsemantic item, {} candidates, e.g.:", sem.candidates.len());
    for c in sem.candidates.iter().take(3) {
        println!("  {c}");
    }
    println!("\n{} dynamics pools", data.dynamics.len());
    Ok(())
}
