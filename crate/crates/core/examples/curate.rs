//! Curates a few captions with the built-in lexicon and prints what survives.

use instract::curation::{curate_caption, Caption, CurateOptions, Curation, Lexicon};

fn main() -> instract::Result<()> {
    let lex = Lexicon::builtin();
    let texts = [
        "Crack the egg using the side of this ceramic mug and separate the white into the small container.",
        "hey guys welcome back to my channel",
        "Chop the onion and then fry it in the pan.",
        "Slice the tomato.",
    ];
    let opts = CurateOptions { seed: 7, ..CurateOptions::default() };
    for (i, text) in texts.iter().enumerate() {
        let c = Caption { id: format!("c{i}"), clip_id: "demo".into(), text: text.to_string(), start: 0.0, end: 1.0 };
        match curate_caption(&c, &lex, &opts)? {
            Curation::Dropped(reason) => println!("{text}\n  dropped: {}", reason.as_str()),
            Curation::Kept(rec) => {
                println!("{text}");
                let phrases: Vec<String> = rec.phrases.iter().map(|p| p.text()).collect();
                println!("  phrases: {phrases:?}");
                for n in &rec.negatives {
                    println!("  {:<13} {}", n.kind.as_str(), n.text);
                }
            }
        }
    }
    Ok(())
}
