//! Whitespace tokenization with detached punctuation, and the small amount of
//! English morphology the rules need.

use serde::{Deserialize, Serialize};

const PUNCT: &[char] = &[',', '.', '!', '?', ';', ':'];

pub fn is_punct(tok: &str) -> bool {
    tok.chars().count() == 1 && tok.chars().all(|c| PUNCT.contains(&c))
}

pub fn is_terminal(tok: &str) -> bool {
    matches!(tok, "." | "!" | "?" | ";")
}

/// Splits on whitespace and detaches trailing punctuation into one token per
/// mark. Case is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        let body = piece.trim_end_matches(PUNCT);
        if !body.is_empty() {
            out.push(body.to_string());
        }
        for c in piece[body.len()..].chars() {
            out.push(c.to_string());
        }
    }
    out
}

/// Inverse of [`tokenize`] up to whitespace: punctuation re-attaches to the
/// preceding token.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut s = String::new();
    for t in tokens {
        let t = t.as_ref();
        if !s.is_empty() && !is_punct(t) {
            s.push(' ');
        }
        s.push_str(t);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbForm {
    Base,
    ThirdPerson,
    Ing,
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

fn vowel_groups(w: &[u8]) -> usize {
    let mut n = 0;
    let mut prev = false;
    for &c in w {
        let v = is_vowel(c);
        if v && !prev {
            n += 1;
        }
        prev = v;
    }
    n
}

/// One-syllable words ending consonant–vowel–consonant double the final
/// consonant before "-ing" ("chop" → "chopping").
fn doubles_final(w: &str) -> bool {
    let b = w.as_bytes();
    let n = b.len();
    n >= 3
        && !is_vowel(b[n - 1])
        && !matches!(b[n - 1], b'w' | b'x' | b'y')
        && is_vowel(b[n - 2])
        && !is_vowel(b[n - 3])
        && vowel_groups(b) == 1
}

/// Inflects a base-form verb.
pub fn inflect(lemma: &str, form: VerbForm) -> String {
    match form {
        VerbForm::Base => lemma.to_string(),
        VerbForm::ThirdPerson => {
            if ["s", "sh", "ch", "x", "z"].iter().any(|e| lemma.ends_with(e)) {
                format!("{lemma}es")
            } else if lemma.len() > 1
                && lemma.ends_with('y')
                && !is_vowel(lemma.as_bytes()[lemma.len() - 2])
            {
                format!("{}ies", &lemma[..lemma.len() - 1])
            } else {
                format!("{lemma}s")
            }
        }
        VerbForm::Ing => {
            if lemma.ends_with('e') && !lemma.ends_with("ee") && lemma.len() > 2 {
                format!("{}ing", &lemma[..lemma.len() - 1])
            } else if doubles_final(lemma) {
                let last = &lemma[lemma.len() - 1..];
                format!("{lemma}{last}ing")
            } else {
                format!("{lemma}ing")
            }
        }
    }
}

/// Candidate `(lemma, form)` readings of a lowercase word, most literal first.
pub fn verb_readings(word: &str) -> Vec<(String, VerbForm)> {
    let mut out = vec![(word.to_string(), VerbForm::Base)];
    if let Some(stem) = word.strip_suffix("ing") {
        if !stem.is_empty() {
            out.push((stem.to_string(), VerbForm::Ing));
            out.push((format!("{stem}e"), VerbForm::Ing));
            let b = stem.as_bytes();
            if b.len() >= 2 && b[b.len() - 1] == b[b.len() - 2] {
                out.push((stem[..stem.len() - 1].to_string(), VerbForm::Ing));
            }
        }
    }
    if let Some(stem) = word.strip_suffix("ies") {
        out.push((format!("{stem}y"), VerbForm::ThirdPerson));
    }
    if let Some(stem) = word.strip_suffix("es") {
        out.push((stem.to_string(), VerbForm::ThirdPerson));
    }
    if let Some(stem) = word.strip_suffix('s') {
        if !stem.is_empty() {
            out.push((stem.to_string(), VerbForm::ThirdPerson));
        }
    }
    out
}

/// Candidate singular readings of a lowercase noun.
pub fn noun_readings(word: &str) -> Vec<String> {
    let mut out = vec![word.to_string()];
    if let Some(stem) = word.strip_suffix("ies") {
        out.push(format!("{stem}y"));
    }
    if let Some(stem) = word.strip_suffix("es") {
        out.push(stem.to_string());
    }
    if let Some(stem) = word.strip_suffix('s') {
        out.push(stem.to_string());
    }
    out
}

/// Copies the capitalization of `like` onto `word` (first letter only).
pub fn match_case(word: &str, like: &str) -> String {
    if like.chars().next().is_some_and(char::is_uppercase) {
        let mut c = word.chars();
        match c.next() {
            Some(f) => f.to_uppercase().chain(c).collect(),
            None => String::new(),
        }
    } else {
        word.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_detaches_punctuation() {
        assert_eq!(
            tokenize("Crack the egg, then whisk it."),
            ["Crack", "the", "egg", ",", "then", "whisk", "it", "."]
        );
        assert_eq!(tokenize("  "), Vec::<String>::new());
        assert_eq!(tokenize("wait...")[1..], [".", ".", "."]);
    }

    #[test]
    fn detokenize_round_trips_normal_spacing() {
        for s in ["Crack the egg, then whisk it.", "stir", "chop the onion and then fry it!"] {
            assert_eq!(detokenize(&tokenize(s)), s);
        }
    }

    #[test]
    fn inflection_table() {
        let cases = [
            ("chop", "chops", "chopping"),
            ("slice", "slices", "slicing"),
            ("whisk", "whisks", "whisking"),
            ("fry", "fries", "frying"),
            ("mix", "mixes", "mixing"),
            ("press", "presses", "pressing"),
            ("split", "splits", "splitting"),
            ("season", "seasons", "seasoning"),
            ("peel", "peels", "peeling"),
            ("add", "adds", "adding"),
            ("freeze", "freezes", "freezing"),
        ];
        for (base, s, ing) in cases {
            assert_eq!(inflect(base, VerbForm::ThirdPerson), s);
            assert_eq!(inflect(base, VerbForm::Ing), ing);
            assert!(verb_readings(s).contains(&(base.to_string(), VerbForm::ThirdPerson)));
            assert!(verb_readings(ing).contains(&(base.to_string(), VerbForm::Ing)));
        }
    }

    #[test]
    fn noun_plurals() {
        assert!(noun_readings("eggs").contains(&"egg".to_string()));
        assert!(noun_readings("tomatoes").contains(&"tomato".to_string()));
        assert!(noun_readings("cherries").contains(&"cherry".to_string()));
    }

    #[test]
    fn case_follows_source() {
        assert_eq!(match_case("whisk", "Crack"), "Whisk");
        assert_eq!(match_case("whisk", "crack"), "whisk");
    }
}
