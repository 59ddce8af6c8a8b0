use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::{noun_readings, verb_readings, VerbForm};
use crate::error::{Error, Result};

const DEFAULT_LEXICON: &str = include_str!("default_lexicon.json");

fn default_determiners() -> Vec<String> {
    ["the", "a", "an", "this", "that", "these", "those", "some", "your", "my"]
        .map(String::from)
        .to_vec()
}

fn default_pronouns() -> Vec<String> {
    vec!["it".into(), "them".into()]
}

/// On-disk form of a lexicon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexiconData {
    pub clusters: BTreeMap<String, Vec<String>>,
    pub nouns: Vec<String>,
    pub preps: Vec<String>,
    pub connectors: Vec<String>,
    pub blocklist: Vec<String>,
    #[serde(default)]
    pub stop_verbs: Vec<String>,
    #[serde(default = "default_determiners")]
    pub determiners: Vec<String>,
    #[serde(default = "default_pronouns")]
    pub pronouns: Vec<String>,
    #[serde(default)]
    pub cues: Vec<String>,
}

/// Validated lexicon with lookup tables.
#[derive(Clone, Debug)]
pub struct Lexicon {
    data: LexiconData,
    cluster_names: Vec<String>,
    verb_cluster: HashMap<String, usize>,
    nouns: HashSet<String>,
    preps: HashSet<String>,
    connectors: HashSet<String>,
    stop_verbs: HashSet<String>,
    determiners: HashSet<String>,
    pronouns: HashSet<String>,
    blocklist: Vec<Vec<String>>,
}

impl PartialEq for Lexicon {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

fn lower_set(v: &[String]) -> HashSet<String> {
    v.iter().map(|s| s.to_lowercase()).collect()
}

impl Lexicon {
    pub fn new(data: LexiconData) -> Result<Self> {
        let mut verb_cluster = HashMap::new();
        let mut cluster_names = Vec::new();
        for (ci, (name, verbs)) in data.clusters.iter().enumerate() {
            if verbs.len() < 2 {
                return Err(Error::Config(format!(
                    "cluster {name:?} has {} verb(s); substitution needs at least 2",
                    verbs.len()
                )));
            }
            for v in verbs {
                let v = v.to_lowercase();
                if verb_cluster.insert(v.clone(), ci).is_some() {
                    return Err(Error::Config(format!("verb {v:?} appears in two clusters")));
                }
            }
            cluster_names.push(name.clone());
        }
        let nouns = lower_set(&data.nouns);
        if let Some(v) = verb_cluster.keys().find(|v| nouns.contains(*v)) {
            return Err(Error::Config(format!("{v:?} is listed as both verb and noun")));
        }
        let blocklist = data
            .blocklist
            .iter()
            .map(|p| p.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
            .filter(|p| !p.is_empty())
            .collect();
        Ok(Self {
            cluster_names,
            verb_cluster,
            nouns,
            preps: lower_set(&data.preps),
            connectors: lower_set(&data.connectors),
            stop_verbs: lower_set(&data.stop_verbs),
            determiners: lower_set(&data.determiners),
            pronouns: lower_set(&data.pronouns),
            blocklist,
            data,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::new(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The built-in cooking lexicon: 64 verbs in 16 clusters and 57 nouns.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_LEXICON).expect("built-in lexicon is valid")
    }

    pub fn data(&self) -> &LexiconData {
        &self.data
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.data)?)
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_names.len()
    }

    pub fn cluster_names(&self) -> &[String] {
        &self.cluster_names
    }

    /// Cluster verbs in cluster order.
    pub fn cluster_verbs(&self, cluster: usize) -> &[String] {
        &self.data.clusters[&self.cluster_names[cluster]]
    }

    /// All cluster verbs, flattened in cluster order.
    pub fn verbs(&self) -> Vec<String> {
        self.data.clusters.values().flatten().cloned().collect()
    }

    pub fn cluster_of(&self, verb: &str) -> Option<usize> {
        self.verb_cluster.get(verb).copied()
    }

    /// Lemma and form of an action verb token, or `None` for anything else
    /// (including stop verbs).
    pub fn verb(&self, token: &str) -> Option<(String, VerbForm)> {
        let w = token.to_lowercase();
        if self.stop_verbs.contains(&w) {
            return None;
        }
        verb_readings(&w)
            .into_iter()
            .find(|(lemma, _)| self.verb_cluster.contains_key(lemma) && !self.stop_verbs.contains(lemma))
    }

    pub fn noun(&self, token: &str) -> Option<String> {
        let w = token.to_lowercase();
        noun_readings(&w).into_iter().find(|n| self.nouns.contains(n))
    }

    pub fn is_prep(&self, token: &str) -> bool {
        self.preps.contains(&token.to_lowercase())
    }

    pub fn is_connector(&self, token: &str) -> bool {
        self.connectors.contains(&token.to_lowercase())
    }

    pub fn is_determiner(&self, token: &str) -> bool {
        self.determiners.contains(&token.to_lowercase())
    }

    pub fn pronoun(&self, token: &str) -> Option<String> {
        let w = token.to_lowercase();
        self.pronouns.contains(&w).then_some(w)
    }

    pub fn blocklist(&self) -> &[Vec<String>] {
        &self.blocklist
    }

    pub fn is_cue(&self, token: &str) -> bool {
        let w = token.to_lowercase();
        self.data.cues.iter().any(|c| c.eq_ignore_ascii_case(&w))
    }

    /// Every word the lexicon can emit, for building closed vocabularies.
    pub fn words(&self) -> Vec<String> {
        let d = &self.data;
        let mut out: Vec<String> = self.verbs();
        for list in [&d.nouns, &d.preps, &d.connectors, &d.determiners, &d.pronouns] {
            out.extend(list.iter().cloned());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_shape() {
        let lex = Lexicon::builtin();
        assert_eq!(lex.num_clusters(), 16);
        assert_eq!(lex.verbs().len(), 64);
        assert!(lex.data().nouns.len() >= 40);
    }

    #[test]
    fn verb_forms_resolve() {
        let lex = Lexicon::builtin();
        assert_eq!(lex.verb("Whisking"), Some(("whisk".into(), VerbForm::Ing)));
        assert_eq!(lex.verb("chops"), Some(("chop".into(), VerbForm::ThirdPerson)));
        assert_eq!(lex.verb("using"), None);
        assert_eq!(lex.verb("egg"), None);
        assert_eq!(lex.noun("Eggs"), Some("egg".into()));
    }

    #[test]
    fn rejects_small_or_overlapping_clusters() {
        let mut d = Lexicon::builtin().data().clone();
        d.clusters.insert("solo".into(), vec!["taste".into()]);
        assert!(matches!(Lexicon::new(d), Err(Error::Config(_))));
        let mut d = Lexicon::builtin().data().clone();
        d.clusters.insert("dup".into(), vec!["crack".into(), "taste".into()]);
        assert!(matches!(Lexicon::new(d), Err(Error::Config(_))));
        let mut d = Lexicon::builtin().data().clone();
        d.nouns.push("stir".into());
        assert!(matches!(Lexicon::new(d), Err(Error::Config(_))));
    }
}
