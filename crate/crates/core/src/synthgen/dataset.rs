use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{generate_clip, render_caption, sample_program, ActionProgram, Step, SynthConfig, World};
use crate::curation::{Caption, Lexicon, Pattern, VerbPhrase};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMeta {
    pub verb: String,
    pub object: String,
    pub verb_id: usize,
    pub object_id: usize,
}

/// One line of `clips.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub id: String,
    pub split: Split,
    pub caption: Caption,
    pub steps: Vec<StepMeta>,
    pub segments: Vec<(usize, usize)>,
    pub lambda_obj: f64,
    /// Offset of the clip's first value in `frames.bin`, in floats.
    pub offset: usize,
    pub shape: [usize; 3],
}

impl ClipMeta {
    pub fn program(&self) -> ActionProgram {
        ActionProgram {
            steps: self
                .steps
                .iter()
                .map(|s| Step {
                    verb: s.verb_id,
                    object: s.object_id,
                })
                .collect(),
        }
    }

    pub fn phrases(&self) -> Vec<VerbPhrase> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| VerbPhrase {
                verb: s.verb.clone(),
                pattern: Pattern::VerbNoun,
                object: Some(s.object.clone()),
                prep: None,
                order_index: i,
            })
            .collect()
    }

    pub fn primary_object(&self) -> &str {
        &self.steps[0].object
    }
}

/// A multiple-choice item: one correct caption among distinct candidates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub clip_id: String,
    pub candidates: Vec<String>,
    pub answer: usize,
}

/// Clips sharing a primary object, retrieved against each other's captions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicsPool {
    pub id: String,
    pub object: String,
    pub clip_ids: Vec<String>,
    pub captions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DatasetHeader {
    seed: u64,
    config: SynthConfig,
}

/// Clips, their features, and the three benchmark pools.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: SynthConfig,
    pub seed: u64,
    pub lexicon: Lexicon,
    pub clips: Vec<ClipMeta>,
    frames: Vec<f32>,
    pub semantic: Vec<McqItem>,
    pub logic: Vec<McqItem>,
    pub dynamics: Vec<DynamicsPool>,
    by_id: HashMap<String, usize>,
}

fn index_ids(clips: &[ClipMeta]) -> HashMap<String, usize> {
    clips.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect()
}

impl Dataset {
    pub fn clip_index(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Features of clip `i` as a `T×N×C` tensor.
    pub fn frames(&self, i: usize) -> Tensor {
        let c = &self.clips[i];
        let n: usize = c.shape.iter().product();
        let data = self.frames[c.offset..c.offset + n].iter().map(|&x| f64::from(x)).collect();
        Tensor::new(&c.shape, data).expect("stored shape matches")
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.clips.len()).filter(|&i| self.clips[i].split == split).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("pools"))?;
        let header = DatasetHeader {
            seed: self.seed,
            config: self.config.clone(),
        };
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&header)?)?;
        fs::write(dir.join("lexicon.json"), self.lexicon.to_json()?)?;
        write_jsonl(&dir.join("clips.jsonl"), &self.clips)?;
        let mut f = BufWriter::new(fs::File::create(dir.join("frames.bin"))?);
        for x in &self.frames {
            f.write_all(&x.to_le_bytes())?;
        }
        f.flush()?;
        write_jsonl(&dir.join("pools/semantic.jsonl"), &self.semantic)?;
        write_jsonl(&dir.join("pools/logic.jsonl"), &self.logic)?;
        write_jsonl(&dir.join("pools/dynamics.jsonl"), &self.dynamics)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: DatasetHeader = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
        let lexicon = Lexicon::load(&dir.join("lexicon.json"))?;
        let clips: Vec<ClipMeta> = read_jsonl(&dir.join("clips.jsonl"))?;
        let bytes = fs::read(dir.join("frames.bin"))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Format("frames.bin length is not a multiple of 4".into()));
        }
        let frames: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        for c in &clips {
            let n: usize = c.shape.iter().product();
            if c.offset + n > frames.len() {
                return Err(Error::Format(format!("clip {} points past the end of frames.bin", c.id)));
            }
        }
        let by_id = index_ids(&clips);
        Ok(Self {
            config: header.config,
            seed: header.seed,
            lexicon,
            clips,
            frames,
            semantic: read_jsonl(&dir.join("pools/semantic.jsonl"))?,
            logic: read_jsonl(&dir.join("pools/logic.jsonl"))?,
            dynamics: read_jsonl(&dir.join("pools/dynamics.jsonl"))?,
            by_id,
        })
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn shuffled_item<R: Rng>(id: String, clip_id: &str, positive: String, negatives: Vec<String>, rng: &mut R) -> McqItem {
    let mut candidates = negatives;
    candidates.push(positive);
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(rng);
    let answer = order.iter().position(|&i| i == candidates.len() - 1).expect("present");
    McqItem {
        id,
        clip_id: clip_id.to_string(),
        candidates: order.into_iter().map(|i| candidates[i].clone()).collect(),
        answer,
    }
}

/// Verb-altered candidates: one random step's verb is replaced, each negative
/// drawing from a distinct cluster other than the original verb's.
fn semantic_item<R: Rng>(clip: &ClipMeta, world: &World, negatives: usize, rng: &mut R) -> Result<McqItem> {
    let program = clip.program();
    let j = rng.random_range(0..program.len());
    let own = world.verb_cluster[program.steps[j].verb];
    let others: Vec<usize> = (0..world.num_clusters())
        .filter(|&k| k != own && world.verb_cluster.contains(&k))
        .collect();
    if others.len() < negatives {
        return Err(Error::Config(format!(
            "{} other verb clusters cannot supply {negatives} distinct negatives",
            others.len()
        )));
    }
    let mut texts = Vec::with_capacity(negatives);
    for pick in index::sample(rng, others.len(), negatives) {
        let k = others[pick];
        let members: Vec<usize> = (0..world.verbs.len()).filter(|&v| world.verb_cluster[v] == k).collect();
        let mut altered = program.clone();
        altered.steps[j].verb = *members.choose(rng).expect("cluster has verbs");
        texts.push(render_caption(&altered, world).0);
    }
    Ok(shuffled_item(format!("sem-{}", clip.id), &clip.id, clip.caption.text.clone(), texts, rng))
}

fn non_identity_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    // Heap's algorithm, then sorted for a fixed order
    fn heap(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(p.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, p, out);
            let j = if k % 2 == 0 { i } else { 0 };
            p.swap(j, k - 1);
        }
    }
    heap(n, &mut p, &mut out);
    out.sort();
    out.dedup();
    out.retain(|q| q.iter().enumerate().any(|(i, &x)| i != x));
    out
}

/// Order-swapped candidates: 2 or 3 distinct reorderings of the steps.
fn logic_item<R: Rng>(clip: &ClipMeta, world: &World, rng: &mut R) -> McqItem {
    let program = clip.program();
    let perms = non_identity_permutations(program.len());
    let k = rng.random_range(2..=3).min(perms.len());
    let texts = index::sample(rng, perms.len(), k)
        .into_iter()
        .map(|pi| {
            let steps = perms[pi].iter().map(|&i| program.steps[i]).collect();
            render_caption(&ActionProgram { steps }, world).0
        })
        .collect();
    shuffled_item(format!("log-{}", clip.id), &clip.id, clip.caption.text.clone(), texts, rng)
}

/// Generates every clip, the feature file, and the benchmark pools.
pub fn build_dataset(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let lexicon = cfg.load_lexicon()?;
    let world = World::new(cfg, &lexicon, seed)?;
    if world.num_clusters() <= cfg.semantic_negatives {
        return Err(Error::Config(format!(
            "{} verb clusters cannot supply {} distinct verb-altered negatives",
            world.num_clusters(),
            cfg.semantic_negatives
        )));
    }
    let mut clips = Vec::with_capacity(cfg.train_clips + cfg.eval_clips);
    let mut frames: Vec<f32> = Vec::new();
    let specs = (0..cfg.train_clips)
        .map(|i| (format!("train-{i:05}"), Split::Train))
        .chain((0..cfg.eval_clips).map(|i| (format!("eval-{i:05}"), Split::Eval)));
    for (id, split) in specs {
        let mut prng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &id, "program"));
        let program = sample_program(cfg, &world, &mut prng);
        let clip = generate_clip(&id, &program, &world, cfg, derive_seed(seed, &id, "frames"))?;
        let offset = frames.len();
        frames.extend(clip.frames.data().iter().map(|&x| x as f32));
        clips.push(ClipMeta {
            id,
            split,
            caption: clip.caption,
            steps: program
                .steps
                .iter()
                .map(|s| StepMeta {
                    verb: world.verbs[s.verb].clone(),
                    object: world.objects[s.object].clone(),
                    verb_id: s.verb,
                    object_id: s.object,
                })
                .collect(),
            segments: clip.segments,
            lambda_obj: cfg.lambda_obj,
            offset,
            shape: [cfg.frames, cfg.patches, cfg.dim],
        });
    }

    let mut semantic = Vec::new();
    let mut logic = Vec::new();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, c) in clips.iter().enumerate().filter(|(_, c)| c.split == Split::Eval) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &c.id, "semantic"));
        semantic.push(semantic_item(c, &world, cfg.semantic_negatives, &mut rng)?);
        if c.steps.len() >= 3 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &c.id, "logic"));
            logic.push(logic_item(c, &world, &mut rng));
        }
        groups.entry(c.primary_object().to_string()).or_default().push(i);
    }
    let dynamics = groups
        .into_iter()
        .filter(|(_, members)| members.len() >= cfg.min_pool_size)
        .map(|(object, members)| DynamicsPool {
            id: format!("dyn-{object}"),
            clip_ids: members.iter().map(|&i| clips[i].id.clone()).collect(),
            captions: members.iter().map(|&i| clips[i].caption.text.clone()).collect(),
            object,
        })
        .collect();
    let by_id = index_ids(&clips);
    Ok(Dataset {
        config: cfg.clone(),
        seed,
        lexicon,
        clips,
        frames,
        semantic,
        logic,
        dynamics,
        by_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> SynthConfig {
        SynthConfig {
            train_clips: 60,
            eval_clips: 80,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn pools_follow_the_protocols() {
        let ds = build_dataset(&small(), 4).unwrap();
        assert_eq!(ds.semantic.len(), 80);
        for item in &ds.semantic {
            assert_eq!(item.candidates.len(), 10);
            let distinct: HashSet<_> = item.candidates.iter().collect();
            assert_eq!(distinct.len(), 10);
            let clip = &ds.clips[ds.clip_index(&item.clip_id).unwrap()];
            assert_eq!(item.candidates[item.answer], clip.caption.text);
        }
        assert!(!ds.logic.is_empty());
        for item in &ds.logic {
            assert!((3..=4).contains(&item.candidates.len()));
            let distinct: HashSet<_> = item.candidates.iter().collect();
            assert_eq!(distinct.len(), item.candidates.len());
        }
        for pool in &ds.dynamics {
            assert!(pool.clip_ids.len() >= 2);
            for id in &pool.clip_ids {
                let c = &ds.clips[ds.clip_index(id).unwrap()];
                assert!(c.steps.iter().any(|s| s.object == pool.object));
                assert_eq!(c.split, Split::Eval);
            }
        }
    }

    #[test]
    fn semantic_negatives_keep_objects_and_span_distinct_clusters() {
        let ds = build_dataset(&small(), 5).unwrap();
        let lex = &ds.lexicon;
        for item in &ds.semantic {
            let parsed: Vec<Vec<VerbPhrase>> = item
                .candidates
                .iter()
                .map(|t| {
                    crate::curation::extract_verb_phrases(
                        &Caption { id: "x".into(), clip_id: "x".into(), text: t.clone(), start: 0.0, end: 1.0 },
                        lex,
                    )
                    .unwrap()
                })
                .collect();
            let objects = |p: &Vec<VerbPhrase>| p.iter().map(|x| x.object.clone()).collect::<Vec<_>>();
            assert!(parsed.iter().all(|p| objects(p) == objects(&parsed[0])));
            let pos = &parsed[item.answer];
            let j = parsed
                .iter()
                .enumerate()
                .find(|(i, _)| *i != item.answer)
                .map(|(_, p)| p.iter().zip(pos).position(|(a, b)| a.verb != b.verb).unwrap())
                .unwrap();
            let clusters: HashSet<usize> = parsed.iter().map(|p| lex.cluster_of(&p[j].verb).unwrap()).collect();
            assert_eq!(clusters.len(), 10);
        }
    }

    #[test]
    fn train_and_eval_are_disjoint() {
        let ds = build_dataset(&small(), 6).unwrap();
        let train: HashSet<_> = ds.split_indices(Split::Train).into_iter().map(|i| &ds.clips[i].id).collect();
        let eval: HashSet<_> = ds.split_indices(Split::Eval).into_iter().map(|i| &ds.clips[i].id).collect();
        assert_eq!(train.len(), 60);
        assert_eq!(eval.len(), 80);
        assert!(train.is_disjoint(&eval));
    }

    #[test]
    fn too_few_clusters_is_a_config_error() {
        let cfg = SynthConfig { n_verbs: 32, ..small() };
        assert!(matches!(build_dataset(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn write_is_byte_deterministic_and_loads_back() {
        let cfg = SynthConfig {
            train_clips: 10,
            eval_clips: 12,
            ..SynthConfig::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        build_dataset(&cfg, 8).unwrap().write(a.path()).unwrap();
        build_dataset(&cfg, 8).unwrap().write(b.path()).unwrap();
        for f in ["config.json", "lexicon.json", "clips.jsonl", "frames.bin", "pools/semantic.jsonl", "pools/logic.jsonl", "pools/dynamics.jsonl"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let ds = Dataset::load(a.path()).unwrap();
        let fresh = build_dataset(&cfg, 8).unwrap();
        assert_eq!(ds.clips, fresh.clips);
        assert_eq!(ds.frames(3), fresh.frames(3));
        assert_eq!(ds.semantic, fresh.semantic);
    }

    #[test]
    fn permutation_counts() {
        assert_eq!(non_identity_permutations(3).len(), 5);
        assert_eq!(non_identity_permutations(4).len(), 23);
    }
}
