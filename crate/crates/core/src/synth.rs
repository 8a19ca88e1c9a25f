//! A small synthetic world for desk-scale experiments.
//!
//! Each class owns a set of pseudo-words whose vectors scatter around a
//! class mean; a shared pool of filler words carries no class signal.
//! Sentences mix class words with fillers, so a sentence embedding (the
//! mean of its word vectors) lands near its class mean. Class words come
//! in synonym groups, which makes thesaurus and nearest-neighbour
//! replacement label-preserving.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::Thesaurus;
use crate::corpus::{Dataset, LabeledSample, Role};
use crate::embed::EmbeddingStore;
use crate::error::CorpusError;
use crate::rng::KeyedRng;

pub const FILLERS: &[&str] = &[
    "the", "patient", "reports", "feels", "because", "often", "and", "with", "after", "during",
    "some", "mild", "it", "is", "my", "very", "since", "again", "of", "when",
];

const BASE_LABELS: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
];
const NOVEL_LABELS: &[&str] = &[
    "kappa", "lambda", "omicron", "sigma", "tau", "upsilon", "phi", "omega",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub dim: usize,
    pub base_classes: usize,
    pub novel_classes: usize,
    pub base_per_class: usize,
    pub novel_per_class: usize,
    /// Synonym groups per class, each of `group_size` words.
    pub groups_per_class: usize,
    pub group_size: usize,
    pub class_words_per_sentence: usize,
    pub fillers_per_sentence: usize,
    /// Norm of each class mean.
    pub class_scale: f64,
    /// Per-coordinate standard deviation of word vectors around their mean.
    pub word_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            dim: 16,
            base_classes: 3,
            novel_classes: 3,
            base_per_class: 20,
            novel_per_class: 30,
            groups_per_class: 3,
            group_size: 4,
            class_words_per_sentence: 3,
            fillers_per_sentence: 3,
            class_scale: 1.0,
            word_noise: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub base: Dataset,
    pub novel: Dataset,
    pub words: Vec<(String, Vec<f64>)>,
    /// Same vocabulary with each word pulled halfway to its synonym-group
    /// centroid.
    pub counter_fitted: Vec<(String, Vec<f64>)>,
    pub synonyms: Vec<Vec<String>>,
}

/// Paths written by [`SynthWorld::write`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthFiles {
    pub base: PathBuf,
    pub novel: PathBuf,
    pub vectors: PathBuf,
    pub counter_fitted: PathBuf,
    pub synonyms: PathBuf,
}

fn gaussian(rng: &mut KeyedRng, dim: usize, sd: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            x * sd
        })
        .collect()
}

fn pseudo_word(rng: &mut KeyedRng) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut w = String::new();
    for _ in 0..3 {
        w.push(*C.choose(rng).unwrap() as char);
        w.push(*V.choose(rng).unwrap() as char);
    }
    w
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct ClassWords {
    label: String,
    words: Vec<String>,
}

impl SynthWorld {
    pub fn generate(config: &SynthConfig) -> Result<Self, CorpusError> {
        let cfg = config.clone();
        let n_classes = cfg.base_classes + cfg.novel_classes;
        if cfg.base_classes > BASE_LABELS.len() || cfg.novel_classes > NOVEL_LABELS.len() {
            return Err(CorpusError::TooFewClasses(n_classes));
        }
        let mut rng = KeyedRng::new(cfg.seed, "synth", "world");
        let mut taken: HashSet<String> = FILLERS.iter().map(|s| s.to_string()).collect();
        let mut words = Vec::new();
        let mut counter_fitted = Vec::new();
        let mut synonyms = Vec::new();
        let mut classes = Vec::new();

        for f in FILLERS {
            let v = gaussian(&mut rng, cfg.dim, cfg.word_noise);
            words.push((f.to_string(), v.clone()));
            counter_fitted.push((f.to_string(), v));
        }
        let labels = BASE_LABELS[..cfg.base_classes]
            .iter()
            .chain(&NOVEL_LABELS[..cfg.novel_classes]);
        for label in labels {
            let mut mean = gaussian(&mut rng, cfg.dim, 1.0);
            let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
            mean.iter_mut().for_each(|x| *x *= cfg.class_scale / norm);
            let mut class_words = Vec::new();
            for _ in 0..cfg.groups_per_class {
                let mut group = Vec::new();
                let mut vecs = Vec::new();
                while group.len() < cfg.group_size {
                    let w = pseudo_word(&mut rng);
                    if !taken.insert(w.clone()) {
                        continue;
                    }
                    let noise = gaussian(&mut rng, cfg.dim, cfg.word_noise);
                    vecs.push(
                        mean.iter()
                            .zip(&noise)
                            .map(|(m, e)| m + e)
                            .collect::<Vec<f64>>(),
                    );
                    group.push(w);
                }
                let centroid: Vec<f64> = (0..cfg.dim)
                    .map(|k| vecs.iter().map(|v| v[k]).sum::<f64>() / vecs.len() as f64)
                    .collect();
                for (w, v) in group.iter().zip(&vecs) {
                    let cf = v
                        .iter()
                        .zip(&centroid)
                        .map(|(a, b)| 0.5 * (a + b))
                        .collect();
                    words.push((w.clone(), v.clone()));
                    counter_fitted.push((w.clone(), cf));
                }
                class_words.extend(group.iter().cloned());
                synonyms.push(group);
            }
            classes.push(ClassWords {
                label: label.to_string(),
                words: class_words,
            });
        }

        let sentence = |rng: &mut KeyedRng, cw: &ClassWords| -> String {
            let mut toks: Vec<&str> = cw
                .words
                .choose_multiple(rng, cfg.class_words_per_sentence)
                .map(String::as_str)
                .collect();
            for _ in 0..cfg.fillers_per_sentence {
                toks.push(FILLERS[rng.random_range(0..FILLERS.len())]);
            }
            toks.shuffle(rng);
            format!("{}.", capitalize(&toks.join(" ")))
        };
        let mut base = Vec::new();
        let mut novel = Vec::new();
        for (c, cw) in classes.iter().enumerate() {
            let (prefix, n, out) = if c < cfg.base_classes {
                ("b", cfg.base_per_class, &mut base)
            } else {
                ("n", cfg.novel_per_class, &mut novel)
            };
            for i in 0..n {
                let text = sentence(&mut rng, cw);
                out.push(LabeledSample::new(
                    format!("{prefix}{c}-{i:03}"),
                    text,
                    cw.label.clone(),
                ));
            }
        }
        Ok(SynthWorld {
            config: cfg,
            base: Dataset::new(base, Role::Base)?,
            novel: Dataset::new(novel, Role::Novel)?,
            words,
            counter_fitted,
            synonyms,
        })
    }

    pub fn word_store(&self) -> EmbeddingStore {
        EmbeddingStore::from_words(self.words.clone(), "synthetic")
            .expect("synthetic vectors are non-zero and of one dimension")
            .0
    }

    pub fn counter_fitted_store(&self) -> EmbeddingStore {
        EmbeddingStore::from_words(self.counter_fitted.clone(), "synthetic-counter-fitted")
            .expect("synthetic vectors are non-zero and of one dimension")
            .0
    }

    pub fn thesaurus(&self) -> Thesaurus {
        Thesaurus::from_pairs(
            self.synonyms
                .iter()
                .map(|g| (g[0].clone(), g[1..].to_vec())),
            "synthetic",
        )
    }

    /// Writes both datasets as JSONL, both vector tables in word2vec text
    /// format and the synonym table.
    pub fn write(&self, dir: &Path) -> Result<SynthFiles, CorpusError> {
        std::fs::create_dir_all(dir)?;
        let files = SynthFiles {
            base: dir.join("base.jsonl"),
            novel: dir.join("novel.jsonl"),
            vectors: dir.join("vectors.txt"),
            counter_fitted: dir.join("counter_fitted.txt"),
            synonyms: dir.join("synonyms.tsv"),
        };
        self.base.write_jsonl(&files.base)?;
        self.novel.write_jsonl(&files.novel)?;
        write_word2vec(&files.vectors, &self.words)?;
        write_word2vec(&files.counter_fitted, &self.counter_fitted)?;
        let mut w = BufWriter::new(File::create(&files.synonyms)?);
        for g in &self.synonyms {
            writeln!(w, "{}\t{}", g[0], g[1..].join(","))?;
        }
        w.flush()?;
        Ok(files)
    }
}

fn write_word2vec(path: &Path, rows: &[(String, Vec<f64>)]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dim = rows.first().map_or(0, |r| r.1.len());
    writeln!(w, "{} {}", rows.len(), dim)?;
    for (word, v) in rows {
        write!(w, "{word}")?;
        for x in v {
            write!(w, " {x}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}
