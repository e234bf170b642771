//! Seeded synthetic retrieval collections.
//!
//! Words are grouped into topics. Each entity is described by a few
//! documents, and each document covers several topics about its entity, one
//! sentence per topic. An intent is an (entity, topic) pair answered by
//! exactly one document; its queries name the entity plus words drawn from the
//! topic vocabulary, which need not occur in the document itself. Matching a
//! query therefore needs both the entity and some notion of which words
//! belong together.
//!
//! Intents are split into training and held-out sets. Hard negatives for a
//! training intent are other documents about the same entity or the same
//! topic.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use std::path::{Path, PathBuf};

use crate::corpus::{
    write_corpus, write_qrels, write_queries, write_triples, Corpus, Document, Qrels, Query,
    TrainingTriple,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_docs: usize,
    pub docs_per_entity: usize,
    pub n_topics: usize,
    pub topic_vocab: usize,
    /// Topic words per sentence.
    pub sentence_words: usize,
    pub min_intents: usize,
    pub max_intents: usize,
    /// Topic words per query, besides the entity name.
    pub query_words: usize,
    /// Held-out queries drawn per held-out intent.
    pub dev_queries_per_intent: usize,
    pub train_fraction: f64,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_docs: 500,
            docs_per_entity: 5,
            n_topics: 40,
            topic_vocab: 15,
            sentence_words: 6,
            min_intents: 2,
            max_intents: 3,
            query_words: 1,
            dev_queries_per_intent: 3,
            train_fraction: 0.6,
            negatives: 7,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.n_docs == 0
            || self.docs_per_entity == 0
            || self.topic_vocab == 0
            || self.sentence_words == 0
        {
            return bad("synthetic sizes must be positive");
        }
        if self.min_intents == 0 || self.min_intents > self.max_intents {
            return bad("need 1 <= min_intents <= max_intents");
        }
        if self.docs_per_entity * self.max_intents > self.n_topics {
            return bad("n_topics must cover docs_per_entity * max_intents distinct topics");
        }
        if self.query_words == 0 || self.dev_queries_per_intent == 0 {
            return bad("query_words and dev_queries_per_intent must be positive");
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad("train_fraction must lie in [0, 1]");
        }
        if self.n_docs <= self.negatives {
            return bad("n_docs must exceed negatives");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub corpus: Corpus,
    pub train_triples: Vec<TrainingTriple>,
    pub train_queries: Vec<Query>,
    pub dev_queries: Vec<Query>,
    pub dev_qrels: Qrels,
    /// Fresh wordings of training intents (`P{intent}-{j}`), drawn from a
    /// separate random stream so the rest of the dataset does not depend on
    /// them.
    pub train_paraphrases: Vec<Query>,
    pub train_paraphrase_qrels: Qrels,
}

/// File names used by [`SyntheticDataset::write`].
pub mod files {
    pub const CORPUS: &str = "corpus.tsv";
    pub const TRIPLES: &str = "train_triples.jsonl";
    pub const TRAIN_QUERIES: &str = "train_queries.tsv";
    pub const DEV_QUERIES: &str = "dev_queries.tsv";
    pub const DEV_QRELS: &str = "dev_qrels.txt";
}

impl SyntheticDataset {
    /// Writes the collection into `dir`; returns the directory.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        write_corpus(&dir.join(files::CORPUS), &self.corpus)?;
        write_triples(&dir.join(files::TRIPLES), &self.train_triples)?;
        write_queries(&dir.join(files::TRAIN_QUERIES), &self.train_queries)?;
        write_queries(&dir.join(files::DEV_QUERIES), &self.dev_queries)?;
        write_qrels(&dir.join(files::DEV_QRELS), &self.dev_qrels)?;
        Ok(dir.to_path_buf())
    }

    /// Points a pipeline config's inputs at a directory written by [`Self::write`].
    pub fn wire_paths(dir: &Path, paths: &mut crate::pipeline::Paths) {
        paths.corpus = Some(dir.join(files::CORPUS));
        paths.triples = Some(dir.join(files::TRIPLES));
        paths.queries = Some(dir.join(files::DEV_QUERIES));
        paths.qrels = Some(dir.join(files::DEV_QRELS));
    }
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "kr", "pl",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn pseudo_words(
    n: usize,
    syllables: usize,
    rng: &mut ChaCha8Rng,
    taken: &mut BTreeSet<String>,
) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w: String = (0..syllables)
            .map(|_| {
                format!(
                    "{}{}",
                    ONSETS.choose(rng).unwrap(),
                    VOWELS.choose(rng).unwrap()
                )
            })
            .collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

struct Intent {
    doc: usize,
    entity: usize,
    topic: usize,
}

struct World {
    entities: Vec<String>,
    vocab: Vec<Vec<String>>,
    zipf: WeightedIndex<f64>,
}

impl World {
    fn topic_words(&self, topic: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<&str> {
        (0..n)
            .map(|_| self.vocab[topic][rng.sample(&self.zipf)].as_str())
            .collect()
    }

    fn query(&self, it: &Intent, n: usize, rng: &mut ChaCha8Rng) -> String {
        let mut words = self.topic_words(it.topic, n, rng);
        words.insert(rng.gen_range(0..=words.len()), &self.entities[it.entity]);
        words.join(" ")
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_entities = cfg.n_docs.div_ceil(cfg.docs_per_entity);
    let mut taken = BTreeSet::new();
    let entities = pseudo_words(n_entities, 3, &mut rng, &mut taken);
    let vocab: Vec<Vec<String>> = (0..cfg.n_topics)
        .map(|_| pseudo_words(cfg.topic_vocab, 2, &mut rng, &mut taken))
        .collect();
    let weights: Vec<f64> = (1..=cfg.topic_vocab).map(|r| 1.0 / r as f64).collect();
    let world = World {
        entities,
        vocab,
        zipf: WeightedIndex::new(&weights).expect("positive weights"),
    };

    let mut docs = Vec::with_capacity(cfg.n_docs);
    let mut intents = Vec::new();
    for e in 0..n_entities {
        let mut topics: Vec<usize> = (0..cfg.n_topics).collect();
        topics.shuffle(&mut rng);
        let mut topics = topics.into_iter();
        for _ in 0..cfg.docs_per_entity {
            let d = docs.len();
            if d == cfg.n_docs {
                break;
            }
            let n_int = rng.gen_range(cfg.min_intents..=cfg.max_intents);
            let mut sentences = Vec::with_capacity(n_int);
            for topic in topics.by_ref().take(n_int) {
                let mut words = world.topic_words(topic, cfg.sentence_words, &mut rng);
                words.insert(rng.gen_range(0..=words.len()), &world.entities[e]);
                sentences.push(words.join(" "));
                intents.push(Intent {
                    doc: d,
                    entity: e,
                    topic,
                });
            }
            docs.push(Document::new(format!("D{d:05}"), &sentences.join(" "))?);
        }
    }

    let mut by_entity: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut by_topic: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for it in &intents {
        by_entity.entry(it.entity).or_default().insert(it.doc);
        by_topic.entry(it.topic).or_default().insert(it.doc);
    }

    let mut order: Vec<usize> = (0..intents.len()).collect();
    order.shuffle(&mut rng);
    let n_train = (intents.len() as f64 * cfg.train_fraction).round() as usize;
    let mut train_triples = Vec::new();
    let mut train_queries = Vec::new();
    let mut dev_queries = Vec::new();
    let mut dev_qrels = Qrels::new();
    let mut para_rng = ChaCha8Rng::seed_from_u64(crate::text::derive_seed(cfg.seed, "paraphrase"));
    let mut train_paraphrases = Vec::new();
    let mut train_paraphrase_qrels = Qrels::new();
    for (rank, &i) in order.iter().enumerate() {
        let it = &intents[i];
        if rank < n_train {
            let query = Query::new(
                format!("T{i:05}"),
                &world.query(it, cfg.query_words, &mut rng),
            )?;
            let mut pool: Vec<usize> = by_entity[&it.entity]
                .union(&by_topic[&it.topic])
                .copied()
                .filter(|&d| d != it.doc)
                .collect();
            pool.shuffle(&mut rng);
            while pool.len() < cfg.negatives {
                let d = rng.gen_range(0..docs.len());
                if d != it.doc && !pool.contains(&d) {
                    pool.push(d);
                }
            }
            pool.truncate(cfg.negatives);
            train_triples.push(TrainingTriple {
                query: query.clone(),
                positive: docs[it.doc].clone(),
                negatives: pool.into_iter().map(|d| docs[d].clone()).collect(),
            });
            train_queries.push(query);
            for j in 0..cfg.dev_queries_per_intent {
                let q = Query::new(
                    format!("P{i:05}-{j}"),
                    &world.query(it, cfg.query_words, &mut para_rng),
                )?;
                train_paraphrase_qrels.insert(&q.query_id, &docs[it.doc].doc_id, 1)?;
                train_paraphrases.push(q);
            }
        } else {
            for j in 0..cfg.dev_queries_per_intent {
                let query = Query::new(
                    format!("V{i:05}-{j}"),
                    &world.query(it, cfg.query_words, &mut rng),
                )?;
                dev_qrels.insert(&query.query_id, &docs[it.doc].doc_id, 1)?;
                dev_queries.push(query);
            }
        }
    }
    dev_queries.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    train_queries.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    train_paraphrases.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    train_triples.sort_by(|a, b| a.query.query_id.cmp(&b.query.query_id));

    Ok(SyntheticDataset {
        corpus: Corpus::new(docs)?,
        train_triples,
        train_queries,
        dev_queries,
        dev_qrels,
        train_paraphrases,
        train_paraphrase_qrels,
    })
}
