//! Surrogate pseudo-query generator.
//!
//! Each document's terms are weighted by tf-idf against the fitted corpus.
//! A query is decoded as a prefix template followed by content terms, where
//! every choice is drawn from the top-`top_k` candidates only.

use std::collections::{BTreeMap, HashMap};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, GeneratedQuerySet};
use crate::error::{Error, Result};
use crate::text::{stable_hash, tokenize};

/// Prefix templates in prior order. With `top_k = 1` only the first is used.
pub const DEFAULT_TEMPLATES: &[&str] = &[
    "what is",
    "how does",
    "what are the",
    "when was",
    "where is",
    "why is",
    "who",
    "how to",
    "define",
    "what causes",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub k_views: usize,
    pub top_k: usize,
    pub max_query_tokens: usize,
    /// Upper bound on content terms drawn per query.
    pub max_terms: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            k_views: 10,
            top_k: 10,
            max_query_tokens: 16,
            max_terms: 3,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_views == 0 || self.top_k == 0 || self.max_query_tokens == 0 || self.max_terms == 0
        {
            return Err(Error::Config(
                "k_views, top_k, max_query_tokens and max_terms must be ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QgModel {
    idf: HashMap<String, f64>,
    templates: Vec<Vec<String>>,
}

impl QgModel {
    /// Fits idf = ln(1 + N / df) over the corpus.
    pub fn fit(corpus: &Corpus) -> Result<Self> {
        Self::fit_with_templates(corpus, DEFAULT_TEMPLATES)
    }

    pub fn fit_with_templates<S: AsRef<str>>(corpus: &Corpus, templates: &[S]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Invalid(
                "cannot fit a query generator on an empty corpus".into(),
            ));
        }
        let templates: Vec<Vec<String>> = templates.iter().map(|t| tokenize(t.as_ref())).collect();
        if templates.is_empty() {
            return Err(Error::Config("at least one template is required".into()));
        }
        let mut df: HashMap<String, usize> = HashMap::new();
        for doc in corpus.docs() {
            let mut terms = tokenize(&doc.text);
            terms.sort_unstable();
            terms.dedup();
            for t in terms {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = corpus.len() as f64;
        let idf = df
            .into_iter()
            .map(|(t, c)| (t, (1.0 + n / c as f64).ln()))
            .collect();
        Ok(Self { idf, templates })
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.idf.get(term).copied()
    }

    /// tf × idf for every in-vocabulary term of the document, sorted by
    /// weight descending then term ascending.
    pub fn salience(&self, doc: &Document) -> Vec<(String, f64)> {
        let mut tf: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokenize(&doc.text) {
            if self.idf.contains_key(&t) {
                *tf.entry(t).or_default() += 1;
            }
        }
        let mut weighted: Vec<(String, f64)> = tf
            .into_iter()
            .map(|(t, c)| {
                let w = c as f64 * self.idf[&t];
                (t, w)
            })
            .collect();
        weighted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        weighted
    }

    pub fn generate(&self, doc: &Document, cfg: &SamplingConfig, seed: u64) -> Result<Vec<String>> {
        cfg.validate()?;
        let salience = self.salience(doc);
        if salience.is_empty() {
            return Err(Error::Invalid(format!(
                "document `{}` has no in-vocabulary tokens",
                doc.doc_id
            )));
        }
        let pool = &salience[..salience.len().min(cfg.top_k)];
        let templates = &self.templates[..self.templates.len().min(cfg.top_k)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let queries = (0..cfg.k_views)
            .map(|_| {
                let template = &templates[rng.gen_range(0..templates.len())];
                let budget = cfg.max_query_tokens.saturating_sub(template.len()).max(1);
                let n_terms = rng.gen_range(1..=pool.len().min(cfg.max_terms).min(budget));
                let mut tokens: Vec<&str> = template.iter().map(String::as_str).collect();
                let mut remaining: Vec<&(String, f64)> = pool.iter().collect();
                for _ in 0..n_terms {
                    let pick = if remaining.len() == 1 {
                        0
                    } else {
                        let dist = WeightedIndex::new(remaining.iter().map(|(_, w)| *w))
                            .expect("salience weights are positive");
                        dist.sample(&mut rng)
                    };
                    tokens.push(remaining.remove(pick).0.as_str());
                }
                tokens.truncate(cfg.max_query_tokens);
                tokens.join(" ")
            })
            .collect();
        Ok(queries)
    }

    /// Generates views for every document. Each document draws from its own
    /// stream seeded by `seed ^ hash(doc_id)`, so sharding cannot change output.
    pub fn generate_corpus(
        &self,
        corpus: &Corpus,
        cfg: &SamplingConfig,
        seed: u64,
    ) -> Result<Vec<GeneratedQuerySet>> {
        corpus
            .docs()
            .par_iter()
            .map(|doc| {
                let doc_seed = seed ^ stable_hash(doc.doc_id.as_bytes());
                self.generate(doc, cfg, doc_seed)
                    .map(|queries| GeneratedQuerySet {
                        doc_id: doc.doc_id.clone(),
                        queries,
                    })
                    .map_err(|e| Error::Document {
                        doc_id: doc.doc_id.clone(),
                        source: Box::new(e),
                    })
            })
            .collect()
    }
}
