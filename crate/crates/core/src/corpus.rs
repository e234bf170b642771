//! Ingestion and serialization of documents, queries, qrels, training triples
//! and generated-query files. All loaders are strict: the first malformed row
//! aborts with its line number.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

impl Document {
    /// Builds a document with normalized text. Fails if the text is blank.
    pub fn new(doc_id: impl Into<String>, text: &str) -> Result<Self> {
        let text = normalize(text);
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(Self {
            doc_id: doc_id.into(),
            text,
        })
    }
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: &str) -> Result<Self> {
        let text = normalize(text);
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(Self {
            query_id: query_id.into(),
            text,
        })
    }
}

/// An ordered document collection with id lookup.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(d.doc_id.clone()));
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Tsv,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Yields (1-based line number, line) for every line, failing on io errors.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = open(path)?;
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(|e| Error::io(path, e)))
        .collect()
}

fn split_id_text<'a>(path: &Path, line_no: usize, line: &'a str) -> Result<(&'a str, &'a str)> {
    let (id, text) = line
        .split_once('\t')
        .ok_or_else(|| Error::parse(path, line_no, "expected `id<TAB>text`"))?;
    let id = id.trim();
    if id.is_empty() {
        return Err(Error::parse(path, line_no, "empty id"));
    }
    Ok((id, text))
}

#[derive(Deserialize)]
struct DocRecord {
    doc_id: String,
    text: String,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in lines(path)? {
        if line.trim().is_empty() {
            continue;
        }
        let (doc_id, text) = match format {
            CorpusFormat::Tsv => {
                let (id, text) = split_id_text(path, line_no, &line)?;
                (id.to_owned(), text.to_owned())
            }
            CorpusFormat::Jsonl => {
                let rec: DocRecord = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
                (rec.doc_id, rec.text)
            }
        };
        if !seen.insert(doc_id.clone()) {
            return Err(Error::DuplicateId(doc_id));
        }
        let doc = Document::new(doc_id, &text)
            .map_err(|_| Error::parse(path, line_no, "empty document text"))?;
        docs.push(doc);
    }
    log::info!("loaded {} documents from {}", docs.len(), path.display());
    Corpus::new(docs)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut w = create(path)?;
    for d in corpus.docs() {
        writeln!(w, "{}\t{}", d.doc_id, d.text).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in lines(path)? {
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = split_id_text(path, line_no, &line)?;
        if !seen.insert(id.to_owned()) {
            return Err(Error::DuplicateId(id.to_owned()));
        }
        let q =
            Query::new(id, text).map_err(|_| Error::parse(path, line_no, "empty query text"))?;
        out.push(q);
    }
    Ok(out)
}

pub fn write_queries(path: &Path, queries: &[Query]) -> Result<()> {
    let mut w = create(path)?;
    for q in queries {
        writeln!(w, "{}\t{}", q.query_id, q.text).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Graded relevance judgments keyed by query then document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    entries: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment; a repeated (query, doc) key is an error.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Result<()> {
        let per_query = self.entries.entry(query_id.to_owned()).or_default();
        if per_query.insert(doc_id.to_owned(), grade).is_some() {
            return Err(Error::DuplicateId(format!("{query_id}/{doc_id}")));
        }
        Ok(())
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.entries
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn judgments(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.entries.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Documents with grade ≥ `threshold` for the query, in doc_id order.
    pub fn relevant(&self, query_id: &str, threshold: u32) -> Vec<&str> {
        self.entries
            .get(query_id)
            .map(|m| {
                m.iter()
                    .filter(|(_, &g)| g >= threshold)
                    .map(|(d, _)| d.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.entries
            .iter()
            .flat_map(|(q, m)| m.iter().map(move |(d, &g)| (q.as_str(), d.as_str(), g)))
    }
}

pub fn load_qrels(path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (line_no, line) in lines(path)? {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 4 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let grade: i64 = cols[3]
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad grade `{}`", cols[3])))?;
        if grade < 0 {
            return Err(Error::parse(
                path,
                line_no,
                format!("negative grade {grade}"),
            ));
        }
        let grade = u32::try_from(grade)
            .map_err(|_| Error::parse(path, line_no, format!("grade {grade} out of range")))?;
        qrels.insert(cols[0], cols[2], grade).map_err(|_| {
            Error::parse(
                path,
                line_no,
                format!("duplicate judgment {} {}", cols[0], cols[2]),
            )
        })?;
    }
    Ok(qrels)
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    let mut w = create(path)?;
    for (q, d, g) in qrels.iter() {
        writeln!(w, "{q} 0 {d} {g}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The k pseudo-queries of one document. Views are positional.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedQuerySet {
    pub doc_id: String,
    pub queries: Vec<String>,
}

impl GeneratedQuerySet {
    pub fn k(&self) -> usize {
        self.queries.len()
    }

    /// Keeps only the first `k` views.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            doc_id: self.doc_id.clone(),
            queries: self.queries.iter().take(k).cloned().collect(),
        }
    }
}

/// Checks id membership, non-empty lists and uniform k. Returns k.
pub fn validate_generated(sets: &[GeneratedQuerySet], corpus: &Corpus) -> Result<usize> {
    check_sets(sets, Some(corpus))
}

fn check_sets(sets: &[GeneratedQuerySet], corpus: Option<&Corpus>) -> Result<usize> {
    let mut expected: Option<(usize, &str)> = None;
    let mut seen = HashSet::new();
    for set in sets {
        if corpus.is_some_and(|c| c.get(&set.doc_id).is_none()) {
            return Err(Error::UnknownDocument(set.doc_id.clone()));
        }
        if !seen.insert(set.doc_id.as_str()) {
            return Err(Error::DuplicateId(set.doc_id.clone()));
        }
        if set.queries.is_empty() {
            return Err(Error::Invalid(format!(
                "document `{}` has no generated queries",
                set.doc_id
            )));
        }
        match expected {
            None => expected = Some((set.k(), &set.doc_id)),
            Some((k, _)) if k != set.k() => {
                return Err(Error::NonUniformViews {
                    doc_id: set.doc_id.clone(),
                    expected: k,
                    found: set.k(),
                })
            }
            _ => {}
        }
    }
    Ok(expected.map(|(k, _)| k).unwrap_or(0))
}

pub fn load_generated_queries(path: &Path, corpus: &Corpus) -> Result<Vec<GeneratedQuerySet>> {
    read_generated(path, Some(corpus))
}

/// Like [`load_generated_queries`] without checking ids against a corpus.
pub fn read_generated_queries(path: &Path) -> Result<Vec<GeneratedQuerySet>> {
    read_generated(path, None)
}

fn read_generated(path: &Path, corpus: Option<&Corpus>) -> Result<Vec<GeneratedQuerySet>> {
    let mut sets = Vec::new();
    for (line_no, line) in lines(path)? {
        if line.trim().is_empty() {
            continue;
        }
        let mut set: GeneratedQuerySet =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        for q in set.queries.iter_mut() {
            *q = normalize(q);
            if q.is_empty() {
                return Err(Error::parse(path, line_no, "empty generated query"));
            }
        }
        sets.push(set);
    }
    let k = check_sets(&sets, corpus)?;
    log::info!(
        "loaded generated queries for {} documents (k={k})",
        sets.len()
    );
    Ok(sets)
}

pub fn write_generated_queries(path: &Path, sets: &[GeneratedQuerySet]) -> Result<()> {
    let mut w = create(path)?;
    for set in sets {
        let line = serde_json::to_string(set).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTriple {
    pub query: Query,
    pub positive: Document,
    pub negatives: Vec<Document>,
}

impl TrainingTriple {
    pub fn validate(&self) -> Result<()> {
        if self.negatives.is_empty() {
            return Err(Error::Invalid(format!(
                "triple for query `{}` has no negatives",
                self.query.query_id
            )));
        }
        if self
            .negatives
            .iter()
            .any(|n| n.doc_id == self.positive.doc_id)
        {
            return Err(Error::Invalid(format!(
                "triple for query `{}` lists its positive `{}` as a negative",
                self.query.query_id, self.positive.doc_id
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TripleRecord {
    query_id: String,
    query: String,
    positive_doc_id: String,
    positive: String,
    negative_doc_ids: Vec<String>,
    negatives: Vec<String>,
}

pub fn load_triples(path: &Path) -> Result<Vec<TrainingTriple>> {
    let mut out = Vec::new();
    for (line_no, line) in lines(path)? {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TripleRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        if rec.negative_doc_ids.len() != rec.negatives.len() {
            return Err(Error::parse(
                path,
                line_no,
                "negative_doc_ids and negatives differ in length",
            ));
        }
        let bad = |what: &str| Error::parse(path, line_no, format!("empty {what} text"));
        let triple = TrainingTriple {
            query: Query::new(rec.query_id, &rec.query).map_err(|_| bad("query"))?,
            positive: Document::new(rec.positive_doc_id, &rec.positive)
                .map_err(|_| bad("positive"))?,
            negatives: rec
                .negative_doc_ids
                .into_iter()
                .zip(&rec.negatives)
                .map(|(id, t)| Document::new(id, t).map_err(|_| bad("negative")))
                .collect::<Result<_>>()?,
        };
        triple
            .validate()
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        out.push(triple);
    }
    Ok(out)
}

pub fn write_triples(path: &Path, triples: &[TrainingTriple]) -> Result<()> {
    let mut w = create(path)?;
    for t in triples {
        let rec = TripleRecord {
            query_id: t.query.query_id.clone(),
            query: t.query.text.clone(),
            positive_doc_id: t.positive.doc_id.clone(),
            positive: t.positive.text.clone(),
            negative_doc_ids: t.negatives.iter().map(|d| d.doc_id.clone()).collect(),
            negatives: t.negatives.iter().map(|d| d.text.clone()).collect(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
