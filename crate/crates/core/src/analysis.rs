//! Generation-quality and diversity analysis: max-ROUGE-L against gold
//! queries, self-BLEU-4 over each document's pseudo-queries, Pearson
//! correlation, equal-width diversity levels, and sweeps over the number of
//! views.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use crate::corpus::{Corpus, GeneratedQuerySet, Qrels, Query};
use crate::encoder::{EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::eval::{mrr_at_k, RunFile};
use crate::index::build_index;
use crate::text::tokenize;

/// Zero n-gram precisions are replaced by this before taking logs.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const DIVERSITY_LEVELS: usize = 5;

fn tokens_nonempty(text: &str) -> Result<Vec<String>> {
    let t = tokenize(text);
    if t.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(t)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Token-level ROUGE-L F1.
pub fn rouge_l(candidate: &str, reference: &str) -> Result<f64> {
    let c = tokens_nonempty(candidate)?;
    let r = tokens_nonempty(reference)?;
    let lcs = lcs_len(&c, &r) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / c.len() as f64;
    let rec = lcs / r.len() as f64;
    Ok(2.0 * p * rec / (p + rec))
}

pub fn max_rouge_l<S: AsRef<str>>(generated: &[S], gold: &str) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::Invalid(
            "max-ROUGE-L needs at least one generated query".into(),
        ));
    }
    generated
        .iter()
        .map(|g| rouge_l(g.as_ref(), gold))
        .try_fold(0.0f64, |m, v| v.map(|v| m.max(v)))
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_default() += 1;
    }
    m
}

/// Sentence BLEU-4 of `hyp` against `refs`: brevity penalty (closest
/// reference length) times the geometric mean of clipped n-gram precisions.
/// Orders longer than the hypothesis are left out of the mean.
pub fn bleu_4(hyp: &[String], refs: &[Vec<String>]) -> f64 {
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=4 {
        if hyp.len() < n {
            break;
        }
        let counts = ngram_counts(hyp, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_default();
                *e = (*e).max(c);
            }
        }
        let total = hyp.len() + 1 - n;
        let clipped: usize = counts
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let p = clipped as f64 / total as f64;
        log_sum += if p > 0.0 { p.ln() } else { BLEU_EPSILON.ln() };
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    let c = hyp.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(c), l))
        .unwrap_or(c);
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * (log_sum / orders as f64).exp()
}

/// Mean BLEU-4 of each query against all the others.
pub fn self_bleu_4<S: AsRef<str>>(queries: &[S]) -> Result<f64> {
    if queries.len() < 2 {
        return Err(Error::Invalid(
            "self-BLEU needs at least two queries".into(),
        ));
    }
    let toks: Vec<Vec<String>> = queries
        .iter()
        .map(|q| tokens_nonempty(q.as_ref()))
        .collect::<Result<_>>()?;
    let total: f64 = (0..toks.len())
        .map(|i| {
            let refs: Vec<Vec<String>> = toks
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, t)| t.clone())
                .collect();
            bleu_4(&toks[i], &refs)
        })
        .sum();
    Ok(total / toks.len() as f64)
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Invalid("pearson needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Invalid(
            "pearson is undefined for zero variance".into(),
        ));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityRecord {
    pub query_id: String,
    pub doc_id: String,
    pub max_rouge_l: f64,
}

/// One record per (gold query, relevant document with generated queries),
/// using the first `k` views when given.
pub fn quality_records(
    generated: &[GeneratedQuerySet],
    gold: &[Query],
    qrels: &Qrels,
    threshold: u32,
    k: Option<usize>,
) -> Result<Vec<QualityRecord>> {
    let by_doc: HashMap<&str, &GeneratedQuerySet> =
        generated.iter().map(|g| (g.doc_id.as_str(), g)).collect();
    let mut out = Vec::new();
    for q in gold {
        for doc in qrels.relevant(&q.query_id, threshold) {
            let Some(set) = by_doc.get(doc) else { continue };
            let take = k.unwrap_or(set.k());
            if take > set.k() {
                return Err(Error::Invalid(format!(
                    "requested {take} views but `{doc}` has {}",
                    set.k()
                )));
            }
            out.push(QualityRecord {
                query_id: q.query_id.clone(),
                doc_id: doc.to_owned(),
                max_rouge_l: max_rouge_l(&set.queries[..take], &q.text)?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityRecord {
    pub doc_id: String,
    pub self_bleu_4: f64,
    /// 1 = lowest self-BLEU (most diverse), 5 = highest.
    pub level: usize,
}

/// Equal-width level boundaries over `[min, max]`.
pub fn level_of(value: f64, min: f64, max: f64) -> usize {
    if max <= min {
        return DIVERSITY_LEVELS;
    }
    let width = (max - min) / DIVERSITY_LEVELS as f64;
    (((value - min) / width).floor() as usize + 1).min(DIVERSITY_LEVELS)
}

pub fn diversity_records(generated: &[GeneratedQuerySet]) -> Result<Vec<DiversityRecord>> {
    let scores: Vec<f64> = generated
        .iter()
        .map(|g| {
            self_bleu_4(&g.queries).map_err(|e| Error::Document {
                doc_id: g.doc_id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(generated
        .iter()
        .zip(scores)
        .map(|(g, s)| DiversityRecord {
            doc_id: g.doc_id.clone(),
            self_bleu_4: s,
            level: level_of(s, min, max),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketRow {
    pub level: usize,
    pub lower: f64,
    pub upper: f64,
    pub n_docs: usize,
    pub mean_retrieval: Option<f64>,
    pub mean_max_rouge_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub records: Vec<DiversityRecord>,
    /// Only levels that contain at least one document.
    pub buckets: Vec<BucketRow>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Buckets documents by self-BLEU-4 level. A query's retrieval score is
/// credited to each of its relevant documents.
pub fn diversity_report(
    generated: &[GeneratedQuerySet],
    per_query_metric: &BTreeMap<String, f64>,
    qrels: &Qrels,
    quality: &[QualityRecord],
    threshold: u32,
) -> Result<DiversityReport> {
    let records = diversity_records(generated)?;
    let min = records
        .iter()
        .map(|r| r.self_bleu_4)
        .fold(f64::INFINITY, f64::min);
    let max = records
        .iter()
        .map(|r| r.self_bleu_4)
        .fold(f64::NEG_INFINITY, f64::max);
    let level: HashMap<&str, usize> = records
        .iter()
        .map(|r| (r.doc_id.as_str(), r.level))
        .collect();

    let mut retrieval: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (q, value) in per_query_metric {
        for doc in qrels.relevant(q, threshold) {
            if let Some(&l) = level.get(doc) {
                retrieval.entry(l).or_default().push(*value);
            }
        }
    }
    let mut rouge: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in quality {
        if let Some(&l) = level.get(r.doc_id.as_str()) {
            rouge.entry(l).or_default().push(r.max_rouge_l);
        }
    }
    let width = if max > min {
        (max - min) / DIVERSITY_LEVELS as f64
    } else {
        0.0
    };
    let buckets = (1..=DIVERSITY_LEVELS)
        .filter_map(|l| {
            let n_docs = records.iter().filter(|r| r.level == l).count();
            (n_docs > 0).then(|| BucketRow {
                level: l,
                lower: if width > 0.0 {
                    min + width * (l - 1) as f64
                } else {
                    min
                },
                upper: if width > 0.0 {
                    min + width * l as f64
                } else {
                    max
                },
                n_docs,
                mean_retrieval: retrieval.get(&l).and_then(|v| mean(v)),
                mean_max_rouge_l: rouge.get(&l).and_then(|v| mean(v)),
            })
        })
        .collect();
    Ok(DiversityReport { records, buckets })
}

/// What the sweep needs to re-run retrieval with fewer views.
pub struct RetrievalHandles<'a> {
    pub params: &'a EncoderParams<f32>,
    pub corpus: &'a Corpus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub max_rouge_l_mean: f64,
    pub mrr_at_10: Option<f64>,
}

/// For each k: mean max-ROUGE-L over the first k views and, when handles are
/// given, MRR@10 of a k-view index.
pub fn sweep_views(
    k_values: &[usize],
    generated: &[GeneratedQuerySet],
    gold: &[Query],
    qrels: &Qrels,
    threshold: u32,
    retrieval: Option<&RetrievalHandles<'_>>,
) -> Result<Vec<SweepRow>> {
    let available = generated
        .iter()
        .map(GeneratedQuerySet::k)
        .min()
        .unwrap_or(0);
    k_values
        .iter()
        .map(|&k| {
            if k == 0 || k > available {
                return Err(Error::Invalid(format!(
                    "k={k} outside the {available} available views"
                )));
            }
            let quality = quality_records(generated, gold, qrels, threshold, Some(k))?;
            let scores: Vec<f64> = quality.iter().map(|r| r.max_rouge_l).collect();
            let mrr = match retrieval {
                None => None,
                Some(h) => {
                    let truncated: Vec<GeneratedQuerySet> =
                        generated.iter().map(|g| g.truncated(k)).collect();
                    let index = build_index(h.params, h.corpus, &truncated, Mode::Dce)?;
                    let encoded = gold
                        .iter()
                        .map(|q| Ok((q.query_id.clone(), h.params.encode_query(&q.text)?)))
                        .collect::<Result<Vec<_>>>()?;
                    let lists = index.batch_search(&encoded, 10)?;
                    let run = RunFile::from_ranked(&lists, "sweep")?;
                    Some(mrr_at_k(&run, qrels, 10, threshold).aggregate)
                }
            };
            Ok(SweepRow {
                k,
                max_rouge_l_mean: mean(&scores).unwrap_or(0.0),
                mrr_at_10: mrr,
            })
        })
        .collect()
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let f = crate::bytes::create_file(path)?;
    let mut w = std::io::BufWriter::new(f);
    let go = || -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()
    };
    go().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_quality_csv(path: &Path, records: &[QualityRecord]) -> Result<()> {
    write_csv(
        path,
        "query_id,doc_id,max_rouge_l",
        records
            .iter()
            .map(|r| format!("{},{},{:.6}", r.query_id, r.doc_id, r.max_rouge_l)),
    )
}

pub fn write_diversity_csv(path: &Path, records: &[DiversityRecord]) -> Result<()> {
    write_csv(
        path,
        "doc_id,self_bleu_4,level",
        records
            .iter()
            .map(|r| format!("{},{:.6},{}", r.doc_id, r.self_bleu_4, r.level)),
    )
}

pub fn write_buckets_csv(path: &Path, buckets: &[BucketRow]) -> Result<()> {
    write_csv(
        path,
        "level,lower,upper,n_docs,mean_retrieval,mean_max_rouge_l",
        buckets.iter().map(|b| {
            format!(
                "{},{:.6},{:.6},{},{},{}",
                b.level,
                b.lower,
                b.upper,
                b.n_docs,
                opt(b.mean_retrieval),
                opt(b.mean_max_rouge_l)
            )
        }),
    )
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv(
        path,
        "k,max_rouge_l_mean,mrr_at_10",
        rows.iter()
            .map(|r| format!("{},{:.6},{}", r.k, r.max_rouge_l_mean, opt(r.mrr_at_10))),
    )
}
