//! TREC run files and the MRR@k, Recall@k and nDCG@k metrics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use crate::corpus::Qrels;
use crate::error::{Error, Result};
use crate::index::RankedList;

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Validated run: per query, ranks are 1..n, scores never increase with
/// rank, and each document appears once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    by_query: BTreeMap<String, Vec<RunRow>>,
}

impl RunFile {
    pub fn from_rows(rows: Vec<RunRow>) -> Result<Self> {
        let mut by_query: BTreeMap<String, Vec<RunRow>> = BTreeMap::new();
        for row in rows {
            by_query.entry(row.query_id.clone()).or_default().push(row);
        }
        for (qid, rows) in by_query.iter_mut() {
            rows.sort_by_key(|r| r.rank);
            let mut seen = HashSet::new();
            for (i, r) in rows.iter().enumerate() {
                if r.rank != i + 1 {
                    return Err(Error::Invalid(format!(
                        "query `{qid}`: ranks are not contiguous from 1 (found {} at position {})",
                        r.rank,
                        i + 1
                    )));
                }
                if !seen.insert(r.doc_id.as_str()) {
                    return Err(Error::Invalid(format!(
                        "query `{qid}`: duplicate document `{}`",
                        r.doc_id
                    )));
                }
                if i > 0 && r.score > rows[i - 1].score {
                    return Err(Error::Invalid(format!(
                        "query `{qid}`: score increases at rank {}",
                        r.rank
                    )));
                }
            }
        }
        Ok(Self { by_query })
    }

    pub fn from_ranked(lists: &[RankedList], tag: &str) -> Result<Self> {
        let rows = lists
            .iter()
            .flat_map(|l| {
                l.entries.iter().enumerate().map(move |(i, (d, s))| RunRow {
                    query_id: l.query_id.clone(),
                    doc_id: d.clone(),
                    rank: i + 1,
                    score: *s,
                    tag: tag.to_owned(),
                })
            })
            .collect();
        Self::from_rows(rows)
    }

    /// Ranked documents of a query (empty if the query is absent).
    pub fn ranking(&self, query_id: &str) -> &[RunRow] {
        self.by_query
            .get(query_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn rows(&self) -> impl Iterator<Item = &RunRow> {
        self.by_query.values().flatten()
    }

    pub fn parse<R: BufRead>(reader: R, origin: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            let bad = |m: String| Error::parse(origin, i + 1, m);
            if cols.len() != 6 {
                return Err(bad(format!("expected 6 columns, found {}", cols.len())));
            }
            rows.push(RunRow {
                query_id: cols[0].to_owned(),
                doc_id: cols[2].to_owned(),
                rank: cols[3]
                    .parse()
                    .map_err(|_| bad(format!("bad rank `{}`", cols[3])))?,
                score: cols[4]
                    .parse()
                    .map_err(|_| bad(format!("bad score `{}`", cols[4])))?,
                tag: cols[5].to_owned(),
            });
        }
        Self::from_rows(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(f), path)
    }

    /// `query_id Q0 doc_id rank score tag`, queries in id order.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in self.rows() {
            writeln!(
                w,
                "{} Q0 {} {} {} {}",
                r.query_id, r.doc_id, r.rank, r.score, r.tag
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = crate::bytes::create_file(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: Metric,
    pub per_query: BTreeMap<String, f64>,
    pub aggregate: f64,
    pub n_queries: usize,
}

impl MetricReport {
    fn from_per_query(metric: Metric, per_query: BTreeMap<String, f64>) -> Self {
        let n = per_query.len();
        let aggregate = if n == 0 {
            0.0
        } else {
            per_query.values().sum::<f64>() / n as f64
        };
        Self {
            metric,
            per_query,
            aggregate,
            n_queries: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mrr(usize),
    Recall(usize),
    Ndcg(usize),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mrr(k) => write!(f, "mrr@{k}"),
            Metric::Recall(k) => write!(f, "recall@{k}"),
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = s
            .trim()
            .split_once('@')
            .ok_or_else(|| Error::Config(format!("metric `{s}` must look like name@k")))?;
        let k: usize = k
            .parse()
            .ok()
            .filter(|&k| k > 0)
            .ok_or_else(|| Error::Config(format!("bad cutoff in `{s}`")))?;
        match name.to_ascii_lowercase().as_str() {
            "mrr" => Ok(Metric::Mrr(k)),
            "recall" => Ok(Metric::Recall(k)),
            "ndcg" => Ok(Metric::Ndcg(k)),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

/// Reciprocal rank of the first document with grade ≥ `threshold` within
/// the top `k`; averaged over every query in the qrels.
pub fn mrr_at_k(run: &RunFile, qrels: &Qrels, k: usize, threshold: u32) -> MetricReport {
    let per_query = qrels
        .query_ids()
        .map(|q| {
            let rr = run
                .ranking(q)
                .iter()
                .take(k)
                .position(|r| qrels.grade(q, &r.doc_id) >= threshold)
                .map_or(0.0, |p| 1.0 / (p + 1) as f64);
            (q.to_owned(), rr)
        })
        .collect();
    MetricReport::from_per_query(Metric::Mrr(k), per_query)
}

/// Fraction of relevant documents found in the top `k`; queries without
/// relevant documents are left out of the mean.
pub fn recall_at_k(run: &RunFile, qrels: &Qrels, k: usize, threshold: u32) -> MetricReport {
    let per_query = qrels
        .query_ids()
        .filter_map(|q| {
            let relevant = qrels.relevant(q, threshold);
            if relevant.is_empty() {
                return None;
            }
            let hits = run
                .ranking(q)
                .iter()
                .take(k)
                .filter(|r| qrels.grade(q, &r.doc_id) >= threshold)
                .count();
            Some((q.to_owned(), hits as f64 / relevant.len() as f64))
        })
        .collect();
    MetricReport::from_per_query(Metric::Recall(k), per_query)
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank0: usize) -> f64 {
    ((rank0 + 2) as f64).log2()
}

/// DCG@k with gain 2^g − 1 and log2(i + 1) discount, over the ideal DCG.
pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> MetricReport {
    let per_query = qrels
        .query_ids()
        .map(|q| {
            let dcg: f64 = run
                .ranking(q)
                .iter()
                .take(k)
                .enumerate()
                .map(|(i, r)| gain(qrels.grade(q, &r.doc_id)) / discount(i))
                .sum();
            let mut grades: Vec<u32> = qrels
                .judgments(q)
                .map(|m| m.values().copied().collect())
                .unwrap_or_default();
            grades.sort_unstable_by(|a, b| b.cmp(a));
            let ideal: f64 = grades
                .iter()
                .take(k)
                .enumerate()
                .map(|(i, &g)| gain(g) / discount(i))
                .sum();
            (q.to_owned(), if ideal > 0.0 { dcg / ideal } else { 0.0 })
        })
        .collect();
    MetricReport::from_per_query(Metric::Ndcg(k), per_query)
}

pub fn evaluate(run: &RunFile, qrels: &Qrels, metric: Metric, threshold: u32) -> MetricReport {
    match metric {
        Metric::Mrr(k) => mrr_at_k(run, qrels, k, threshold),
        Metric::Recall(k) => recall_at_k(run, qrels, k, threshold),
        Metric::Ndcg(k) => ndcg_at_k(run, qrels, k),
    }
}

/// `metric,n_queries,value` CSV.
pub fn write_report_csv<W: Write>(mut w: W, reports: &[MetricReport]) -> std::io::Result<()> {
    writeln!(w, "metric,n_queries,value")?;
    for r in reports {
        writeln!(w, "{},{},{:.6}", r.metric, r.n_queries, r.aggregate)?;
    }
    Ok(())
}

pub fn format_table(reports: &[MetricReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.metric.to_string().len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut out = format!("{:<width$}  {:>9}  {:>8}\n", "metric", "queries", "value");
    for r in reports {
        out.push_str(&format!(
            "{:<width$}  {:>9}  {:>8.4}\n",
            r.metric.to_string(),
            r.n_queries,
            r.aggregate
        ));
    }
    out
}
