//! Exact flat inner-product index over document views with max-pool
//! aggregation per document.
//!
//! A query retrieves the top `k_views × K` rows and pools them by document.
//! Each document owns at most `k_views` rows, so the selection always spans
//! at least `K` documents, and any document whose best row is left out is
//! beaten by `K` others. The pooled top `K` therefore equals the exhaustive
//! per-document maximum ranking.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::bytes::{ByteReader, CRC64};
use crate::corpus::{Corpus, GeneratedQuerySet};
use crate::encoder::{Embedding, EncoderParams, Mode};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"MVIXT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ViewVector {
    pub doc_id: String,
    pub view_id: u32,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    k_views: usize,
    /// Row-major `rows × dim`.
    matrix: Vec<f32>,
    doc_ids: Vec<String>,
    /// Per row: (index into `doc_ids`, view id).
    row_map: Vec<(u32, u32)>,
    /// Position of each doc id in ascending string order, for tie-breaking.
    doc_rank: Vec<u32>,
}

/// One query's ranking, ordered by score descending then doc id ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

fn doc_ranks(doc_ids: &[String]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..doc_ids.len()).collect();
    order.sort_by(|&a, &b| doc_ids[a].cmp(&doc_ids[b]));
    let mut rank = vec![0u32; doc_ids.len()];
    for (r, i) in order.into_iter().enumerate() {
        rank[i] = r as u32;
    }
    rank
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

impl FlatIndex {
    /// Assembles an index from view vectors grouped by document. Every
    /// document must contribute exactly `k_views` rows.
    pub fn from_views(dim: usize, k_views: usize, views: Vec<ViewVector>) -> Result<Self> {
        let mut doc_ids: Vec<String> = Vec::new();
        let mut doc_pos: HashMap<String, u32> = HashMap::new();
        let mut per_doc: Vec<Vec<u32>> = Vec::new();
        let mut matrix = Vec::with_capacity(views.len() * dim);
        let mut row_map = Vec::with_capacity(views.len());
        for v in views {
            if v.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: v.embedding.len(),
                });
            }
            if !v.embedding.iter().all(|x| x.is_finite()) {
                return Err(Error::Invalid(format!(
                    "non-finite embedding for `{}`",
                    v.doc_id
                )));
            }
            let idx = *doc_pos.entry(v.doc_id.clone()).or_insert_with(|| {
                doc_ids.push(v.doc_id.clone());
                per_doc.push(Vec::new());
                (doc_ids.len() - 1) as u32
            });
            if per_doc[idx as usize].contains(&v.view_id) {
                return Err(Error::DuplicateId(format!("{}#{}", v.doc_id, v.view_id)));
            }
            per_doc[idx as usize].push(v.view_id);
            matrix.extend_from_slice(&v.embedding);
            row_map.push((idx, v.view_id));
        }
        if let Some((i, _)) = per_doc.iter().enumerate().find(|(_, v)| v.len() != k_views) {
            return Err(Error::NonUniformViews {
                doc_id: doc_ids[i].clone(),
                expected: k_views,
                found: per_doc[i].len(),
            });
        }
        let doc_rank = doc_ranks(&doc_ids);
        Ok(Self {
            dim,
            k_views,
            matrix,
            doc_ids,
            row_map,
            doc_rank,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_views(&self) -> usize {
        self.k_views
    }

    pub fn n_rows(&self) -> usize {
        self.row_map.len()
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_map.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.matrix[r * self.dim..(r + 1) * self.dim]
    }

    /// (doc id, view id) of a row.
    pub fn row_info(&self, r: usize) -> (&str, u32) {
        let (d, v) = self.row_map[r];
        (&self.doc_ids[d as usize], v)
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// Score-descending, doc-id-ascending, view-ascending row order.
    fn row_cmp(&self, scores: &[f64], a: usize, b: usize) -> Ordering {
        let (da, va) = self.row_map[a];
        let (db, vb) = self.row_map[b];
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| self.doc_rank[da as usize].cmp(&self.doc_rank[db as usize]))
            .then_with(|| va.cmp(&vb))
    }

    pub fn search(
        &self,
        query_id: &str,
        query: &Embedding<f32>,
        top_k_docs: usize,
    ) -> Result<RankedList> {
        if top_k_docs == 0 {
            return Err(Error::Invalid("top_k_docs must be ≥ 1".into()));
        }
        if self.is_empty() {
            return Err(Error::Invalid("cannot search an empty index".into()));
        }
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                left: query.dim(),
                right: self.dim,
            });
        }
        let q = query.as_slice();
        let scores: Vec<f64> = self
            .matrix
            .chunks_exact(self.dim)
            .map(|row| dot(q, row))
            .collect();

        let n_select = (self.k_views * top_k_docs).min(scores.len());
        let mut rows: Vec<usize> = (0..scores.len()).collect();
        if n_select < rows.len() {
            rows.select_nth_unstable_by(n_select - 1, |&a, &b| self.row_cmp(&scores, a, b));
            rows.truncate(n_select);
        }

        let mut best: HashMap<u32, f64> = HashMap::new();
        for &r in &rows {
            let d = self.row_map[r].0;
            let s = scores[r];
            best.entry(d)
                .and_modify(|b| {
                    if s > *b {
                        *b = s
                    }
                })
                .or_insert(s);
        }
        let mut pooled: Vec<(u32, f64)> = best.into_iter().collect();
        pooled.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_rank[a.0 as usize].cmp(&self.doc_rank[b.0 as usize]))
        });
        pooled.truncate(top_k_docs);
        Ok(RankedList {
            query_id: query_id.to_owned(),
            entries: pooled
                .into_iter()
                .map(|(d, s)| (self.doc_ids[d as usize].clone(), s))
                .collect(),
        })
    }

    /// Searches every query in parallel; output order matches input order.
    pub fn batch_search(
        &self,
        queries: &[(String, Embedding<f32>)],
        top_k_docs: usize,
    ) -> Result<Vec<RankedList>> {
        queries
            .par_iter()
            .map(|(id, q)| self.search(id, q, top_k_docs))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + self.matrix.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n_rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.k_views as u32).to_le_bytes());
        buf.extend_from_slice(&(self.doc_ids.len() as u64).to_le_bytes());
        for id in &self.doc_ids {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        for &(d, v) in &self.row_map {
            buf.extend_from_slice(&d.to_le_bytes());
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for x in &self.matrix {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let crc = CRC64.checksum(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        w.write_all(&buf).map_err(|e| Error::io("<index>", e))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| Error::io("<index>", e))?;
        let body = crate::bytes::verify_footer(&buf)?;
        let mut rd = ByteReader::new(body);
        if rd.take(MAGIC.len())? != MAGIC {
            return Err(Error::Corrupt("not an MVIXT1 index".into()));
        }
        let version = rd.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Corrupt(format!(
                "index format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let n_rows = rd.u64()? as usize;
        let dim = rd.u32()? as usize;
        let k_views = rd.u32()? as usize;
        let n_docs = rd.u64()? as usize;
        let mut doc_ids = Vec::with_capacity(n_docs.min(1 << 20));
        for _ in 0..n_docs {
            let len = rd.u32()? as usize;
            let s = std::str::from_utf8(rd.take(len)?)
                .map_err(|_| Error::Corrupt("doc id is not utf-8".into()))?;
            doc_ids.push(s.to_owned());
        }
        let mut row_map = Vec::with_capacity(n_rows.min(1 << 24));
        for _ in 0..n_rows {
            let d = rd.u32()?;
            if d as usize >= n_docs {
                return Err(Error::Corrupt(format!(
                    "row refers to document {d} of {n_docs}"
                )));
            }
            row_map.push((d, rd.u32()?));
        }
        let mut matrix = Vec::with_capacity((n_rows * dim).min(1 << 28));
        for _ in 0..n_rows * dim {
            matrix.push(rd.f32()?);
        }
        if !rd.is_empty() {
            return Err(Error::Corrupt("trailing bytes in index".into()));
        }
        let mut counts = vec![0usize; n_docs];
        for &(d, _) in &row_map {
            counts[d as usize] += 1;
        }
        if counts.iter().any(|&c| c != k_views) {
            return Err(Error::Corrupt(
                "documents do not all have k_views rows".into(),
            ));
        }
        let doc_rank = doc_ranks(&doc_ids);
        Ok(Self {
            dim,
            k_views,
            matrix,
            doc_ids,
            row_map,
            doc_rank,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = crate::bytes::create_file(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Encodes the corpus: `k` views per document in dce mode (one per generated
/// query), a single plain encoding per document in de mode. Rows follow
/// corpus order, then view order.
pub fn build_index(
    params: &EncoderParams<f32>,
    corpus: &Corpus,
    generated: &[GeneratedQuerySet],
    mode: Mode,
) -> Result<FlatIndex> {
    let dim = params.config.embed_dim;
    let (k_views, views) = match mode {
        Mode::De => {
            let views = corpus
                .docs()
                .par_iter()
                .map(|d| {
                    Ok(vec![ViewVector {
                        doc_id: d.doc_id.clone(),
                        view_id: 0,
                        embedding: params.encode_document_de(&d.text)?.0,
                    }])
                })
                .collect::<Result<Vec<_>>>()?;
            (1, views)
        }
        Mode::Dce => {
            let by_doc: HashMap<&str, &GeneratedQuerySet> =
                generated.iter().map(|g| (g.doc_id.as_str(), g)).collect();
            let k = crate::corpus::validate_generated(generated, corpus)?;
            let views = corpus
                .docs()
                .par_iter()
                .map(|d| {
                    let set = by_doc.get(d.doc_id.as_str()).ok_or_else(|| {
                        Error::Invalid(format!("no generated queries for document `{}`", d.doc_id))
                    })?;
                    set.queries
                        .iter()
                        .enumerate()
                        .map(|(i, q)| {
                            Ok(ViewVector {
                                doc_id: d.doc_id.clone(),
                                view_id: i as u32,
                                embedding: params.encode_document_dce(q, &d.text)?.0,
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            (k, views)
        }
    };
    let views: Vec<ViewVector> = views.into_iter().flatten().collect();
    log::info!(
        "built index: {} rows, {} views per document",
        views.len(),
        k_views
    );
    FlatIndex::from_views(dim, k_views, views)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(doc: &str, v: u32, e: Vec<f32>) -> ViewVector {
        ViewVector {
            doc_id: doc.into(),
            view_id: v,
            embedding: e,
        }
    }

    #[test]
    fn max_pooling_over_views() {
        let idx = FlatIndex::from_views(
            1,
            3,
            vec![
                view("a", 0, vec![0.2]),
                view("a", 1, vec![0.9]),
                view("a", 2, vec![0.5]),
            ],
        )
        .unwrap();
        let r = idx.search("q", &Embedding(vec![1.0]), 5).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].0, "a");
        assert!((r.entries[0].1 - 0.9).abs() < 1e-7);
    }

    #[test]
    fn best_view_beats_better_average() {
        let idx = FlatIndex::from_views(
            1,
            2,
            vec![
                view("A", 0, vec![1.0]),
                view("A", 1, vec![0.0]),
                view("B", 0, vec![0.6]),
                view("B", 1, vec![0.59]),
            ],
        )
        .unwrap();
        let r = idx.search("q", &Embedding(vec![1.0]), 1).unwrap();
        assert_eq!(r.entries, vec![("A".to_string(), 1.0)]);
    }

    #[test]
    fn ties_break_by_doc_id() {
        let idx = FlatIndex::from_views(
            1,
            1,
            vec![
                view("z", 0, vec![1.0]),
                view("b", 0, vec![1.0]),
                view("m", 0, vec![1.0]),
            ],
        )
        .unwrap();
        let r = idx.search("q", &Embedding(vec![1.0]), 2).unwrap();
        let ids: Vec<_> = r.entries.iter().map(|e| e.0.as_str()).collect();
        assert_eq!(ids, ["b", "m"]);
    }

    #[test]
    fn oversized_k_returns_everything() {
        let idx =
            FlatIndex::from_views(1, 1, vec![view("a", 0, vec![1.0]), view("b", 0, vec![2.0])])
                .unwrap();
        assert_eq!(
            idx.search("q", &Embedding(vec![1.0]), 10)
                .unwrap()
                .entries
                .len(),
            2
        );
        assert!(idx.search("q", &Embedding(vec![1.0]), 0).is_err());
        assert!(idx.search("q", &Embedding(vec![1.0, 2.0]), 1).is_err());
    }

    #[test]
    fn rejects_ragged_and_duplicate_views() {
        assert!(FlatIndex::from_views(1, 2, vec![view("a", 0, vec![1.0])]).is_err());
        assert!(FlatIndex::from_views(
            1,
            2,
            vec![view("a", 0, vec![1.0]), view("a", 0, vec![1.0])]
        )
        .is_err());
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let idx = FlatIndex::from_views(
            2,
            2,
            vec![
                view("x", 0, vec![1.0, -2.5]),
                view("x", 1, vec![0.0, f32::MIN_POSITIVE]),
                view("y", 0, vec![3.0, 4.0]),
                view("y", 1, vec![-1.0, 1e-30]),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..6], b"MVIXT1");
        let back = FlatIndex::read_from(&buf[..]).unwrap();
        assert_eq!(back, idx);
        let bits = |i: &FlatIndex| i.matrix.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&idx));

        assert!(matches!(
            FlatIndex::read_from(&buf[..buf.len() - 5]),
            Err(Error::Corrupt(_))
        ));

        // bump the version field and re-checksum: must be rejected on version
        let mut body = buf[..buf.len() - 8].to_vec();
        body[6] = 2;
        let crc = CRC64.checksum(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        let err = FlatIndex::read_from(&body[..]).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn empty_index_is_a_valid_file() {
        let idx = FlatIndex::from_views(4, 10, vec![]).unwrap();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        let back = FlatIndex::read_from(&buf[..]).unwrap();
        assert_eq!(back.n_rows(), 0);
        assert!(back.search("q", &Embedding(vec![0.0; 4]), 1).is_err());
    }
}
