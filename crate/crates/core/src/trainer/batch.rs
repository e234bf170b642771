//! Triple mapping, batch assembly, and the batched contrastive objective with
//! its analytic gradient.

use rayon::prelude::*;

use crate::corpus::TrainingTriple;
use crate::encoder::{EncoderInput, EncoderParams, Mode, ParamGrads, Real, Trace};
use crate::error::{Error, Result};

/// A document-side input tagged with its source document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub doc_id: String,
    pub input: EncoderInput,
}

/// A training example after the pair mapping: in dce mode every document
/// side carries the gold query, in de mode documents pass through.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappedTriple {
    pub query_id: String,
    pub query_text: String,
    pub positive: Candidate,
    pub negatives: Vec<Candidate>,
}

fn doc_side(mode: Mode, query: &str, doc_id: &str, doc_text: &str) -> Candidate {
    let input = match mode {
        Mode::Dce => EncoderInput::Pair {
            query: query.to_owned(),
            document: doc_text.to_owned(),
        },
        Mode::De => EncoderInput::Document(doc_text.to_owned()),
    };
    Candidate {
        doc_id: doc_id.to_owned(),
        input,
    }
}

/// (q, d+, d−) ↦ (q, q+d+, q+d−) in dce mode; identity in de mode.
pub fn map_triple(triple: &TrainingTriple, mode: Mode) -> MappedTriple {
    let q = &triple.query.text;
    MappedTriple {
        query_id: triple.query.query_id.clone(),
        query_text: q.clone(),
        positive: doc_side(mode, q, &triple.positive.doc_id, &triple.positive.text),
        negatives: triple
            .negatives
            .iter()
            .map(|d| doc_side(mode, q, &d.doc_id, &d.text))
            .collect(),
    }
}

/// A pseudo-labelled example with no hard negatives, used for pretraining.
pub fn map_pair(
    query_id: &str,
    query: &str,
    doc_id: &str,
    doc_text: &str,
    mode: Mode,
) -> MappedTriple {
    MappedTriple {
        query_id: query_id.to_owned(),
        query_text: query.to_owned(),
        positive: doc_side(mode, query, doc_id, doc_text),
        negatives: Vec::new(),
    }
}

/// Softmax cross-entropy with the positive as target, max-subtracted.
pub fn contrastive_loss(score_pos: f64, scores_neg: &[f64]) -> Result<f64> {
    if scores_neg.is_empty() {
        return Err(Error::Invalid(
            "contrastive loss needs at least one negative".into(),
        ));
    }
    let max = scores_neg.iter().copied().fold(score_pos, f64::max);
    let sum: f64 = std::iter::once(score_pos)
        .chain(scores_neg.iter().copied())
        .map(|s| (s - max).exp())
        .sum();
    Ok(max + sum.ln() - score_pos)
}

/// Queries, a shared candidate pool, and per-query candidate lists.
#[derive(Debug, Clone)]
pub struct Batch {
    pub queries: Vec<EncoderInput>,
    pub candidates: Vec<Candidate>,
    /// `rows[i]` indexes into `candidates`; `rows[i][0]` is query i's positive.
    pub rows: Vec<Vec<usize>>,
}

impl Batch {
    pub fn candidates_per_query(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }
}

/// Builds the candidate layout: own positive, own `m` hard negatives, then
/// every other example's positive and hard negatives in batch order.
///
/// Cross-example candidates drawn from the query's own positive document are
/// left out: they would be (other query + positive document) pairs, which are
/// not negatives.
pub fn build_batch(
    triples: &[MappedTriple],
    negatives_per_positive: usize,
    in_batch: bool,
) -> Result<Batch> {
    if in_batch && triples.len() < 2 {
        return Err(Error::Invalid(format!(
            "in-batch negatives need a batch of at least 2, got {}",
            triples.len()
        )));
    }
    let mut candidates = Vec::new();
    let mut spans = Vec::with_capacity(triples.len());
    for t in triples {
        if t.negatives.len() < negatives_per_positive {
            return Err(Error::Invalid(format!(
                "query `{}` has {} negatives, {} required",
                t.query_id,
                t.negatives.len(),
                negatives_per_positive
            )));
        }
        let start = candidates.len();
        candidates.push(t.positive.clone());
        candidates.extend(t.negatives[..negatives_per_positive].iter().cloned());
        spans.push(start..candidates.len());
    }
    let rows = triples
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut row: Vec<usize> = spans[i].clone().collect();
            if in_batch {
                for (j, span) in spans.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    row.extend(
                        span.clone()
                            .filter(|&c| candidates[c].doc_id != t.positive.doc_id),
                    );
                }
            }
            row
        })
        .collect();
    Ok(Batch {
        queries: triples
            .iter()
            .map(|t| EncoderInput::Query(t.query_text.clone()))
            .collect(),
        candidates,
        rows,
    })
}

/// Items per gradient chunk. Fixed so that summation order, and therefore
/// the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 16;

fn forward_all<T: Real>(
    params: &EncoderParams<T>,
    inputs: &[&EncoderInput],
) -> Result<Vec<Trace<T>>> {
    inputs.par_iter().map(|i| params.forward(i)).collect()
}

/// Per-row score lists, `f64`.
fn score_rows<T: Real>(batch: &Batch, q: &[Trace<T>], c: &[Trace<T>]) -> Vec<Vec<f64>> {
    batch
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|&j| crate::encoder::dot_f64(&q[i].output, &c[j].output))
                .collect()
        })
        .collect()
}

/// Mean contrastive loss over queries that have at least one negative.
pub fn batch_loss<T: Real>(params: &EncoderParams<T>, batch: &Batch) -> Result<f64> {
    let q = forward_all(params, &batch.queries.iter().collect::<Vec<_>>())?;
    let c = forward_all(
        params,
        &batch
            .candidates
            .iter()
            .map(|c| &c.input)
            .collect::<Vec<_>>(),
    )?;
    let mut total = 0.0;
    let mut n = 0usize;
    for scores in score_rows(batch, &q, &c) {
        if scores.len() < 2 {
            continue;
        }
        total += contrastive_loss(scores[0], &scores[1..])?;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Loss and ∂loss/∂params for one batch.
pub fn batch_loss_and_grad<T: Real>(
    params: &EncoderParams<T>,
    batch: &Batch,
) -> Result<(f64, ParamGrads<T>)> {
    let q_inputs: Vec<&EncoderInput> = batch.queries.iter().collect();
    let c_inputs: Vec<&EncoderInput> = batch.candidates.iter().map(|c| &c.input).collect();
    let q = forward_all(params, &q_inputs)?;
    let c = forward_all(params, &c_inputs)?;
    let dim = params.config.embed_dim;

    let rows = score_rows(batch, &q, &c);
    let active = rows.iter().filter(|r| r.len() >= 2).count();
    let mut d_q = vec![vec![0.0f64; dim]; q.len()];
    let mut d_c = vec![vec![0.0f64; dim]; c.len()];
    let mut total = 0.0;
    if active > 0 {
        let norm = 1.0 / active as f64;
        for (i, (scores, row)) in rows.iter().zip(&batch.rows).enumerate() {
            if scores.len() < 2 {
                continue;
            }
            total += contrastive_loss(scores[0], &scores[1..])?;
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (pos, (&j, e)) in row.iter().zip(&exps).enumerate() {
                let target = if pos == 0 { 1.0 } else { 0.0 };
                let g = (e / z - target) * norm;
                for k in 0..dim {
                    d_q[i][k] += g * c[j].output[k].as_f64();
                    d_c[j][k] += g * q[i].output[k].as_f64();
                }
            }
        }
        total *= norm;
    }

    // (input, trace, upstream gradient) for every encoding in a fixed order
    let work: Vec<(&EncoderInput, &Trace<T>, &Vec<f64>)> = q_inputs
        .iter()
        .zip(&q)
        .zip(&d_q)
        .chain(c_inputs.iter().zip(&c).zip(&d_c))
        .map(|((i, t), g)| (*i, t, g))
        .collect();
    let partials: Vec<ParamGrads<T>> = work
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = ParamGrads::zeros_like(params);
            for (input, trace, upstream) in chunk {
                let side = input.side();
                let upstream: Vec<T> = upstream.iter().map(|&v| T::of(v)).collect();
                params
                    .tower(side)
                    .backward(trace, &upstream, g.tower_mut(side));
            }
            g
        })
        .collect();
    let mut grads = ParamGrads::zeros_like(params);
    for p in &partials {
        grads.add(p);
    }
    Ok((total, grads))
}
