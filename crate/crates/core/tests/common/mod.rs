//! Independent reference implementations used as test oracles. They are
//! written for obviousness, not speed, and share no code with the library.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

/// Longest common subsequence by enumerating every subset of the shorter
/// sequence and testing whether it is a subsequence of the longer one.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "brute force is exponential");
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let picked: Vec<&String> = (0..short.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &short[i])
            .collect();
        if picked.len() <= best {
            continue;
        }
        let mut it = long.iter();
        if picked.iter().all(|p| it.any(|x| x == *p)) {
            best = picked.len();
        }
    }
    best
}

pub fn rouge_l(cand: &[String], reference: &[String]) -> f64 {
    let l = brute_lcs(cand, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / cand.len() as f64;
    let r = l / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn count_occurrences(seq: &[String], gram: &[String]) -> usize {
    if gram.len() > seq.len() {
        return 0;
    }
    (0..=seq.len() - gram.len())
        .filter(|&i| seq[i..i + gram.len()] == *gram)
        .count()
}

/// Modified n-gram precision by direct counting: each distinct hypothesis
/// n-gram contributes min(count in hyp, max count in any reference).
pub fn modified_precision(hyp: &[String], refs: &[Vec<String>], n: usize) -> f64 {
    let total = hyp.len() + 1 - n;
    let mut seen: Vec<&[String]> = Vec::new();
    let mut clipped = 0;
    for i in 0..total {
        let g = &hyp[i..i + n];
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        let in_hyp = count_occurrences(hyp, g);
        let in_refs = refs
            .iter()
            .map(|r| count_occurrences(r, g))
            .max()
            .unwrap_or(0);
        clipped += in_hyp.min(in_refs);
    }
    clipped as f64 / total as f64
}

pub fn bleu4(hyp: &[String], refs: &[Vec<String>]) -> f64 {
    let orders: Vec<usize> = (1..=4).filter(|&n| n <= hyp.len()).collect();
    if orders.is_empty() {
        return 0.0;
    }
    let mut logs = 0.0;
    for &n in &orders {
        let p = modified_precision(hyp, refs, n);
        logs += if p == 0.0 { 1e-9f64.ln() } else { p.ln() };
    }
    let c = hyp.len();
    let mut r = refs[0].len();
    for x in refs {
        let (d_new, d_old) = (x.len().abs_diff(c), r.abs_diff(c));
        if d_new < d_old || (d_new == d_old && x.len() < r) {
            r = x.len();
        }
    }
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * (logs / orders.len() as f64).exp()
}

pub fn self_bleu4(qs: &[Vec<String>]) -> f64 {
    let mut sum = 0.0;
    for i in 0..qs.len() {
        let refs: Vec<Vec<String>> = qs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| q.clone())
            .collect();
        sum += bleu4(&qs[i], &refs);
    }
    sum / qs.len() as f64
}

/// Random short sentence over a tiny vocabulary so that overlaps are common.
pub fn random_sentence(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<String> {
    let vocab = ["a", "b", "c", "d", "e", "f"];
    let len = rng.gen_range(1..=max_len);
    (0..len)
        .map(|_| vocab[rng.gen_range(0..vocab.len())].to_owned())
        .collect()
}

/// Qrels as query → (doc → grade); run as query → ranked doc ids.
pub type Judgments = BTreeMap<String, BTreeMap<String, u32>>;
pub type Ranking = BTreeMap<String, Vec<String>>;

pub fn mrr(run: &Ranking, qrels: &Judgments, k: usize, threshold: u32) -> f64 {
    let mut sum = 0.0;
    for (q, judged) in qrels {
        let ranked = run.get(q).cloned().unwrap_or_default();
        for (i, d) in ranked.iter().enumerate() {
            if i >= k {
                break;
            }
            if judged.get(d).copied().unwrap_or(0) >= threshold {
                sum += 1.0 / (i as f64 + 1.0);
                break;
            }
        }
    }
    sum / qrels.len() as f64
}

pub fn recall(run: &Ranking, qrels: &Judgments, k: usize, threshold: u32) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for (q, judged) in qrels {
        let relevant: Vec<&String> = judged
            .iter()
            .filter(|(_, &g)| g >= threshold)
            .map(|(d, _)| d)
            .collect();
        if relevant.is_empty() {
            continue;
        }
        n += 1;
        let ranked = run.get(q).cloned().unwrap_or_default();
        let top: Vec<&String> = ranked.iter().take(k).collect();
        let found = relevant.iter().filter(|d| top.contains(d)).count();
        sum += found as f64 / relevant.len() as f64;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn dcg(grades: &[u32], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / (i as f64 + 2.0).log2())
        .sum()
}

fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

/// nDCG with the ideal DCG found by trying every ordering of the judged
/// documents.
pub fn ndcg(run: &Ranking, qrels: &Judgments, k: usize) -> f64 {
    let mut sum = 0.0;
    for (q, judged) in qrels {
        let ranked = run.get(q).cloned().unwrap_or_default();
        let gains: Vec<u32> = ranked
            .iter()
            .map(|d| judged.get(d).copied().unwrap_or(0))
            .collect();
        let all: Vec<u32> = judged.values().copied().collect();
        assert!(all.len() <= 7, "brute force is factorial");
        let ideal = permutations(&all)
            .iter()
            .map(|p| dcg(p, k))
            .fold(0.0, f64::max);
        if ideal > 0.0 {
            sum += dcg(&gains, k) / ideal;
        }
    }
    sum / qrels.len() as f64
}

/// Exhaustive multi-view retrieval: score every document by its best view,
/// sort by score then doc id, keep the top k.
pub fn max_pool_search(
    views: &[(String, Vec<f32>)],
    query: &[f32],
    k: usize,
) -> Vec<(String, f64)> {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for (doc, v) in views {
        let s: f64 = v
            .iter()
            .zip(query)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        let e = best.entry(doc.as_str()).or_insert(f64::NEG_INFINITY);
        if s > *e {
            *e = s;
        }
    }
    let mut all: Vec<(String, f64)> = best.into_iter().map(|(d, s)| (d.to_owned(), s)).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}
