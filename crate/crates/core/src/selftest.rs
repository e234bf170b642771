//! Built-in property suites: gradient check, loss and metric fixtures, and
//! agreement of the fast implementations with brute-force references.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{max_rouge_l, pearson, rouge_l, self_bleu_4, sweep_views};
use crate::corpus::{Document, Qrels, Query, TrainingTriple};
use crate::encoder::{Embedding, EncoderConfig, EncoderParams, Mode};
use crate::error::Result;
use crate::eval::{mrr_at_k, ndcg_at_k, recall_at_k, RunFile, RunRow};
use crate::gradcheck::check_gradients;
use crate::index::{FlatIndex, ViewVector};
use crate::querygen::{QgModel, SamplingConfig};
use crate::synthetic::{generate, SyntheticConfig};
use crate::trainer::{build_batch, contrastive_loss, map_triple};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<(bool, String)>;

const CHECKS: &[(&str, Check)] = &[
    ("loss-fixtures", loss_fixtures),
    ("gradient-check", gradient_check),
    ("retrieval-oracle", retrieval_oracle),
    ("metric-oracle", metric_oracle),
    ("rouge-bleu-oracle", text_oracle),
    ("pearson-fixture", pearson_fixture),
    ("sweep-monotone", sweep_monotone),
];

/// Runs every suite. A suite that errors counts as failed.
pub fn run_all() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|&(name, f)| match f() {
            Ok((passed, detail)) => CheckOutcome {
                name,
                passed,
                detail,
            },
            Err(e) => CheckOutcome {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

fn loss_fixtures() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for n in [1usize, 7, 255] {
        let got = contrastive_loss(0.5, &vec![0.5; n])?;
        worst = worst.max((got - ((n + 1) as f64).ln()).abs());
    }
    Ok((worst <= 1e-9, format!("max |loss - ln(n+1)| = {worst:.2e}")))
}

fn gradient_check() -> Result<(bool, String)> {
    let doc = |id: String, text: String| Document::new(id, &text);
    let triples = (0..2)
        .map(|i| {
            Ok(TrainingTriple {
                query: Query::new(format!("q{i}"), &format!("where is item{i} kept"))?,
                positive: doc(format!("p{i}"), format!("item{i} is kept in the shed"))?,
                negatives: (0..7)
                    .map(|j| {
                        doc(
                            format!("n{i}-{j}"),
                            format!("an unrelated note {j} about item{i}"),
                        )
                    })
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0f64;
    for tie in [true, false] {
        let cfg = EncoderConfig {
            embed_dim: 4,
            hash_buckets: 48,
            tie_params: tie,
            ..EncoderConfig::default()
        };
        let params = EncoderParams::<f64>::init(cfg, 5)?;
        let mapped: Vec<_> = triples.iter().map(|t| map_triple(t, Mode::Dce)).collect();
        let batch = build_batch(&mapped, 7, true)?;
        for c in check_gradients(&params, &batch, 1e-5)? {
            worst = worst.max(c.relative_error);
        }
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e}")))
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

fn retrieval_oracle() -> Result<(bool, String)> {
    let (n, k_views, dim, top) = (1000, 10, 64, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut views = Vec::with_capacity(n * k_views);
    for d in 0..n {
        for v in 0..k_views {
            views.push(ViewVector {
                doc_id: format!("d{d}"),
                view_id: v as u32,
                embedding: random_vec(&mut rng, dim),
            });
        }
    }
    let index = FlatIndex::from_views(dim, k_views, views.clone())?;
    let mut mismatches = 0;
    for qi in 0..100 {
        let q = random_vec(&mut rng, dim);
        let got = index.search(&format!("q{qi}"), &Embedding(q.clone()), top)?;
        let mut best: BTreeMap<&str, f64> = BTreeMap::new();
        for v in &views {
            let s: f64 = v
                .embedding
                .iter()
                .zip(&q)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            let e = best.entry(&v.doc_id).or_insert(f64::NEG_INFINITY);
            *e = e.max(s);
        }
        let mut want: Vec<(&str, f64)> = best.into_iter().collect();
        want.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        want.truncate(top);
        let same = got.entries.len() == want.len()
            && got
                .entries
                .iter()
                .zip(&want)
                .all(|((d, s), (wd, ws))| d == wd && (s - ws).abs() <= 1e-6);
        if !same {
            mismatches += 1;
        }
    }
    Ok((mismatches == 0, format!("{mismatches}/100 queries differ")))
}

fn brute_ndcg(ranked: &[u32], judged: &[u32], k: usize) -> f64 {
    fn dcg(g: &[u32], k: usize) -> f64 {
        g.iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / (i as f64 + 2.0).log2())
            .sum()
    }
    fn best(rest: &mut Vec<u32>, prefix: &mut Vec<u32>, k: usize) -> f64 {
        if rest.is_empty() {
            return dcg(prefix, k);
        }
        let mut m = 0.0f64;
        for i in 0..rest.len() {
            let x = rest.remove(i);
            prefix.push(x);
            m = m.max(best(rest, prefix, k));
            prefix.pop();
            rest.insert(i, x);
        }
        m
    }
    let ideal = best(&mut judged.to_vec(), &mut Vec::new(), k);
    if ideal > 0.0 {
        dcg(ranked, k) / ideal
    } else {
        0.0
    }
}

fn metric_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n_docs = rng.gen_range(3..20);
        let mut qrels = Qrels::new();
        let mut rows = Vec::new();
        let mut expect = [0.0f64; 3];
        let mut n_with_rel = 0;
        let n_q = rng.gen_range(1..6);
        for q in 0..n_q {
            let qid = format!("q{q}");
            let mut judged = BTreeMap::new();
            for _ in 0..rng.gen_range(1..=5) {
                judged.insert(rng.gen_range(0..n_docs), rng.gen_range(0..=3u32));
            }
            for (&d, &g) in &judged {
                qrels.insert(&qid, &format!("d{d}"), g)?;
            }
            let mut ranked: Vec<usize> = (0..n_docs).filter(|_| rng.gen_bool(0.7)).collect();
            for i in (1..ranked.len()).rev() {
                ranked.swap(i, rng.gen_range(0..=i));
            }
            for (r, &d) in ranked.iter().enumerate() {
                rows.push(RunRow {
                    query_id: qid.clone(),
                    doc_id: format!("d{d}"),
                    rank: r + 1,
                    score: -(r as f64),
                    tag: "t".into(),
                });
            }
            let grade = |d: &usize| judged.get(d).copied().unwrap_or(0);
            if let Some(p) = ranked.iter().take(10).position(|d| grade(d) >= 1) {
                expect[0] += 1.0 / (p + 1) as f64;
            }
            let rel = judged.values().filter(|&&g| g >= 1).count();
            if rel > 0 {
                n_with_rel += 1;
                expect[1] +=
                    ranked.iter().take(1000).filter(|d| grade(d) >= 1).count() as f64 / rel as f64;
            }
            let gains: Vec<u32> = ranked.iter().map(grade).collect();
            let all: Vec<u32> = judged.values().copied().collect();
            expect[2] += brute_ndcg(&gains, &all, 10);
        }
        expect[0] /= n_q as f64;
        expect[2] /= n_q as f64;
        if n_with_rel > 0 {
            expect[1] /= n_with_rel as f64;
        }
        let run = RunFile::from_rows(rows)?;
        let got = [
            mrr_at_k(&run, &qrels, 10, 1).aggregate,
            recall_at_k(&run, &qrels, 1000, 1).aggregate,
            ndcg_at_k(&run, &qrels, 10).aggregate,
        ];
        for (g, e) in got.iter().zip(&expect) {
            worst = worst.max((g - e).abs());
        }
    }
    Ok((worst <= 1e-9, format!("max deviation {worst:.2e}")))
}

fn brute_lcs(a: &[&str], b: &[&str]) -> usize {
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<&str> = (0..a.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| a[i])
                .collect();
            let mut it = b.iter();
            sub.iter().all(|w| it.any(|x| x == w)).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

fn count(seq: &[&str], gram: &[&str]) -> usize {
    seq.windows(gram.len()).filter(|w| *w == gram).count()
}

fn brute_bleu(hyp: &[&str], refs: &[Vec<&str>]) -> f64 {
    let orders: Vec<usize> = (1..=4.min(hyp.len())).collect();
    let mut logs = 0.0;
    for &n in &orders {
        let mut distinct: Vec<&[&str]> = hyp.windows(n).collect();
        distinct.sort();
        distinct.dedup();
        let clipped: usize = distinct
            .iter()
            .map(|g| count(hyp, g).min(refs.iter().map(|r| count(r, g)).max().unwrap_or(0)))
            .sum();
        let p = clipped as f64 / (hyp.len() + 1 - n) as f64;
        logs += if p == 0.0 { 1e-9f64.ln() } else { p.ln() };
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
    bp * (logs / orders.len() as f64).exp()
}

fn text_oracle() -> Result<(bool, String)> {
    const VOCAB: [&str; 5] = ["a", "b", "c", "d", "e"];
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<&str> {
        (0..rng.gen_range(1..=8))
            .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())])
            .collect()
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (c, r) = (sentence(&mut rng), sentence(&mut rng));
        let l = brute_lcs(&c, &r) as f64;
        let want = if l == 0.0 {
            0.0
        } else {
            let (p, q) = (l / c.len() as f64, l / r.len() as f64);
            2.0 * p * q / (p + q)
        };
        worst = worst.max((rouge_l(&c.join(" "), &r.join(" "))? - want).abs());

        let qs: Vec<Vec<&str>> = (0..rng.gen_range(2..=4))
            .map(|_| sentence(&mut rng))
            .collect();
        let want: f64 = (0..qs.len())
            .map(|i| {
                let refs: Vec<Vec<&str>> = (0..qs.len())
                    .filter(|&j| j != i)
                    .map(|j| qs[j].clone())
                    .collect();
                brute_bleu(&qs[i], &refs)
            })
            .sum::<f64>()
            / qs.len() as f64;
        let joined: Vec<String> = qs.iter().map(|q| q.join(" ")).collect();
        worst = worst.max((self_bleu_4(&joined)? - want).abs());
    }
    let matched = max_rouge_l(
        &[
            "when was canada established",
            "when was canada discovered",
            "what year was canada founded",
            "how long has canada been a country",
            "how old is canada",
        ],
        "how old is canada",
    )?;
    Ok((
        worst <= 1e-9 && matched == 1.0,
        format!("max deviation {worst:.2e}, matched case study {matched}"),
    ))
}

/// (max-ROUGE-L, MRR@10) in percent for k = 1..10 generated queries.
pub const ROUGE_MRR_BY_K: [(f64, f64); 10] = [
    (42.49, 27.74),
    (50.93, 30.09),
    (55.67, 31.15),
    (58.45, 31.66),
    (60.63, 31.92),
    (62.28, 32.38),
    (63.57, 32.67),
    (64.62, 32.88),
    (65.46, 32.96),
    (66.22, 33.23),
];

fn pearson_fixture() -> Result<(bool, String)> {
    let (x, y): (Vec<f64>, Vec<f64>) = ROUGE_MRR_BY_K.iter().copied().unzip();
    let r = pearson(&x, &y)?;
    Ok(((r - 0.9958).abs() <= 5e-4, format!("r = {r:.7}")))
}

fn sweep_monotone() -> Result<(bool, String)> {
    let data = generate(&SyntheticConfig {
        n_docs: 100,
        ..SyntheticConfig::default()
    })?;
    let generated = QgModel::fit_with_templates(&data.corpus, &[""])?.generate_corpus(
        &data.corpus,
        &SamplingConfig::default(),
        0,
    )?;
    let ks: Vec<usize> = (1..=10).collect();
    let rows = sweep_views(&ks, &generated, &data.dev_queries, &data.dev_qrels, 1, None)?;
    let curve: Vec<f64> = rows.iter().map(|r| r.max_rouge_l_mean).collect();
    let ok = curve.windows(2).all(|w| w[1] >= w[0]);
    Ok((
        ok,
        format!("k=1 {:.4} … k=10 {:.4}", curve[0], curve[curve.len() - 1]),
    ))
}
