use std::fs;

use proptest::prelude::*;

use mvdr_core::corpus::{
    load_corpus, load_generated_queries, load_qrels, load_queries, load_triples, write_corpus,
    write_generated_queries, write_qrels, write_queries, write_triples, Corpus, CorpusFormat,
    Document, GeneratedQuerySet, Qrels, Query, TrainingTriple,
};
use mvdr_core::encoder::{load_checkpoint, save_checkpoint, EncoderConfig, EncoderParams};
use mvdr_core::Error;

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn tsv_and_jsonl_corpora_load_in_file_order() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = write(&dir, "c.tsv", "d2\tSecond  doc\nd1\tfirst doc\n");
    let jsonl = write(
        &dir,
        "c.jsonl",
        "{\"doc_id\":\"d2\",\"text\":\"Second  doc\"}\n{\"doc_id\":\"d1\",\"text\":\"first doc\"}\n",
    );
    let a = load_corpus(&tsv, CorpusFormat::from_path(&tsv)).unwrap();
    let b = load_corpus(&jsonl, CorpusFormat::from_path(&jsonl)).unwrap();
    assert_eq!(a.docs(), b.docs());
    let ids: Vec<&str> = a.docs().iter().map(|d| d.doc_id.as_str()).collect();
    assert_eq!(ids, ["d2", "d1"]);
}

#[test]
fn corpus_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let dup = write(&dir, "dup.tsv", "d1\ta\nd1\tb\n");
    let err = load_corpus(&dup, CorpusFormat::Tsv).unwrap_err();
    assert!(err.to_string().contains("d1"), "{err}");
    let bad = write(
        &dir,
        "bad.jsonl",
        "{\"doc_id\":\"d1\",\"text\":\"a\"}\n# header\n",
    );
    let err = load_corpus(&bad, CorpusFormat::Jsonl).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
}

#[test]
fn rewriting_a_corpus_canonicalizes_whitespace() {
    let dir = tempfile::tempdir().unwrap();
    let src = write(&dir, "c.tsv", "d1\t  Hello \t World  \nd2\tx\n");
    let c = load_corpus(&src, CorpusFormat::Tsv).unwrap();
    let out = dir.path().join("out.tsv");
    write_corpus(&out, &c).unwrap();
    let once = fs::read(&out).unwrap();
    let again = load_corpus(&out, CorpusFormat::Tsv).unwrap();
    write_corpus(&out, &again).unwrap();
    assert_eq!(once, fs::read(&out).unwrap());
    assert_eq!(c.docs(), again.docs());
}

#[test]
fn qrels_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let q = load_qrels(&write(&dir, "a", "q1 0 d1 2\nq1 0 d2 0\n")).unwrap();
    assert_eq!(
        (q.grade("q1", "d1"), q.grade("q1", "d2"), q.len()),
        (2, 0, 2)
    );
    assert!(load_qrels(&write(&dir, "b", "q1 0 d1 -1\n")).is_err());
    assert!(load_qrels(&write(&dir, "c", "q1 0 d1 1\nq1 0 d1 1\n")).is_err());
}

#[test]
fn generated_query_files_enforce_uniform_k() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::new(vec![
        Document::new("a", "x").unwrap(),
        Document::new("b", "y").unwrap(),
    ])
    .unwrap();
    let line = |id: &str, k: usize| {
        let qs: Vec<String> = (0..k).map(|i| format!("\"q{i}\"")).collect();
        format!("{{\"doc_id\":\"{id}\",\"queries\":[{}]}}\n", qs.join(","))
    };
    let ok = write(&dir, "ok", &(line("a", 10) + &line("b", 10)));
    let sets = load_generated_queries(&ok, &corpus).unwrap();
    assert!(sets.iter().all(|s| s.k() == 10));
    let ragged = write(&dir, "r", &(line("a", 10) + &line("b", 9)));
    let msg = load_generated_queries(&ragged, &corpus)
        .unwrap_err()
        .to_string();
    assert!(msg.contains("10") && msg.contains('9'), "{msg}");
    assert!(load_generated_queries(&write(&dir, "e", &line("a", 0)), &corpus).is_err());
    assert!(load_generated_queries(&write(&dir, "u", &line("zz", 10)), &corpus).is_err());
}

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,6}"
}

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..8).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_format_round_trips(texts in prop::collection::vec(text(), 2..8), grades in prop::collection::vec(0u32..4, 2..8)) {
        let dir = tempfile::tempdir().unwrap();
        let docs: Vec<Document> = texts.iter().enumerate().map(|(i, t)| Document::new(format!("d{i}"), t).unwrap()).collect();
        let corpus = Corpus::new(docs.clone()).unwrap();
        let p = dir.path().join("c.tsv");
        write_corpus(&p, &corpus).unwrap();
        let loaded = load_corpus(&p, CorpusFormat::Tsv).unwrap();
        prop_assert_eq!(loaded.docs(), corpus.docs());

        let queries: Vec<Query> = texts.iter().enumerate().map(|(i, t)| Query::new(format!("q{i}"), t).unwrap()).collect();
        let p = dir.path().join("q.tsv");
        write_queries(&p, &queries).unwrap();
        prop_assert_eq!(load_queries(&p).unwrap(), queries.clone());

        let mut qrels = Qrels::new();
        for (i, g) in grades.iter().enumerate() {
            qrels.insert(&format!("q{}", i % 3), &format!("d{i}"), *g).unwrap();
        }
        let p = dir.path().join("qrels");
        write_qrels(&p, &qrels).unwrap();
        let back = load_qrels(&p).unwrap();
        prop_assert_eq!(back.iter().collect::<Vec<_>>(), qrels.iter().collect::<Vec<_>>());

        let sets: Vec<GeneratedQuerySet> = docs.iter().map(|d| GeneratedQuerySet {
            doc_id: d.doc_id.clone(),
            queries: texts.iter().take(2).cloned().collect(),
        }).collect();
        let p = dir.path().join("g.jsonl");
        write_generated_queries(&p, &sets).unwrap();
        prop_assert_eq!(load_generated_queries(&p, &corpus).unwrap(), sets);

        let triples = vec![TrainingTriple { query: queries[0].clone(), positive: docs[0].clone(), negatives: docs[1..].to_vec() }];
        let p = dir.path().join("t.jsonl");
        write_triples(&p, &triples).unwrap();
        prop_assert_eq!(load_triples(&p).unwrap(), triples);
    }

    #[test]
    fn checkpoints_round_trip_exactly(seed in any::<u64>(), dim in 1usize..9, tie in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EncoderConfig { embed_dim: dim, hash_buckets: 64, tie_params: tie, ..EncoderConfig::default() };
        let params = EncoderParams::<f32>::init(cfg, seed).unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &params).unwrap();
        prop_assert_eq!(load_checkpoint(&p).unwrap(), params);
    }
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let params = EncoderParams::<f32>::init(
        EncoderConfig {
            hash_buckets: 64,
            embed_dim: 4,
            ..EncoderConfig::default()
        },
        1,
    )
    .unwrap();
    let p = dir.path().join("m.ckpt");
    save_checkpoint(&p, &params).unwrap();
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_checkpoint(&p).is_err());
}
