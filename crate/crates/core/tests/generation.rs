use proptest::prelude::*;

use mvdr_core::analysis::self_bleu_4;
use mvdr_core::corpus::{Corpus, Document};
use mvdr_core::encoder::{EncoderConfig, EncoderParams};
use mvdr_core::querygen::{QgModel, SamplingConfig};
use mvdr_core::synthetic::{generate, SyntheticConfig};
use mvdr_core::text::tokenize;

fn synthetic_corpus() -> Corpus {
    generate(&SyntheticConfig {
        n_docs: 80,
        ..SyntheticConfig::default()
    })
    .unwrap()
    .corpus
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn queries_respect_length_and_count(seed in any::<u64>(), k in 1usize..12, max_tokens in 2usize..10, top_k in 1usize..12) {
        let corpus = synthetic_corpus();
        let cfg = SamplingConfig { k_views: k, max_query_tokens: max_tokens, top_k, ..SamplingConfig::default() };
        let model = QgModel::fit(&corpus).unwrap();
        for set in model.generate_corpus(&corpus, &cfg, seed).unwrap() {
            prop_assert_eq!(set.k(), k);
            for q in &set.queries {
                let n = tokenize(q).len();
                prop_assert!(n >= 1 && n <= max_tokens, "{q:?}");
            }
        }
    }

    #[test]
    fn greedy_pool_collapses_views(seed in any::<u64>()) {
        let corpus = synthetic_corpus();
        let cfg = SamplingConfig { top_k: 1, ..SamplingConfig::default() };
        let model = QgModel::fit(&corpus).unwrap();
        for set in model.generate_corpus(&corpus, &cfg, seed).unwrap().iter().take(10) {
            prop_assert!(set.queries.iter().all(|q| q == &set.queries[0]));
            prop_assert!((self_bleu_4(&set.queries).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn generation_is_deterministic_and_shard_invariant() {
    let corpus = synthetic_corpus();
    let model = QgModel::fit(&corpus).unwrap();
    let cfg = SamplingConfig::default();
    let whole = model.generate_corpus(&corpus, &cfg, 9).unwrap();
    assert_eq!(whole, model.generate_corpus(&corpus, &cfg, 9).unwrap());
    let mut sharded = Vec::new();
    for chunk in corpus.docs().chunks(13) {
        let shard = Corpus::new(chunk.to_vec()).unwrap();
        sharded.extend(model.generate_corpus(&shard, &cfg, 9).unwrap());
    }
    assert_eq!(whole, sharded);
    let pooled = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| model.generate_corpus(&corpus, &cfg, 9).unwrap());
    assert_eq!(whole, pooled);
}

#[test]
fn generated_text_stays_inside_the_document_and_templates() {
    let corpus = Corpus::new(vec![
        Document::new("a", "alpha beta gamma delta").unwrap(),
        Document::new("b", "epsilon zeta eta theta").unwrap(),
        Document::new("c", "iota kappa alpha").unwrap(),
    ])
    .unwrap();
    let model = QgModel::fit_with_templates(&corpus, &["what is"]).unwrap();
    let cfg = SamplingConfig {
        k_views: 2,
        ..SamplingConfig::default()
    };
    let sets = model.generate_corpus(&corpus, &cfg, 0).unwrap();
    assert_eq!(sets.len(), 3);
    for (set, doc) in sets.iter().zip(corpus.docs()) {
        assert_eq!(set.k(), 2);
        let doc_tokens = tokenize(&doc.text);
        for q in &set.queries {
            for t in tokenize(q) {
                assert!(
                    t == "what" || t == "is" || doc_tokens.contains(&t),
                    "{t} in {q}"
                );
            }
        }
    }
}

#[test]
fn encoder_embeddings_ignore_tokens_past_the_limit() {
    let cfg = EncoderConfig {
        embed_dim: 8,
        hash_buckets: 512,
        max_query_tokens: 3,
        max_doc_tokens: 4,
        ..EncoderConfig::default()
    };
    let p = EncoderParams::<f32>::init(cfg, 0).unwrap();
    assert_eq!(
        p.encode_query("a b c").unwrap(),
        p.encode_query("a b c d e").unwrap()
    );
    assert_ne!(
        p.encode_query("a b c").unwrap(),
        p.encode_query("a b d").unwrap()
    );
    assert_eq!(
        p.encode_document_de("w x y z").unwrap(),
        p.encode_document_de("w x y z extra words").unwrap()
    );
}
