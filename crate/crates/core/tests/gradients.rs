use mvdr_core::corpus::{Document, Query, TrainingTriple};
use mvdr_core::encoder::{EncoderConfig, EncoderParams, Mode};
use mvdr_core::gradcheck::check_gradients;
use mvdr_core::trainer::{build_batch, map_triple};

fn triple(i: usize, negs: usize) -> TrainingTriple {
    TrainingTriple {
        query: Query::new(format!("q{i}"), &format!("what is topic{i} about")).unwrap(),
        positive: Document::new(
            format!("p{i}"),
            &format!("topic{i} is about things number {i}"),
        )
        .unwrap(),
        negatives: (0..negs)
            .map(|j| {
                Document::new(
                    format!("n{i}_{j}"),
                    &format!("other text {j} mentioning topic{i} loosely"),
                )
                .unwrap()
            })
            .collect(),
    }
}

fn check(mode: Mode, tie: bool) {
    let cfg = EncoderConfig {
        embed_dim: 4,
        hash_buckets: 48,
        tie_params: tie,
        ..Default::default()
    };
    let params = EncoderParams::<f64>::init(cfg, 17).unwrap();
    let mapped: Vec<_> = (0..2).map(|i| map_triple(&triple(i, 7), mode)).collect();
    let batch = build_batch(&mapped, 7, true).unwrap();
    for c in check_gradients(&params, &batch, 1e-5).unwrap() {
        assert!(
            c.relative_error <= 1e-4,
            "{mode} tie={tie} {}: {:e}",
            c.name,
            c.relative_error
        );
        if c.name != "document.b_out" {
            assert!(c.analytic_norm > 1e-6, "{} has zero gradient", c.name);
        }
    }
}

#[test]
fn dce_tied() {
    check(Mode::Dce, true);
}

#[test]
fn dce_untied() {
    check(Mode::Dce, false);
}

#[test]
fn de_tied() {
    check(Mode::De, true);
}
