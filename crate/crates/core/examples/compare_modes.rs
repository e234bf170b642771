//! Trains dual-encoder and dual-cross-encoder models on synthetic
//! collections and prints held-out MRR@10 per seed.
//!
//! Usage: compare_modes [pretrain_epochs] [finetune_epochs] [first_seed] [n_seeds]
//! Knobs: DIM (embedding size), LR.

use std::time::Instant;

use mvdr_core::encoder::{EncoderParams, Mode};
use mvdr_core::eval::mrr_at_k;
use mvdr_core::index::build_index;
use mvdr_core::pipeline::{self, synthetic_experiment_config};
use mvdr_core::synthetic::{generate, SyntheticConfig};
use mvdr_core::trainer::train;

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

fn main() -> mvdr_core::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .filter_map(|s| s.parse().ok())
        .collect();
    let arg = |i: usize, d: u64| args.get(i).copied().unwrap_or(d);
    let (pre, ft, first, n) = (
        arg(0, 5) as usize,
        arg(1, 10) as usize,
        arg(2, 0),
        arg(3, 5),
    );
    let mut gaps = Vec::new();
    for seed in first..first + n {
        let t0 = Instant::now();
        let data = generate(&SyntheticConfig {
            seed,
            ..Default::default()
        })?;
        let mut cfg = synthetic_experiment_config();
        cfg.seed = seed;
        cfg.encoder.embed_dim = env("DIM", cfg.encoder.embed_dim);
        cfg.train.learning_rate = env("LR", cfg.train.learning_rate);
        cfg.train.epochs_pretrain = pre;
        cfg.train.epochs_finetune = ft;
        let gen = pipeline::generate_queries(&cfg, &data.corpus)?;
        let init = pipeline::initial_params(&cfg)?;
        let dev = |p: &EncoderParams<f32>, mode| -> mvdr_core::Result<f64> {
            let index = build_index(p, &data.corpus, &gen, mode)?;
            let run = pipeline::search(p, &index, &data.dev_queries, 10, "x")?;
            Ok(mrr_at_k(&run, &data.dev_qrels, 10, 1).aggregate)
        };
        let mut line = format!("seed {seed}: untrained dce {:.4}", dev(&init, Mode::Dce)?);
        let mut scores = Vec::new();
        for mode in [Mode::De, Mode::Dce] {
            cfg.mode = mode;
            let (p, _) = train(
                init.clone(),
                &data.corpus,
                &data.train_triples,
                &gen,
                &cfg.train_config(),
            )?;
            let m = dev(&p, mode)?;
            scores.push(m);
            line += &format!(" | {mode} {m:.4}");
        }
        gaps.push(scores[1] - scores[0]);
        println!(
            "{line} | gap {:+.4}  [{:.1}s]",
            scores[1] - scores[0],
            t0.elapsed().as_secs_f64()
        );
    }
    let wins = gaps.iter().filter(|&&g| g > 0.0).count();
    println!(
        "mean gap {:+.4}, {wins}/{} positive",
        gaps.iter().sum::<f64>() / gaps.len() as f64,
        gaps.len()
    );
    Ok(())
}
