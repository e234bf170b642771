//! Contrastive training of the encoder: pair mapping, hard and in-batch
//! negatives, Adam with warmup then linear decay, and an optional
//! pretraining stage on generated (query, source document) pairs.

mod adam;
mod batch;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, GeneratedQuerySet, TrainingTriple};
use crate::encoder::{EncoderParams, Mode, Real};
use crate::error::{Error, Result};
use crate::text::derive_seed;

pub use adam::Adam;
pub use batch::{
    batch_loss, batch_loss_and_grad, build_batch, contrastive_loss, map_pair, map_triple, Batch,
    Candidate, MappedTriple,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Batch size of the pretraining stage, which uses in-batch negatives only.
    pub pretrain_batch_size: usize,
    pub negatives_per_positive: usize,
    /// Desk-scale default 1e-3. The BERT-scale value is 5e-6.
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub in_batch_negatives: bool,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            pretrain_batch_size: 256,
            negatives_per_positive: 7,
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            epochs_pretrain: 0,
            epochs_finetune: 10,
            in_batch_negatives: true,
            seed: 0,
            mode: Mode::Dce,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be ≥ 1".into()));
        }
        if self.batch_size == 0 || (self.in_batch_negatives && self.batch_size < 2) {
            return Err(Error::Config(
                "batch_size must be ≥ 2 with in-batch negatives".into(),
            ));
        }
        if self.pretrain_batch_size < 2 {
            return Err(Error::Config("pretrain_batch_size must be ≥ 2".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub stage: Stage,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    /// Mean loss of each epoch of a stage, in epoch order.
    pub fn epoch_means(&self, stage: Stage) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in self.records.iter().filter(|r| r.stage == stage) {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss;
            out[r.epoch].1 += 1;
        }
        out.into_iter()
            .map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 })
            .collect()
    }

    /// `step,stage,loss` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,stage,loss")?;
        for r in &self.records {
            writeln!(w, "{},{},{}", r.step, r.stage.name(), r.loss)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = crate::bytes::create_file(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Learning rate at `step` of a stage: linear warmup, then linear decay to 0.
pub fn scheduled_lr(base: f64, warmup_fraction: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let warmup = (warmup_fraction * total as f64).ceil() as usize;
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else {
        base * (total - step) as f64 / (total - warmup) as f64
    }
}

struct StagePlan<'a> {
    stage: Stage,
    examples: &'a [MappedTriple],
    batch_size: usize,
    negatives: usize,
    in_batch: bool,
    epochs: usize,
}

fn batches_for_epoch(
    n: usize,
    batch_size: usize,
    in_batch: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| !in_batch || c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn run_stage<T: Real>(
    params: &mut EncoderParams<T>,
    plan: &StagePlan<'_>,
    cfg: &TrainConfig,
    trace: &mut LossTrace,
) -> Result<()> {
    if plan.epochs == 0 || plan.examples.is_empty() {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, plan.stage.name()));
    let per_epoch = batches_for_epoch(
        plan.examples.len(),
        plan.batch_size,
        plan.in_batch,
        &mut rng.clone(),
    )
    .len();
    let total = per_epoch * plan.epochs;
    let mut adam = Adam::new(params);
    let mut step = 0usize;
    for epoch in 0..plan.epochs {
        for ids in batches_for_epoch(
            plan.examples.len(),
            plan.batch_size,
            plan.in_batch,
            &mut rng,
        ) {
            let members: Vec<MappedTriple> =
                ids.iter().map(|&i| plan.examples[i].clone()).collect();
            let batch = build_batch(&members, plan.negatives, plan.in_batch)?;
            let (loss, grads) = batch_loss_and_grad(params, &batch)?;
            let global = trace.records.len();
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    step: global,
                    stage: plan.stage.name().into(),
                });
            }
            let lr = scheduled_lr(cfg.learning_rate, cfg.warmup_fraction, step, total);
            adam.step(params, &grads, lr);
            if !params.is_finite() {
                return Err(Error::NonFinite {
                    step: global,
                    stage: plan.stage.name().into(),
                });
            }
            trace.records.push(LossRecord {
                step: global,
                stage: plan.stage,
                epoch,
                loss,
            });
            step += 1;
        }
        let means = trace.epoch_means(plan.stage);
        log::info!(
            "{} epoch {}/{}: mean loss {:.4}",
            plan.stage.name(),
            epoch + 1,
            plan.epochs,
            means.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

/// Pretraining examples: every generated query paired with its source document.
pub fn pretraining_examples(
    corpus: &Corpus,
    generated: &[GeneratedQuerySet],
    mode: Mode,
) -> Result<Vec<MappedTriple>> {
    let mut out = Vec::new();
    for set in generated {
        let doc = corpus
            .get(&set.doc_id)
            .ok_or_else(|| Error::UnknownDocument(set.doc_id.clone()))?;
        for (j, q) in set.queries.iter().enumerate() {
            out.push(map_pair(
                &format!("{}#{j}", set.doc_id),
                q,
                &doc.doc_id,
                &doc.text,
                mode,
            ));
        }
    }
    Ok(out)
}

/// Two-stage training: pretrain on generated pairs, then finetune on triples.
pub fn train<T: Real>(
    mut params: EncoderParams<T>,
    corpus: &Corpus,
    triples: &[TrainingTriple],
    generated: &[GeneratedQuerySet],
    cfg: &TrainConfig,
) -> Result<(EncoderParams<T>, LossTrace)> {
    cfg.validate()?;
    let mut trace = LossTrace::default();

    if cfg.epochs_pretrain > 0 {
        let examples = pretraining_examples(corpus, generated, cfg.mode)?;
        let plan = StagePlan {
            stage: Stage::Pretrain,
            examples: &examples,
            batch_size: cfg.pretrain_batch_size,
            negatives: 0,
            in_batch: true,
            epochs: cfg.epochs_pretrain,
        };
        run_stage(&mut params, &plan, cfg, &mut trace)?;
    }

    if cfg.epochs_finetune > 0 {
        for t in triples {
            t.validate()?;
        }
        let examples: Vec<MappedTriple> = triples.iter().map(|t| map_triple(t, cfg.mode)).collect();
        let plan = StagePlan {
            stage: Stage::Finetune,
            examples: &examples,
            batch_size: cfg.batch_size,
            negatives: cfg.negatives_per_positive,
            in_batch: cfg.in_batch_negatives,
            epochs: cfg.epochs_finetune,
        };
        run_stage(&mut params, &plan, cfg, &mut trace)?;
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let lrs: Vec<f64> = (0..10).map(|s| scheduled_lr(1.0, 0.2, s, 10)).collect();
        assert_eq!(lrs[0], 0.5);
        assert_eq!(lrs[1], 1.0);
        assert_eq!(lrs[2], 1.0);
        assert!((lrs[9] - 0.125).abs() < 1e-12);
        assert!(lrs.windows(2).skip(1).all(|w| w[1] <= w[0]));
        assert_eq!(scheduled_lr(1.0, 0.0, 0, 4), 1.0);
    }

    #[test]
    fn epoch_means() {
        let rec = |epoch, loss| LossRecord {
            step: 0,
            stage: Stage::Finetune,
            epoch,
            loss,
        };
        let t = LossTrace {
            records: vec![rec(0, 1.0), rec(0, 3.0), rec(1, 1.0)],
        };
        assert_eq!(t.epoch_means(Stage::Finetune), vec![2.0, 1.0]);
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv)
            .unwrap()
            .starts_with("step,stage,loss\n0,finetune,1\n"));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let ok = TrainConfig {
            batch_size: 1,
            in_batch_negatives: false,
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
    }
}
