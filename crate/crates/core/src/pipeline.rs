//! Config-driven end-to-end runs: gen-queries → train → index → search →
//! eval → analyze.
//!
//! Every stage reads only declared inputs or files written by an earlier
//! stage into `out_dir`. Randomness comes from the single `seed` field;
//! each stage uses `derive_seed(seed, stage_name)`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    diversity_report, quality_records, sweep_views, write_buckets_csv, write_diversity_csv,
    write_quality_csv, write_sweep_csv, RetrievalHandles,
};
use crate::corpus::{
    load_corpus, load_generated_queries, load_qrels, load_queries, load_triples,
    validate_generated, write_generated_queries, Corpus, CorpusFormat, GeneratedQuerySet, Qrels,
    Query,
};
use crate::encoder::{load_checkpoint, save_checkpoint, EncoderConfig, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, mrr_at_k, write_report_csv, Metric, MetricReport, RunFile};
use crate::index::{build_index, FlatIndex};
use crate::querygen::{QgModel, SamplingConfig, DEFAULT_TEMPLATES};
use crate::text::derive_seed;
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    /// Evaluation queries, `id<TAB>text`.
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub triples: Option<PathBuf>,
    /// Existing generated queries to ingest instead of running the generator.
    pub gen_queries: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: None,
            queries: None,
            qrels: None,
            triples: None,
            gen_queries: None,
            out_dir: PathBuf::from("mvdr-out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Documents retrieved per query.
    pub top_k: usize,
    pub metrics: Vec<String>,
    pub relevance_threshold: u32,
    /// Generator prefix templates; the built-in list when absent.
    pub templates: Option<Vec<String>>,
    /// View counts for the quality sweep; `1..=k_views` when empty.
    pub sweep: Vec<usize>,
    pub paths: Paths,
    pub encoder: EncoderConfig,
    /// `mode` and `seed` here are overwritten by the pipeline's own fields.
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Dce,
            seed: 0,
            top_k: 1000,
            metrics: vec!["mrr@10".into(), "recall@1000".into(), "ndcg@10".into()],
            relevance_threshold: 1,
            templates: None,
            sweep: Vec::new(),
            paths: Paths::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            sampling: SamplingConfig::default(),
        }
    }
}

/// Output file names inside `out_dir`.
pub mod artifacts {
    pub const GEN_QUERIES: &str = "gen_queries.jsonl";
    pub const CHECKPOINT: &str = "model.ckpt";
    pub const LOSS: &str = "loss.csv";
    pub const INDEX: &str = "index.mvix";
    pub const RUN: &str = "run.trec";
    pub const METRICS: &str = "metrics.csv";
    pub const ANALYSIS: &str = "analysis";
}

impl PipelineConfig {
    /// Reads a TOML config. Relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_toml()?;
        let mut f = crate::bytes::create_file(path)?;
        std::io::Write::write_all(&mut f, text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn parsed_metrics(&self) -> Result<Vec<Metric>> {
        self.metrics.iter().map(|m| m.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.sampling.validate()?;
        self.train_config().validate()?;
        self.parsed_metrics()?;
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be ≥ 1".into()));
        }
        let need = |p: &Option<PathBuf>, what: &str| -> Result<()> {
            match p {
                Some(p) if p.exists() => Ok(()),
                Some(p) => Err(Error::Config(format!(
                    "{what} `{}` does not exist",
                    p.display()
                ))),
                None => Err(Error::Config(format!("paths.{what} is required"))),
            }
        };
        need(&self.paths.corpus, "corpus")?;
        need(&self.paths.queries, "queries")?;
        need(&self.paths.qrels, "qrels")?;
        if self.train.epochs_finetune > 0 {
            need(&self.paths.triples, "triples")?;
        }
        if self.paths.gen_queries.is_some() {
            need(&self.paths.gen_queries, "gen_queries")?;
        }
        Ok(())
    }

    /// Training settings with the pipeline's mode and derived seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            seed: derive_seed(self.seed, "train"),
            ..self.train.clone()
        }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }

    pub fn qg_model(&self, corpus: &Corpus) -> Result<QgModel> {
        match &self.templates {
            Some(t) => QgModel::fit_with_templates(corpus, t),
            None => QgModel::fit_with_templates(corpus, DEFAULT_TEMPLATES),
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corpus,
            &mut self.queries,
            &mut self.qrels,
            &mut self.triples,
            &mut self.gen_queries,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.out_dir);
    }
}

/// Runs the generator over the corpus with the stage-derived seed.
pub fn generate_queries(cfg: &PipelineConfig, corpus: &Corpus) -> Result<Vec<GeneratedQuerySet>> {
    let model = cfg.qg_model(corpus)?;
    model.generate_corpus(corpus, &cfg.sampling, derive_seed(cfg.seed, "gen-queries"))
}

pub fn initial_params(cfg: &PipelineConfig) -> Result<EncoderParams<f32>> {
    EncoderParams::init(cfg.encoder.clone(), derive_seed(cfg.seed, "init"))
}

/// Encodes every query and retrieves `top_k` documents each.
pub fn search(
    params: &EncoderParams<f32>,
    index: &FlatIndex,
    queries: &[Query],
    top_k: usize,
    tag: &str,
) -> Result<RunFile> {
    use rayon::prelude::*;
    let encoded = queries
        .par_iter()
        .map(|q| Ok((q.query_id.clone(), params.encode_query(&q.text)?)))
        .collect::<Result<Vec<_>>>()?;
    let lists = index.batch_search(&encoded, top_k)?;
    RunFile::from_ranked(&lists, tag)
}

pub fn run_tag(mode: Mode) -> String {
    format!("mvdr-{mode}")
}

/// Writes quality, diversity, bucket and sweep tables into `dir`.
#[allow(clippy::too_many_arguments)]
pub fn analyze(
    dir: &Path,
    generated: &[GeneratedQuerySet],
    gold: &[Query],
    qrels: &Qrels,
    per_query_metric: &BTreeMap<String, f64>,
    threshold: u32,
    sweep_k: &[usize],
    retrieval: Option<&RetrievalHandles<'_>>,
) -> Result<()> {
    let quality = quality_records(generated, gold, qrels, threshold, None)?;
    write_quality_csv(&dir.join("quality.csv"), &quality)?;
    let report = diversity_report(generated, per_query_metric, qrels, &quality, threshold)?;
    write_diversity_csv(&dir.join("diversity.csv"), &report.records)?;
    write_buckets_csv(&dir.join("buckets.csv"), &report.buckets)?;
    let ks: Vec<usize> = if sweep_k.is_empty() {
        let k = generated
            .iter()
            .map(GeneratedQuerySet::k)
            .min()
            .unwrap_or(0);
        (1..=k).collect()
    } else {
        sweep_k.to_vec()
    };
    let rows = sweep_views(&ks, generated, gold, qrels, threshold, retrieval)?;
    write_sweep_csv(&dir.join("sweep.csv"), &rows)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub reports: Vec<MetricReport>,
    pub run_path: PathBuf,
}

/// Runs every stage in order, writing artifacts under `paths.out_dir`.
pub fn run(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let paths = &cfg.paths;
    let corpus_path = paths.corpus.as_deref().expect("validated");
    let corpus = load_corpus(corpus_path, CorpusFormat::from_path(corpus_path))?;
    let queries = load_queries(paths.queries.as_deref().expect("validated"))?;
    let qrels = load_qrels(paths.qrels.as_deref().expect("validated"))?;

    log::info!("stage gen-queries");
    let generated = match &paths.gen_queries {
        Some(p) => load_generated_queries(p, &corpus)?,
        None => {
            let g = generate_queries(cfg, &corpus)?;
            validate_generated(&g, &corpus)?;
            g
        }
    };
    write_generated_queries(&cfg.out(artifacts::GEN_QUERIES), &generated)?;

    log::info!("stage train");
    let triples = match &paths.triples {
        Some(p) if cfg.train.epochs_finetune > 0 => load_triples(p)?,
        _ => Vec::new(),
    };
    let (params, trace) = train(
        initial_params(cfg)?,
        &corpus,
        &triples,
        &generated,
        &cfg.train_config(),
    )?;
    save_checkpoint(&cfg.out(artifacts::CHECKPOINT), &params)?;
    trace.save_csv(&cfg.out(artifacts::LOSS))?;
    let params = load_checkpoint(&cfg.out(artifacts::CHECKPOINT))?;

    log::info!("stage index");
    let index = build_index(&params, &corpus, &generated, cfg.mode)?;
    index.save(&cfg.out(artifacts::INDEX))?;
    let index = FlatIndex::load(&cfg.out(artifacts::INDEX))?;

    log::info!("stage search");
    let run = search(&params, &index, &queries, cfg.top_k, &run_tag(cfg.mode))?;
    let run_path = cfg.out(artifacts::RUN);
    run.save(&run_path)?;

    log::info!("stage eval");
    let run = RunFile::load(&run_path)?;
    let reports: Vec<MetricReport> = cfg
        .parsed_metrics()?
        .into_iter()
        .map(|m| evaluate(&run, &qrels, m, cfg.relevance_threshold))
        .collect();
    let metrics_path = cfg.out(artifacts::METRICS);
    let mut f = crate::bytes::create_file(&metrics_path)?;
    write_report_csv(&mut f, &reports).map_err(|e| Error::io(&metrics_path, e))?;

    log::info!("stage analyze");
    let per_query = mrr_at_k(&run, &qrels, 10, cfg.relevance_threshold).per_query;
    let handles = RetrievalHandles {
        params: &params,
        corpus: &corpus,
    };
    analyze(
        &cfg.out(artifacts::ANALYSIS),
        &generated,
        &queries,
        &qrels,
        &per_query,
        cfg.relevance_threshold,
        &cfg.sweep,
        (cfg.mode == Mode::Dce).then_some(&handles),
    )?;
    Ok(PipelineOutcome { reports, run_path })
}

/// Settings used for the synthetic end-to-end experiments: a small embedding
/// so that a single document vector is a real bottleneck, unigram features,
/// and a generator without prefix templates because synthetic queries have
/// none.
pub fn synthetic_experiment_config() -> PipelineConfig {
    PipelineConfig {
        top_k: 100,
        templates: Some(vec![String::new()]),
        encoder: EncoderConfig {
            embed_dim: 16,
            hash_buckets: 1 << 15,
            ngram_orders: vec![1],
            ..EncoderConfig::default()
        },
        train: TrainConfig {
            learning_rate: 2e-2,
            epochs_pretrain: 5,
            epochs_finetune: 10,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    }
}
