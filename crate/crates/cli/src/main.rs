//! `mvdr`: command-line driver for multi-view dense retrieval.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mvdr_core::analysis::RetrievalHandles;
use mvdr_core::corpus::{
    load_corpus, load_generated_queries, load_qrels, load_queries, load_triples,
    read_generated_queries, write_generated_queries, Corpus, CorpusFormat,
};
use mvdr_core::encoder::{load_checkpoint, save_checkpoint, Mode};
use mvdr_core::eval::{evaluate, format_table, mrr_at_k, write_report_csv, MetricReport, RunFile};
use mvdr_core::index::{build_index, FlatIndex};
use mvdr_core::pipeline::{self, PipelineConfig};
use mvdr_core::synthetic::{self, SyntheticConfig, SyntheticDataset};
use mvdr_core::{selftest, trainer};

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\ncore: mvdr-core ",
    env!("CARGO_PKG_VERSION"),
    "\nprofile: ",
    env!("MVDR_PROFILE"),
    "\ntarget: ",
    env!("MVDR_TARGET"),
);

#[derive(Parser)]
#[command(name = "mvdr", version, long_version = LONG_VERSION, about = "Multi-view dense retrieval")]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate k pseudo-queries per document.
    GenQueries(GenQueriesArgs),
    /// Train an encoder checkpoint.
    Train(TrainArgs),
    /// Encode the corpus into a flat index.
    Index(IndexArgs),
    /// Retrieve documents for a query file and write a TREC run.
    Search(SearchArgs),
    /// Score a run against qrels.
    Eval(EvalArgs),
    /// Generation quality, diversity and view-count sweep reports.
    Analyze(AnalyzeArgs),
    /// Run every stage from a config file.
    Pipeline(PipelineArgs),
    /// Run the built-in oracle and gradient suites.
    Selftest,
    /// Write a synthetic collection and a matching pipeline config.
    Synth(SynthArgs),
}

/// Settings shared by stage commands. Values come from `--config` when given,
/// and explicit flags win.
#[derive(Args)]
struct Common {
    /// Pipeline config file (TOML) supplying defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)
                .with_context(|| format!("reading config {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenQueriesArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Queries per document (k).
    #[arg(long)]
    views: Option<usize>,
    /// Sampling pool size.
    #[arg(long)]
    top_k: Option<usize>,
    /// Upper bound on content terms per query.
    #[arg(long)]
    max_terms: Option<usize>,
    /// Disable prefix templates.
    #[arg(long)]
    no_templates: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    triples: Option<PathBuf>,
    #[arg(long)]
    gen_queries: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    loss: Option<PathBuf>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    mode: Mode,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Required for dce.
    #[arg(long)]
    gen_queries: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Queries, `id<TAB>text`.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "mvdr")]
    tag: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "mrr@10,recall@1000,ndcg@10"
    )]
    metrics: Vec<String>,
    /// Minimum grade counted as relevant.
    #[arg(long, default_value_t = 1)]
    threshold: u32,
    /// Also write the report as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    gen_queries: PathBuf,
    #[arg(long)]
    gold_queries: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    threshold: u32,
    /// View counts to sweep; defaults to 1..=k.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<usize>,
    /// With `--checkpoint`, adds retrieval MRR@10 to the sweep.
    #[arg(long, requires = "checkpoint")]
    corpus: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long)]
    triples: Option<PathBuf>,
    #[arg(long)]
    gen_queries: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    docs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn corpus(path: &Path) -> Result<Corpus> {
    load_corpus(path, CorpusFormat::from_path(path))
        .with_context(|| format!("loading corpus {}", path.display()))
}

fn gen_queries(a: GenQueriesArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(v) = a.views {
        cfg.sampling.k_views = v;
    }
    if let Some(v) = a.top_k {
        cfg.sampling.top_k = v;
    }
    if let Some(v) = a.max_terms {
        cfg.sampling.max_terms = v;
    }
    if a.no_templates {
        cfg.templates = Some(vec![String::new()]);
    }
    cfg.sampling.validate()?;
    let corpus = corpus(&a.corpus)?;
    let sets = pipeline::generate_queries(&cfg, &corpus)?;
    write_generated_queries(&a.out, &sets)?;
    log::info!("wrote {} query sets to {}", sets.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(v) = a.pretrain_epochs {
        cfg.train.epochs_pretrain = v;
    }
    if let Some(v) = a.finetune_epochs {
        cfg.train.epochs_finetune = v;
    }
    if let Some(v) = a.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.embed_dim {
        cfg.encoder.embed_dim = v;
    }
    let tc = cfg.train_config();
    tc.validate()?;
    let corpus = corpus(&a.corpus)?;
    let generated = load_generated_queries(&a.gen_queries, &corpus)?;
    let triples = match (&a.triples, tc.epochs_finetune) {
        (Some(p), _) => load_triples(p)?,
        (None, 0) => Vec::new(),
        (None, _) => bail!("--triples is required when finetune epochs > 0"),
    };
    let (params, trace) = trainer::train(
        pipeline::initial_params(&cfg)?,
        &corpus,
        &triples,
        &generated,
        &tc,
    )?;
    save_checkpoint(&a.out, &params)?;
    let loss = a.loss.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.csv");
        p.into()
    });
    trace.save_csv(&loss)?;
    log::info!("wrote {} and {}", a.out.display(), loss.display());
    Ok(())
}

fn index(a: IndexArgs) -> Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let corpus = corpus(&a.corpus)?;
    let generated = match (&a.gen_queries, a.mode) {
        (Some(p), _) => load_generated_queries(p, &corpus)?,
        (None, Mode::De) => Vec::new(),
        (None, Mode::Dce) => bail!("--gen-queries is required for dce"),
    };
    let idx = build_index(&params, &corpus, &generated, a.mode)?;
    idx.save(&a.out)?;
    log::info!(
        "indexed {} rows for {} documents",
        idx.n_rows(),
        idx.n_docs()
    );
    Ok(())
}

fn search(a: SearchArgs) -> Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let idx = FlatIndex::load(&a.index)?;
    if params.config.embed_dim != idx.dim() {
        bail!(
            "checkpoint embeds into {} dimensions but the index holds {}",
            params.config.embed_dim,
            idx.dim()
        );
    }
    let queries = load_queries(&a.queries)?;
    let run = pipeline::search(&params, &idx, &queries, a.topk, &a.tag)?;
    run.save(&a.out)?;
    Ok(())
}

fn print_reports(reports: &[MetricReport]) {
    println!("{}", format_table(reports));
}

fn eval(a: EvalArgs) -> Result<()> {
    let run = RunFile::load(&a.run)?;
    let qrels = load_qrels(&a.qrels)?;
    let reports: Vec<MetricReport> = a
        .metrics
        .iter()
        .map(|m| Ok(evaluate(&run, &qrels, m.parse()?, a.threshold)))
        .collect::<Result<_>>()?;
    print_reports(&reports);
    if let Some(out) = &a.out {
        let f =
            std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
        write_report_csv(std::io::BufWriter::new(f), &reports)?;
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let gold = load_queries(&a.gold_queries)?;
    let qrels = load_qrels(&a.qrels)?;
    let run = RunFile::load(&a.run)?;
    let per_query = mrr_at_k(&run, &qrels, 10, a.threshold).per_query;
    let (generated, loaded) = match (&a.corpus, &a.checkpoint) {
        (Some(c), Some(k)) => {
            let corpus = corpus(c)?;
            (
                load_generated_queries(&a.gen_queries, &corpus)?,
                Some((corpus, load_checkpoint(k)?)),
            )
        }
        _ => (read_generated_queries(&a.gen_queries)?, None),
    };
    let handles = loaded
        .as_ref()
        .map(|(corpus, params)| RetrievalHandles { params, corpus });
    pipeline::analyze(
        &a.out,
        &generated,
        &gold,
        &qrels,
        &per_query,
        a.threshold,
        &a.sweep,
        handles.as_ref(),
    )?;
    log::info!("wrote reports to {}", a.out.display());
    Ok(())
}

fn run_pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    let p = &mut cfg.paths;
    for (slot, flag) in [
        (&mut p.corpus, a.corpus),
        (&mut p.queries, a.queries),
        (&mut p.qrels, a.qrels),
        (&mut p.triples, a.triples),
        (&mut p.gen_queries, a.gen_queries),
    ] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    if let Some(o) = a.out_dir {
        p.out_dir = o;
    }
    let outcome = pipeline::run(&cfg)?;
    print_reports(&outcome.reports);
    log::info!("run written to {}", outcome.run_path.display());
    Ok(())
}

fn run_selftest() -> Result<()> {
    let outcomes = selftest::run_all();
    for c in &outcomes {
        println!(
            "{} {:<20} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed = outcomes.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        bail!("{failed} self-test suite(s) failed");
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let data = synthetic::generate(&SyntheticConfig {
        n_docs: a.docs,
        seed: a.seed,
        ..SyntheticConfig::default()
    })?;
    data.write(&a.out)?;
    let mut cfg = pipeline::synthetic_experiment_config();
    cfg.seed = a.seed;
    SyntheticDataset::wire_paths(Path::new(""), &mut cfg.paths);
    cfg.paths.out_dir = PathBuf::from("out");
    cfg.save(&a.out.join("config.toml"))?;
    log::info!(
        "wrote synthetic collection and config.toml to {}",
        a.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::GenQueries(a) => gen_queries(a),
        Command::Train(a) => train(a),
        Command::Index(a) => index(a),
        Command::Search(a) => search(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::Pipeline(a) => run_pipeline(a),
        Command::Selftest => run_selftest(),
        Command::Synth(a) => synth(a),
    }
}
