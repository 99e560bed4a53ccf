use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use convsdg::datamodel::{
    load_collection, read_qrels, read_qrels_with_source, read_run, read_sessions, write_qrels, write_run,
    write_sessions, CollectionFormat, Qrels, QrelsSource,
};
use convsdg::evaluation::{evaluate_run, paired_t_test, parse_metrics};
use convsdg::fixture::{read_topics, FixtureSpec, SyntheticFixture};
use convsdg::llm::{connect, BackendKind};
use convsdg::pipeline::{
    run_data_size_ablation, run_pipeline, run_query_form_ablation, Layout, Overrides, PipelineConfig, Resources,
    Scenario, SupervisionRetriever, DEFAULT_FRACTIONS,
};
use convsdg::query_aug::{augment_dataset, merge_datasets, AugmentationConfig};
use convsdg::retrieval::{Encoder, SearchMode};
use convsdg::session_gen::generate_session_corpus;
use convsdg::supervision::QueryForm;

#[derive(Parser)]
#[command(name = "convsdg", version, about = "Synthetic conversational search data and dense retriever training")]
struct Cli {
    /// Pipeline config (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Skip stages whose outputs already exist.
    #[arg(long, global = true)]
    resume: bool,
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,
    /// Passage collection (TSV), overriding the config.
    #[arg(long, global = true)]
    collection: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Write whole sessions from topic descriptions.
    GenerateDialogue(GenerateArgs),
    /// Paraphrase annotated turns and merge them with the originals.
    AugmentQueries(AugmentArgs),
    /// Attach pseudo-relevance labels to generated sessions.
    BuildSupervision(SuperviseArgs),
    /// Fine-tune the query encoder.
    Train(TrainArgs),
    /// Rank the collection for every turn of a sessions file.
    Retrieve(RetrieveArgs),
    /// Score a run against qrels.
    Evaluate(EvaluateArgs),
    /// Run every stage of the configured scenario.
    Pipeline(PipelineArgs),
    /// Retrain on growing fractions of the training set.
    AblateSize(AblateSizeArgs),
    /// Compare the four query forms used for pseudo labelling.
    AblateForm,
    /// Write the synthetic desk-scale corpus and a config for it.
    MakeFixture(FixtureArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    topics: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sessions_per_topic: Option<usize>,
    #[arg(long)]
    turns: Option<usize>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    sessions: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Rewrites per annotated turn.
    #[arg(long)]
    t: Option<usize>,
    /// Directory for the augmented and merged files; defaults to the workspace.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Merged (original + augmented) sessions; defaults to the file in the output directory.
    #[arg(long)]
    out_sessions: Option<PathBuf>,
    /// Merged qrels; defaults to the file in the output directory.
    #[arg(long)]
    out_qrels: Option<PathBuf>,
}

#[derive(Args)]
struct SuperviseArgs {
    #[arg(long)]
    sessions: Option<PathBuf>,
    #[arg(long)]
    form: Option<QueryForm>,
    #[arg(long, value_enum)]
    retriever: Option<RetrieverArg>,
    /// Candidates considered per turn.
    #[arg(long)]
    top_k: Option<usize>,
    /// Pseudo positives sampled per turn.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, alias = "out-qrels")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RetrieverArg {
    Bm25,
    Dense,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    sessions: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long, alias = "out-encoder")]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, alias = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct RetrieveArgs {
    /// Trained query encoder; the untrained one when omitted.
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Sessions file whose turns are the queries.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, alias = "out-run")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Bm25,
    #[value(name = "dense-exact", alias = "exact")]
    DenseExact,
    #[value(name = "dense-ann", alias = "ann")]
    DenseAnn,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Comma-separated, e.g. `mrr,ndcg@3,recall@100`.
    #[arg(long)]
    metrics: Option<String>,
    /// Minimum grade counted as relevant by MRR and recall.
    #[arg(long)]
    rel_threshold: Option<u32>,
    /// Second run for a paired t-test per metric.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Write per-query values here instead of stdout.
    #[arg(long)]
    per_query: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    DialogueUnsupervised,
    QuerySemisupervised,
}

#[derive(Args)]
struct AblateSizeArgs {
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FRACTIONS.to_vec())]
    fractions: Vec<f64>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&Overrides {
        workspace: cli.workspace.clone(),
        seed: cli.seed,
        resume: cli.resume,
        backend: cli.backend.map(|b| match b {
            Backend::Mock => BackendKind::Mock,
            Backend::Http => BackendKind::HttpChat,
        }),
    });
    if let Some(c) = &cli.collection {
        cfg.data.collection = Some(c.clone());
    }
    Ok(cfg)
}

fn pick(flag: &Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match flag.as_ref().or(config.as_ref()) {
        Some(p) => Ok(p.clone()),
        None => bail!("no {what} given (flag or config)"),
    }
}

fn collection_resources(cfg: &PipelineConfig) -> Result<Resources> {
    let path = pick(&None, &cfg.data.collection, "collection")?;
    let collection = load_collection(&path, CollectionFormat::Tsv)?;
    let eval_sessions = match &cfg.data.eval_sessions {
        Some(p) if p.is_file() => read_sessions(p)?,
        _ => Vec::new(),
    };
    let eval_qrels = match &cfg.data.eval_qrels {
        Some(p) if p.is_file() => read_qrels(p)?,
        _ => Qrels::default(),
    };
    Ok(Resources::new(cfg, collection, eval_sessions, eval_qrels)?)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = load_config(&cli)?;
    let layout = Layout::new(&cfg.workspace);

    match &cli.command {
        Command::GenerateDialogue(a) => {
            if let Some(n) = a.sessions_per_topic {
                cfg.generation.sessions_per_topic = n;
            }
            if let Some(n) = a.turns {
                cfg.generation.turns = n;
            }
            let topics = read_topics(pick(&a.topics, &cfg.data.topics, "topics file")?)?;
            let backend = connect(&cfg.backend)?;
            let (sessions, report) = generate_session_corpus(
                &topics,
                cfg.generation.sessions_per_topic,
                cfg.generation.turns,
                backend.as_ref(),
                &cfg.generation_params(),
            )?;
            let out = a.out.clone().unwrap_or_else(|| layout.sessions());
            ensure_parent(&out)?;
            write_sessions(&sessions, &out)?;
            print_json(&report)?;
        }
        Command::AugmentQueries(a) => {
            if let Some(t) = a.t {
                cfg.augmentation.t = t;
            }
            let sessions = read_sessions(pick(&a.sessions, &cfg.data.train_sessions, "sessions file")?)?;
            let qrels = read_qrels_with_source(pick(&a.qrels, &cfg.data.train_qrels, "qrels file")?, QrelsSource::Manual)?;
            let backend = connect(&cfg.backend)?;
            let aug_cfg = AugmentationConfig {
                t: cfg.augmentation.t,
                params: cfg.augmentation_params(),
            };
            let (aug, aug_qrels, report) = augment_dataset(&sessions, &qrels, &aug_cfg, backend.as_ref())?;
            let (merged, merged_qrels) = merge_datasets((&sessions, &qrels), (&aug, &aug_qrels))?;
            let out = Layout::new(a.out_dir.clone().unwrap_or_else(|| cfg.workspace.clone()));
            fs::create_dir_all(&out.root)?;
            write_sessions(&aug, out.augmented_sessions())?;
            write_qrels(&aug_qrels, out.augmented_qrels())?;
            let merged_sessions = a.out_sessions.clone().unwrap_or_else(|| out.merged_sessions());
            let merged_qrels_path = a.out_qrels.clone().unwrap_or_else(|| out.merged_qrels());
            ensure_parent(&merged_sessions)?;
            ensure_parent(&merged_qrels_path)?;
            write_sessions(&merged, merged_sessions)?;
            write_qrels(&merged_qrels, merged_qrels_path)?;
            print_json(&report)?;
        }
        Command::BuildSupervision(a) => {
            if let Some(form) = a.form {
                cfg.supervision.form = form;
            }
            if let Some(k) = a.top_k {
                cfg.supervision.top_k = k;
            }
            if let Some(m) = a.m {
                cfg.supervision.m = m;
            }
            if let Some(r) = a.retriever {
                cfg.supervision.retriever = match r {
                    RetrieverArg::Bm25 => SupervisionRetriever::Bm25,
                    RetrieverArg::Dense => SupervisionRetriever::Dense,
                };
            }
            let sessions = read_sessions(pick(&a.sessions, &Some(layout.sessions()), "sessions file")?)?;
            let res = collection_resources(&cfg)?;
            let (qrels, report) = res.supervise(&cfg, &sessions, cfg.supervision.form)?;
            let out = a.out.clone().unwrap_or_else(|| layout.pseudo_qrels());
            ensure_parent(&out)?;
            write_qrels(&qrels, &out)?;
            print_json(&report)?;
        }
        Command::Train(a) => {
            if let Some(e) = a.epochs {
                cfg.training.epochs = e;
            }
            if let Some(lr) = a.learning_rate {
                cfg.training.learning_rate = lr;
            }
            if let Some(b) = a.batch_size {
                cfg.training.batch_size = b;
            }
            let (default_s, default_q) = match cfg.scenario {
                Scenario::DialogueUnsupervised => (layout.sessions(), layout.pseudo_qrels()),
                Scenario::QuerySemisupervised => (layout.merged_sessions(), layout.merged_qrels()),
            };
            let sessions = read_sessions(a.sessions.clone().unwrap_or(default_s))?;
            let qrels = read_qrels(a.qrels.clone().unwrap_or(default_q))?;
            let res = collection_resources(&cfg)?;
            let examples = res.examples(&cfg, &sessions, &qrels);
            let (encoder, report) = res.train(&cfg, &examples)?;
            let out = a.out.clone().unwrap_or_else(|| layout.encoder());
            ensure_parent(&out)?;
            encoder.save(&out)?;
            print_json(&report)?;
        }
        Command::Retrieve(a) => {
            match a.mode {
                Some(ModeArg::DenseExact) => cfg.retrieval.mode = SearchMode::Exact,
                Some(ModeArg::DenseAnn) => cfg.retrieval.mode = SearchMode::Ann,
                Some(ModeArg::Bm25) | None => {}
            }
            if let Some(k) = a.k {
                cfg.retrieval.k = k;
            }
            let res = collection_resources(&cfg)?;
            let sessions = read_sessions(pick(&a.queries, &cfg.data.eval_sessions, "queries (sessions) file")?)?;
            let run = if matches!(a.mode, Some(ModeArg::Bm25)) {
                res.retrieve_bm25(&cfg, &sessions)?
            } else {
                let encoder = match &a.encoder {
                    Some(p) => Encoder::load(p)?,
                    None => res.initial_query_encoder(&cfg),
                };
                res.retrieve(&cfg, &encoder, &sessions)?
            };
            let out = a.out.clone().unwrap_or_else(|| layout.run());
            ensure_parent(&out)?;
            write_run(&run, &out)?;
            log::info!("wrote {} ranked quer(ies) to {}", run.queries.len(), out.display());
        }
        Command::Evaluate(a) => evaluate(&cfg, &layout, a)?,
        Command::Pipeline(a) => {
            if let Some(s) = a.scenario {
                cfg.scenario = match s {
                    ScenarioArg::DialogueUnsupervised => Scenario::DialogueUnsupervised,
                    ScenarioArg::QuerySemisupervised => Scenario::QuerySemisupervised,
                };
            }
            let manifest = run_pipeline(&cfg)?;
            print_json(&manifest)?;
        }
        Command::AblateSize(a) => print!("{}", run_data_size_ablation(&cfg, &a.fractions, None)?),
        Command::AblateForm => print!("{}", run_query_form_ablation(&cfg, None)?),
        Command::MakeFixture(a) => {
            let spec = FixtureSpec {
                seed: cli.seed.unwrap_or(FixtureSpec::default().seed),
                ..FixtureSpec::default()
            };
            let paths = SyntheticFixture::generate(&spec)?.write(&a.out)?;
            println!("{}", paths.config.display());
        }
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn evaluate(cfg: &PipelineConfig, layout: &Layout, a: &EvaluateArgs) -> Result<()> {
    let metrics = match &a.metrics {
        Some(list) => parse_metrics(list)?,
        None => cfg.metrics()?,
    };
    let threshold = a.rel_threshold.unwrap_or(cfg.evaluation.rel_threshold);
    let run = read_run(a.run.clone().unwrap_or_else(|| layout.run()))?;
    let qrels = read_qrels(pick(&a.qrels, &cfg.data.eval_qrels, "qrels file")?)?;
    let eval = evaluate_run(&run, &qrels, &metrics, threshold);

    let mut table = format!("query_id\t{}\n", eval.metrics.join("\t"));
    for (qid, row) in &eval.per_query {
        let values: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        table.push_str(&format!("{qid}\t{}\n", values.join("\t")));
    }
    match &a.per_query {
        Some(path) => fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{table}"),
    }
    let mut out = std::io::stdout().lock();
    let means: Vec<String> = eval.means.iter().map(|v| format!("{v:.6}")).collect();
    writeln!(out, "all\t{}", means.join("\t"))?;

    if let Some(other) = &a.compare {
        let other = evaluate_run(&read_run(other)?, &qrels, &metrics, threshold);
        writeln!(out, "metric\tmean_a\tmean_b\tt\tp")?;
        for (i, m) in eval.metrics.iter().enumerate() {
            let xs: Vec<f64> = eval.per_query.values().map(|r| r[i]).collect();
            let ys: Vec<f64> = other.per_query.values().map(|r| r[i]).collect();
            let test = paired_t_test(&xs, &ys)?;
            writeln!(out, "{m}\t{:.6}\t{:.6}\t{:.4}\t{:.6}", eval.means[i], other.means[i], test.t, test.p)?;
        }
    }
    Ok(())
}
