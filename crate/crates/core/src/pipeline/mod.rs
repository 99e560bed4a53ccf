//! Stage runner for the two training scenarios, plus the ablation drivers.
//!
//! Every stage reads its inputs from and writes its outputs to files, so a
//! rerun with `resume` skips stages whose outputs already exist, up to the
//! first stage that has to run; everything after it runs again. Outputs are
//! written to a temporary name and renamed into place once complete.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{
    interpolate_env, AugmentationSection, DataConfig, EncoderConfig, EvaluationSection, GenerationConfig,
    Overrides, PipelineConfig, RetrievalSection, Scenario, SupervisionConfig, SupervisionRetriever,
    TrainingSection,
};

use crate::datamodel::{
    load_collection, read_qrels, read_qrels_with_source, read_run, read_sessions, write_qrels, write_run,
    write_sessions, CollectionFormat, ConversationSession, PassageCollection, Qrels, QrelsSource, RankedRun,
    TrainingExample,
};
use crate::evaluation::{evaluate_run, Evaluation, Metric};
use crate::fixture::read_topics;
use crate::llm::{connect, TextGenerator};
use crate::query_aug::{augment_dataset, merge_datasets, AugmentationConfig};
use crate::retrieval::{
    build_dense_index, dense_search, encode, lexical_search, DenseIndex, Encoder, EncoderRole, LexicalIndex,
    Retriever,
};
use crate::session_gen::generate_session_corpus;
use crate::supervision::{assign_pseudo_labels, PrfConfig, QueryForm};
use crate::training::{examples_from_sessions, sample_queries, train, TrainingReport};
use crate::{Error, Result};

/// File names inside a workspace.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn sessions(&self) -> PathBuf {
        self.root.join("sessions.jsonl")
    }
    pub fn pseudo_qrels(&self) -> PathBuf {
        self.root.join("qrels.txt")
    }
    pub fn augmented_sessions(&self) -> PathBuf {
        self.root.join("augmented_sessions.jsonl")
    }
    pub fn augmented_qrels(&self) -> PathBuf {
        self.root.join("augmented_qrels.txt")
    }
    pub fn merged_sessions(&self) -> PathBuf {
        self.root.join("train_sessions.jsonl")
    }
    pub fn merged_qrels(&self) -> PathBuf {
        self.root.join("train_qrels.txt")
    }
    pub fn encoder(&self) -> PathBuf {
        self.root.join("query_encoder.bin")
    }
    pub fn run(&self) -> PathBuf {
        self.root.join("run.trec")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub stage: String,
    /// Relative to the workspace.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub seed: u64,
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub queries: usize,
    pub fine_tuned: BTreeMap<String, f64>,
    /// Untrained query encoder, when `evaluation.baseline` is set.
    pub zero_shot: Option<BTreeMap<String, f64>>,
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
}

fn summary(eval: &Evaluation) -> BTreeMap<String, f64> {
    eval.metrics.iter().cloned().zip(eval.means.iter().copied()).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Runs `write` against a sibling temporary path, then renames it to `path`.
fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |tmp| fs::write(tmp, text).map_err(|e| Error::io(tmp, e)))
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` is not set")))
}

/// Collection, frozen passage side and evaluation data, loaded once and
/// shared by every training run of an experiment.
pub struct Resources {
    pub collection: PassageCollection,
    pub passage_encoder: Encoder,
    pub index: DenseIndex,
    pub eval_sessions: Vec<ConversationSession>,
    pub eval_qrels: Qrels,
    pub metrics: Vec<Metric>,
}

impl Resources {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let collection = load_collection(required(&cfg.data.collection, "data.collection")?, CollectionFormat::Tsv)?;
        let eval_sessions = read_sessions(required(&cfg.data.eval_sessions, "data.eval_sessions")?)?;
        let eval_qrels = read_qrels(required(&cfg.data.eval_qrels, "data.eval_qrels")?)?;
        Self::new(cfg, collection, eval_sessions, eval_qrels)
    }

    pub fn new(
        cfg: &PipelineConfig,
        collection: PassageCollection,
        eval_sessions: Vec<ConversationSession>,
        eval_qrels: Qrels,
    ) -> Result<Self> {
        let e = &cfg.encoder;
        let passage_encoder = Encoder::random(EncoderRole::Passage, e.dim, e.hash_width, e.passage_max_len, cfg.seed);
        let index = build_dense_index(&collection, &passage_encoder)?;
        Ok(Self {
            collection,
            passage_encoder,
            index,
            eval_sessions,
            eval_qrels,
            metrics: cfg.metrics()?,
        })
    }

    /// The query encoder before training: the passage weights under the query role.
    pub fn initial_query_encoder(&self, cfg: &PipelineConfig) -> Encoder {
        self.passage_encoder
            .with_role(EncoderRole::Query, cfg.encoder.query_max_len)
    }

    pub fn supervise(
        &self,
        cfg: &PipelineConfig,
        sessions: &[ConversationSession],
        form: QueryForm,
    ) -> Result<(Qrels, crate::supervision::PrfReport)> {
        let prf = PrfConfig {
            top_k: cfg.supervision.top_k,
            m: cfg.supervision.m,
            seed: cfg.seed,
            form,
        };
        match cfg.supervision.retriever {
            SupervisionRetriever::Bm25 => assign_pseudo_labels(sessions, &LexicalIndex::new(&self.collection), &prf),
            SupervisionRetriever::Dense => {
                let retriever = FrozenDense {
                    query_encoder: self.initial_query_encoder(cfg),
                    index: &self.index,
                    mode: cfg.retrieval.mode,
                };
                assign_pseudo_labels(sessions, &retriever, &prf)
            }
        }
    }

    pub fn examples(&self, cfg: &PipelineConfig, sessions: &[ConversationSession], qrels: &Qrels) -> Vec<TrainingExample> {
        examples_from_sessions(sessions, qrels, cfg.training.max_concat_len)
    }

    pub fn train(&self, cfg: &PipelineConfig, examples: &[TrainingExample]) -> Result<(Encoder, TrainingReport)> {
        train(
            examples,
            &self.collection,
            &self.initial_query_encoder(cfg),
            &self.passage_encoder,
            &cfg.train_config(),
        )
    }

    /// Ranks the collection for every turn of `sessions`.
    pub fn retrieve(
        &self,
        cfg: &PipelineConfig,
        query_encoder: &Encoder,
        sessions: &[ConversationSession],
    ) -> Result<RankedRun> {
        if query_encoder.dim() != self.index.dim() {
            return Err(Error::DimMismatch {
                expected: self.index.dim(),
                actual: query_encoder.dim(),
            });
        }
        let queries = sample_queries(sessions, cfg.training.max_concat_len);
        let hits: Vec<(String, Vec<(String, f64)>)> = queries
            .par_iter()
            .map(|(qid, text)| {
                let hits = dense_search(&encode(text, query_encoder), &self.index, cfg.retrieval.k, cfg.retrieval.mode)?;
                Ok((qid.clone(), hits.into_iter().map(|h| (h.pid, h.score)).collect()))
            })
            .collect::<Result<_>>()?;
        let mut run = RankedRun::new("convsdg");
        for (qid, scored) in hits {
            run.insert_scored(qid, scored);
        }
        Ok(run)
    }

    /// Lexical baseline over the same reformulated queries the dense path uses.
    pub fn retrieve_bm25(&self, cfg: &PipelineConfig, sessions: &[ConversationSession]) -> Result<RankedRun> {
        let index = LexicalIndex::new(&self.collection);
        let queries = sample_queries(sessions, cfg.training.max_concat_len);
        let hits: Vec<(String, Vec<(String, f64)>)> = queries
            .par_iter()
            .map(|(qid, text)| {
                let hits = lexical_search(text, &index, cfg.retrieval.k)?;
                Ok((qid.clone(), hits.into_iter().map(|h| (h.pid, h.score)).collect()))
            })
            .collect::<Result<_>>()?;
        let mut run = RankedRun::new("bm25");
        for (qid, scored) in hits {
            run.insert_scored(qid, scored);
        }
        Ok(run)
    }

    pub fn evaluate(&self, cfg: &PipelineConfig, run: &RankedRun) -> Evaluation {
        evaluate_run(run, &self.eval_qrels, &self.metrics, cfg.evaluation.rel_threshold)
    }

    /// Trains from the initial encoder and scores the eval sessions.
    pub fn train_and_evaluate(&self, cfg: &PipelineConfig, examples: &[TrainingExample]) -> Result<Evaluation> {
        let (encoder, _) = self.train(cfg, examples)?;
        let run = self.retrieve(cfg, &encoder, &self.eval_sessions)?;
        Ok(self.evaluate(cfg, &run))
    }
}

/// Dense retriever over a borrowed index.
struct FrozenDense<'a> {
    query_encoder: Encoder,
    index: &'a DenseIndex,
    mode: crate::retrieval::SearchMode,
}

impl Retriever for FrozenDense<'_> {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<crate::retrieval::ScoredPassage>> {
        dense_search(&encode(query, &self.query_encoder), self.index, k, self.mode)
    }
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    layout: Layout,
    backend: Option<&'a dyn TextGenerator>,
    owned_backend: Option<Box<dyn TextGenerator>>,
    resources: Option<Resources>,
    resume: bool,
    executed: Vec<String>,
    skipped: Vec<String>,
    artifacts: Vec<(String, PathBuf)>,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a PipelineConfig, backend: Option<&'a dyn TextGenerator>) -> Self {
        Self {
            cfg,
            layout: Layout::new(&cfg.workspace),
            backend,
            owned_backend: None,
            resources: None,
            resume: cfg.resume,
            executed: Vec::new(),
            skipped: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    fn backend(&mut self) -> Result<&dyn TextGenerator> {
        if let Some(b) = self.backend {
            return Ok(b);
        }
        if self.owned_backend.is_none() {
            self.owned_backend = Some(connect(&self.cfg.backend)?);
        }
        Ok(self.owned_backend.as_deref().expect("just set"))
    }

    fn resources(&mut self) -> Result<&Resources> {
        if self.resources.is_none() {
            self.resources = Some(Resources::load(self.cfg)?);
        }
        Ok(self.resources.as_ref().expect("just set"))
    }

    fn stage(
        &mut self,
        name: &str,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        body: impl FnOnce(&mut Self) -> Result<()>,
    ) -> Result<()> {
        for out in outputs {
            self.artifacts.push((name.to_string(), out.clone()));
        }
        if self.resume && outputs.iter().all(|p| p.is_file()) {
            log::info!("stage `{name}`: outputs present, skipping");
            self.skipped.push(name.to_string());
            return Ok(());
        }
        log::info!("stage `{name}`: running");
        body(self).map_err(|e| Error::Stage {
            stage: name.to_string(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "),
            source: Box::new(e),
        })?;
        self.executed.push(name.to_string());
        // everything downstream now has fresh inputs
        self.resume = false;
        Ok(())
    }

    fn generate(&mut self) -> Result<()> {
        let topics_path = required(&self.cfg.data.topics, "data.topics")?.to_path_buf();
        let out = self.layout.sessions();
        self.stage("generate", std::slice::from_ref(&topics_path), std::slice::from_ref(&out), |r| {
            let topics = read_topics(&topics_path)?;
            let cfg = r.cfg;
            let params = cfg.generation_params();
            let backend = r.backend()?;
            let (sessions, report) = generate_session_corpus(
                &topics,
                cfg.generation.sessions_per_topic,
                cfg.generation.turns,
                backend,
                &params,
            )?;
            log::info!("generated {}/{} session(s)", report.produced, report.requested);
            if sessions.is_empty() {
                return Err(Error::Precondition("no session could be generated".into()));
            }
            write_atomic(&out, |tmp| write_sessions(&sessions, tmp))
        })
    }

    fn supervise(&mut self) -> Result<()> {
        let input = self.layout.sessions();
        let out = self.layout.pseudo_qrels();
        self.stage("supervise", std::slice::from_ref(&input), std::slice::from_ref(&out), |r| {
            let sessions = read_sessions(&input)?;
            let cfg = r.cfg;
            let (qrels, report) = r.resources()?.supervise(cfg, &sessions, cfg.supervision.form)?;
            log::info!(
                "pseudo-labelled {} turn(s), {} skipped",
                report.labeled_turns,
                report.skipped_turns.len()
            );
            write_atomic(&out, |tmp| write_qrels(&qrels, tmp))
        })
    }

    fn augment(&mut self) -> Result<()> {
        let sessions_in = required(&self.cfg.data.train_sessions, "data.train_sessions")?.to_path_buf();
        let qrels_in = required(&self.cfg.data.train_qrels, "data.train_qrels")?.to_path_buf();
        let outs = [self.layout.augmented_sessions(), self.layout.augmented_qrels()];
        self.stage("augment", &[sessions_in.clone(), qrels_in.clone()], &outs.clone(), |r| {
            let sessions = read_sessions(&sessions_in)?;
            let qrels = read_qrels_with_source(&qrels_in, QrelsSource::Manual)?;
            let cfg = AugmentationConfig {
                t: r.cfg.augmentation.t,
                params: r.cfg.augmentation_params(),
            };
            let backend = r.backend()?;
            let (aug, aug_qrels, report) = augment_dataset(&sessions, &qrels, &cfg, backend)?;
            log::info!(
                "augmented {} turn(s) into {} sample(s); {} degenerate, {} substituted",
                report.augmented_turns,
                report.samples,
                report.degenerate,
                report.substituted
            );
            write_atomic(&outs[0], |tmp| write_sessions(&aug, tmp))?;
            write_atomic(&outs[1], |tmp| write_qrels(&aug_qrels, tmp))
        })
    }

    fn merge(&mut self) -> Result<()> {
        let inputs = [
            required(&self.cfg.data.train_sessions, "data.train_sessions")?.to_path_buf(),
            required(&self.cfg.data.train_qrels, "data.train_qrels")?.to_path_buf(),
            self.layout.augmented_sessions(),
            self.layout.augmented_qrels(),
        ];
        let outs = [self.layout.merged_sessions(), self.layout.merged_qrels()];
        self.stage("merge", &inputs.clone(), &outs.clone(), |_| {
            let orig = (read_sessions(&inputs[0])?, read_qrels(&inputs[1])?);
            let aug = (read_sessions(&inputs[2])?, read_qrels(&inputs[3])?);
            let (sessions, qrels) = merge_datasets((&orig.0, &orig.1), (&aug.0, &aug.1))?;
            write_atomic(&outs[0], |tmp| write_sessions(&sessions, tmp))?;
            write_atomic(&outs[1], |tmp| write_qrels(&qrels, tmp))
        })
    }

    fn training_data(&self) -> (PathBuf, PathBuf) {
        match self.cfg.scenario {
            Scenario::DialogueUnsupervised => (self.layout.sessions(), self.layout.pseudo_qrels()),
            Scenario::QuerySemisupervised => (self.layout.merged_sessions(), self.layout.merged_qrels()),
        }
    }

    fn train(&mut self) -> Result<()> {
        let (sessions_in, qrels_in) = self.training_data();
        let out = self.layout.encoder();
        self.stage("train", &[sessions_in.clone(), qrels_in.clone()], std::slice::from_ref(&out), |r| {
            let sessions = read_sessions(&sessions_in)?;
            let qrels = read_qrels(&qrels_in)?;
            let cfg = r.cfg;
            let res = r.resources()?;
            let examples = res.examples(cfg, &sessions, &qrels);
            let (encoder, report) = res.train(cfg, &examples)?;
            log::info!(
                "trained on {} example(s), {} batch(es); epoch losses {:?}",
                examples.len(),
                report.batches.batches,
                report.epoch_losses
            );
            write_atomic(&out, |tmp| encoder.save(tmp))
        })
    }

    fn retrieve(&mut self) -> Result<()> {
        let encoder_in = self.layout.encoder();
        let queries_in = required(&self.cfg.data.eval_sessions, "data.eval_sessions")?.to_path_buf();
        let out = self.layout.run();
        self.stage("retrieve", &[encoder_in.clone(), queries_in.clone()], std::slice::from_ref(&out), |r| {
            let encoder = Encoder::load(&encoder_in)?;
            let cfg = r.cfg;
            let res = r.resources()?;
            let run = res.retrieve(cfg, &encoder, &res.eval_sessions)?;
            write_atomic(&out, |tmp| write_run(&run, tmp))
        })
    }

    fn evaluate(&mut self) -> Result<()> {
        let run_in = self.layout.run();
        let qrels_in = required(&self.cfg.data.eval_qrels, "data.eval_qrels")?.to_path_buf();
        let out = self.layout.report();
        self.stage("evaluate", &[run_in.clone(), qrels_in.clone()], std::slice::from_ref(&out), |r| {
            let run = read_run(&run_in)?;
            let cfg = r.cfg;
            let res = r.resources()?;
            let eval = res.evaluate(cfg, &run);
            let zero_shot = if cfg.evaluation.baseline {
                let base = res.retrieve(cfg, &res.initial_query_encoder(cfg), &res.eval_sessions)?;
                Some(summary(&res.evaluate(cfg, &base)))
            } else {
                None
            };
            let report = Report {
                queries: eval.per_query.len(),
                fine_tuned: summary(&eval),
                zero_shot,
                per_query: eval
                    .per_query
                    .iter()
                    .map(|(q, row)| (q.clone(), eval.metrics.iter().cloned().zip(row.iter().copied()).collect()))
                    .collect(),
            };
            let mut json = serde_json::to_string_pretty(&report).map_err(|e| Error::Invalid(e.to_string()))?;
            json.push('\n');
            write_text(&out, &json)
        })
    }

    /// Stages that produce the training set, in order.
    fn data_stages(&mut self) -> Result<()> {
        match self.cfg.scenario {
            Scenario::DialogueUnsupervised => {
                self.generate()?;
                self.supervise()
            }
            Scenario::QuerySemisupervised => {
                self.augment()?;
                self.merge()
            }
        }
    }

    fn manifest(&self) -> Result<Manifest> {
        let mut artifacts = Vec::with_capacity(self.artifacts.len());
        for (stage, path) in &self.artifacts {
            let rel = path.strip_prefix(&self.layout.root).unwrap_or(path);
            artifacts.push(Artifact {
                stage: stage.clone(),
                path: rel.display().to_string(),
                sha256: sha256_file(path)?,
            });
        }
        Ok(Manifest {
            scenario: self.cfg.scenario.as_str().to_string(),
            seed: self.cfg.seed,
            executed: self.executed.clone(),
            skipped: self.skipped.clone(),
            artifacts,
        })
    }
}

/// Runs every stage of the configured scenario and writes `manifest.json`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    run_pipeline_with(cfg, None)
}

/// As [`run_pipeline`], with an explicit generator instead of `cfg.backend`.
pub fn run_pipeline_with(cfg: &PipelineConfig, backend: Option<&dyn TextGenerator>) -> Result<Manifest> {
    cfg.validate()?;
    let mut runner = Runner::new(cfg, backend);
    runner.data_stages()?;
    runner.train()?;
    runner.retrieve()?;
    runner.evaluate()?;
    let manifest = runner.manifest()?;
    let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
    json.push('\n');
    write_text(&runner.layout.manifest(), &json)?;
    Ok(manifest)
}

/// Loads the scenario's training set, producing it first if the workspace
/// does not hold it yet.
fn training_set(cfg: &PipelineConfig, backend: Option<&dyn TextGenerator>) -> Result<(Vec<ConversationSession>, Qrels)> {
    let mut runner = Runner::new(cfg, backend);
    runner.resume = true;
    runner.data_stages()?;
    let (s, q) = runner.training_data();
    Ok((read_sessions(s)?, read_qrels(q)?))
}

fn csv_header(first: &str, metrics: &[Metric]) -> String {
    let mut line = first.to_string();
    for m in metrics {
        let _ = write!(line, ",{m}");
    }
    line.push('\n');
    line
}

fn csv_row(out: &mut String, label: &str, eval: &Evaluation) {
    out.push_str(label);
    for v in &eval.means {
        let _ = write!(out, ",{v:.6}");
    }
    out.push('\n');
}

/// Keeps `round(fraction * n)` examples (at least one), chosen with `seed`
/// and returned in their original order.
pub fn subsample<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<Vec<T>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Precondition(format!("fraction must be in (0, 1], got {fraction}")));
    }
    if fraction == 1.0 {
        return Ok(items.to_vec());
    }
    let keep = ((fraction * items.len() as f64).round() as usize).clamp(1, items.len().max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, items.len(), keep.min(items.len())).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i].clone()).collect())
}

pub const DEFAULT_FRACTIONS: [f64; 4] = [0.25, 0.50, 0.75, 1.00];

/// Retrains from scratch on seeded subsamples of the training set and
/// returns a CSV with one row per fraction, ascending. Also written to
/// `ablation_size.csv` in the workspace.
pub fn run_data_size_ablation(
    cfg: &PipelineConfig,
    fractions: &[f64],
    backend: Option<&dyn TextGenerator>,
) -> Result<String> {
    cfg.validate()?;
    if fractions.is_empty() {
        return Err(Error::Precondition("no fractions given".into()));
    }
    for &f in fractions {
        subsample(&[()], f, 0)?;
    }
    let mut fractions = fractions.to_vec();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();

    let (sessions, qrels) = training_set(cfg, backend)?;
    let res = Resources::load(cfg)?;
    let examples = res.examples(cfg, &sessions, &qrels);
    let mut csv = csv_header("fraction", &res.metrics);
    for f in fractions {
        let subset = subsample(&examples, f, cfg.seed)?;
        log::info!("fraction {f:.2}: {} of {} example(s)", subset.len(), examples.len());
        let eval = res
            .train_and_evaluate(cfg, &subset)
            .map_err(|e| Error::Stage {
                stage: format!("ablate-size {f:.2}"),
                inputs: cfg.workspace.display().to_string(),
                source: Box::new(e),
            })?;
        csv_row(&mut csv, &format!("{f:.2}"), &eval);
    }
    write_text(&cfg.workspace.join("ablation_size.csv"), &csv)?;
    Ok(csv)
}

/// Pseudo-labels the generated sessions under each query form, trains and
/// evaluates each; one CSV row per form. Also written to
/// `ablation_form.csv` in the workspace.
pub fn run_query_form_ablation(cfg: &PipelineConfig, backend: Option<&dyn TextGenerator>) -> Result<String> {
    let mut cfg = cfg.clone();
    cfg.scenario = Scenario::DialogueUnsupervised;
    cfg.validate()?;
    let mut runner = Runner::new(&cfg, backend);
    runner.resume = true;
    runner.generate()?;
    let sessions = read_sessions(runner.layout.sessions())?;
    let res = Resources::load(&cfg)?;
    let mut csv = csv_header("form", &res.metrics);
    for form in QueryForm::ALL {
        let eval = (|| {
            let (qrels, _) = res.supervise(&cfg, &sessions, form)?;
            let examples = res.examples(&cfg, &sessions, &qrels);
            res.train_and_evaluate(&cfg, &examples)
        })()
        .map_err(|e| Error::Stage {
            stage: format!("ablate-form {form}"),
            inputs: runner.layout.sessions().display().to_string(),
            source: Box::new(e),
        })?;
        csv_row(&mut csv, form.as_str(), &eval);
    }
    write_text(&cfg.workspace.join("ablation_form.csv"), &csv)?;
    Ok(csv)
}
