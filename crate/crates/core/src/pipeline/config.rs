//! Experiment configuration: one TOML file, `${VAR}` interpolation, and
//! command-line overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::evaluation::{parse_metrics, Metric};
use crate::llm::{BackendDescriptor, BackendKind, GenerationParams};
use crate::retrieval::{SearchMode, DEFAULT_DIM, DEFAULT_HASH_WIDTH, PASSAGE_MAX_LEN, SESSION_MAX_LEN};
use crate::session_gen::DEFAULT_TURNS;
use crate::supervision::QueryForm;
use crate::training::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    DialogueUnsupervised,
    QuerySemisupervised,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::DialogueUnsupervised => "dialogue_unsupervised",
            Scenario::QuerySemisupervised => "query_semisupervised",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub collection: Option<PathBuf>,
    /// JSONL, one topic description per line.
    pub topics: Option<PathBuf>,
    /// Manually annotated sessions and qrels for query-level augmentation.
    pub train_sessions: Option<PathBuf>,
    pub train_qrels: Option<PathBuf>,
    pub eval_sessions: Option<PathBuf>,
    pub eval_qrels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub sessions_per_topic: usize,
    pub turns: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            sessions_per_topic: 1,
            turns: DEFAULT_TURNS,
            temperature: 1.0,
            max_output_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionRetriever {
    #[default]
    Bm25,
    /// The untrained dense retriever.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisionConfig {
    pub retriever: SupervisionRetriever,
    pub top_k: usize,
    pub m: usize,
    pub form: QueryForm,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        Self {
            retriever: SupervisionRetriever::Bm25,
            top_k: 5,
            m: 3,
            form: QueryForm::QPlusAPlusTopic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSection {
    pub t: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for AugmentationSection {
    fn default() -> Self {
        Self {
            t: 2,
            temperature: 1.0,
            max_output_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    pub hash_width: usize,
    pub query_max_len: usize,
    pub passage_max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            hash_width: DEFAULT_HASH_WIDTH,
            query_max_len: SESSION_MAX_LEN,
            passage_max_len: PASSAGE_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub max_concat_len: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            max_concat_len: t.max_concat_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub mode: SearchMode,
    pub k: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            mode: SearchMode::Exact,
            k: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub metrics: Vec<String>,
    pub rel_threshold: u32,
    /// Also score the untrained encoder and report it next to the trained one.
    pub baseline: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            metrics: vec!["mrr".into(), "ndcg@3".into(), "recall@100".into()],
            rel_threshold: 1,
            baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scenario: Scenario,
    /// Master seed for generation, supervision, encoder init and training.
    pub seed: u64,
    pub workspace: PathBuf,
    pub resume: bool,
    pub data: DataConfig,
    pub backend: BackendDescriptor,
    pub generation: GenerationConfig,
    pub supervision: SupervisionConfig,
    pub augmentation: AugmentationSection,
    pub encoder: EncoderConfig,
    pub training: TrainingSection,
    pub retrieval: RetrievalSection,
    pub evaluation: EvaluationSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            seed: 42,
            workspace: PathBuf::from("workspace"),
            resume: false,
            data: DataConfig::default(),
            backend: BackendDescriptor::default(),
            generation: GenerationConfig::default(),
            supervision: SupervisionConfig::default(),
            augmentation: AugmentationSection::default(),
            encoder: EncoderConfig::default(),
            training: TrainingSection::default(),
            retrieval: RetrievalSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub workspace: Option<PathBuf>,
    pub seed: Option<u64>,
    pub resume: bool,
    pub backend: Option<BackendKind>,
}

/// Replaces every `${NAME}` with the environment variable's value.
pub fn interpolate_env(text: &str) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| Error::Config("unterminated `${` in config".into()))?;
        let name = &after[..end];
        let value = std::env::var(name)
            .map_err(|_| Error::Config(format!("environment variable `{name}` is not set")))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(&interpolate_env(text)?).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config file; relative paths are taken from its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [
            &mut d.collection,
            &mut d.topics,
            &mut d.train_sessions,
            &mut d.train_qrels,
            &mut d.eval_sessions,
            &mut d.eval_qrels,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        resolve(base, &mut self.workspace);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(w) = &o.workspace {
            self.workspace = w.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.resume {
            self.resume = true;
        }
        if let Some(b) = o.backend {
            self.backend.kind = b;
        }
    }

    pub fn metrics(&self) -> Result<Vec<Metric>> {
        let metrics = parse_metrics(&self.evaluation.metrics.join(","))?;
        if metrics.is_empty() {
            return Err(Error::Config("evaluation.metrics is empty".into()));
        }
        Ok(metrics)
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.generation.temperature,
            max_output_tokens: self.generation.max_output_tokens,
            seed: Some(self.seed),
        }
    }

    pub fn augmentation_params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.augmentation.temperature,
            max_output_tokens: self.augmentation.max_output_tokens,
            seed: Some(self.seed),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.training.batch_size,
            epochs: self.training.epochs,
            learning_rate: self.training.learning_rate,
            seed: self.seed,
            max_concat_len: self.training.max_concat_len,
            ..TrainConfig::default()
        }
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let mut required: Vec<(&str, &Option<PathBuf>)> = vec![
            ("data.collection", &d.collection),
            ("data.eval_sessions", &d.eval_sessions),
            ("data.eval_qrels", &d.eval_qrels),
        ];
        match self.scenario {
            Scenario::DialogueUnsupervised => required.push(("data.topics", &d.topics)),
            Scenario::QuerySemisupervised => {
                required.push(("data.train_sessions", &d.train_sessions));
                required.push(("data.train_qrels", &d.train_qrels));
            }
        }
        for (key, value) in required {
            match value {
                None => return Err(Error::Config(format!("`{key}` is required for {}", self.scenario.as_str()))),
                Some(p) if !p.is_file() => {
                    return Err(Error::Config(format!("`{key}`: {} does not exist", p.display())))
                }
                Some(_) => {}
            }
        }
        if self.generation.turns == 0 || self.generation.sessions_per_topic == 0 {
            return Err(Error::Config("generation.turns and sessions_per_topic must be >= 1".into()));
        }
        if self.augmentation.t == 0 {
            return Err(Error::Config("augmentation.t must be >= 1".into()));
        }
        let e = &self.encoder;
        if e.dim == 0 || e.hash_width == 0 || e.query_max_len == 0 || e.passage_max_len == 0 {
            return Err(Error::Config("encoder sizes must be >= 1".into()));
        }
        if self.retrieval.k == 0 {
            return Err(Error::Config("retrieval.k must be >= 1".into()));
        }
        self.generation_params().validate()?;
        self.augmentation_params().validate()?;
        self.train_config().validate()?;
        self.metrics()?;
        Ok(())
    }
}
