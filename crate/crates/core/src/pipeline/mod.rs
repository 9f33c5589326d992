//! End-to-end orchestration: ingest, optional pool building and clustering,
//! generation, merging, reading, scoring and reporting.

mod batch;
mod dataset;
mod merge;
mod records;
mod report;
mod run;
mod stages;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ClusterError, KMeansConfig};
use crate::datamodel::{DataError, PromptTemplate, Strategy, Task, TemplateRole};
use crate::evaluation::EvalError;
use crate::generation::{
    default_human_prompts, parse_prompt_file, GenerationConfig, GenerationError, PoolSource,
    DEFAULT_GENERATE_TEMPLATE,
};
use crate::llm_backend::{
    BackendError, BackendKind, HttpConfig, HttpTransport, LlmClient, MockTransport, ModelRef,
    ResponseCache, Transport, DEFAULT_PARALLELISM,
};
use crate::reader::{
    ReadError, DEFAULT_MAX_ANSWER_TOKENS, DEFAULT_MAX_DOCS, DEFAULT_READ_TEMPLATE,
};

pub use batch::{cluster_pool, generate_all, merge_all, read_all};
pub use dataset::{load_dataset, parse_dataset, LoadedDataset, MAX_INVALID_FRACTION};
pub use merge::{merge_documents, MergeMode};
pub use records::{read_jsonl, write_jsonl, DocumentRecord, PredictionRecord};
pub use report::{render_report, render_table};
pub use run::{
    run, run_with_client, ClusterSummary, ExampleRecord, RunManifest, RunOutcome, RunStats,
    RunStatus,
};
pub use stages::{
    evaluate_records, generate_for_example, prepare_clusters, read_for_example, score_example,
    ClusterArtifacts, ScoredExample,
};

/// Environment variable overriding the default cache directory.
pub const CACHE_DIR_ENV: &str = "GENREAD_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = ".genread-cache";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{invalid} of {total} dataset lines are invalid (limit 1%); first: {first}")]
    TooManyInvalid {
        invalid: usize,
        total: usize,
        first: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("nothing to merge: both document lists are empty")]
    BothEmpty,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{errors} of {total} examples failed (more than {max_rate} allowed)")]
    RunFailed {
        errors: usize,
        total: usize,
        max_rate: f64,
    },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// Flat run configuration; the JSON config file uses these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    /// Defaults to the dataset file stem.
    pub dataset_id: Option<String>,
    /// Training split used to build the clustering pool.
    pub train_path: Option<PathBuf>,
    pub task: Task,

    pub backend: BackendKind,
    pub model_name: String,
    /// Defaults to `model_name`.
    pub embedding_model_name: Option<String>,
    pub endpoint_url: Option<String>,

    pub strategy: Strategy,
    pub num_documents: usize,
    pub top_p: f64,
    pub demos_per_cluster: usize,
    pub human_prompts_path: Option<PathBuf>,
    pub generate_template: String,
    pub max_tokens: u32,
    pub pair_separator: String,
    pub max_prompt_chars: usize,
    pub pool_source: PoolSource,

    pub kmeans_max_iterations: usize,
    pub kmeans_tolerance: f64,
    pub normalize_embeddings: bool,

    pub read_template: String,
    /// First prompt in this file replaces `read_template`.
    pub read_template_path: Option<PathBuf>,
    pub max_docs: usize,
    pub max_answer_tokens: u32,

    pub eval_ks: Vec<usize>,
    pub coverage_as_fraction: bool,

    pub merge: MergeMode,
    pub merge_budget: usize,

    pub seed: u64,
    pub limit: Option<usize>,
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub parallelism: usize,
    pub max_error_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let generation = GenerationConfig::default();
        Self {
            dataset_path: PathBuf::new(),
            dataset_id: None,
            train_path: None,
            task: Task::Qa,
            backend: BackendKind::Mock,
            model_name: "mock-lm".into(),
            embedding_model_name: None,
            endpoint_url: None,
            strategy: generation.strategy,
            num_documents: generation.num_documents,
            top_p: generation.top_p,
            demos_per_cluster: generation.demos_per_cluster,
            human_prompts_path: None,
            generate_template: DEFAULT_GENERATE_TEMPLATE.into(),
            max_tokens: generation.max_tokens,
            pair_separator: generation.pair_separator,
            max_prompt_chars: generation.max_prompt_chars,
            pool_source: generation.pool_source,
            kmeans_max_iterations: 100,
            kmeans_tolerance: 1e-6,
            normalize_embeddings: true,
            read_template: DEFAULT_READ_TEMPLATE.into(),
            read_template_path: None,
            max_docs: DEFAULT_MAX_DOCS,
            max_answer_tokens: DEFAULT_MAX_ANSWER_TOKENS,
            eval_ks: vec![1, 10, 20],
            coverage_as_fraction: false,
            merge: MergeMode::GeneratedOnly,
            merge_budget: 10,
            seed: 0,
            limit: None,
            output_dir: PathBuf::from("genread-out"),
            cache_dir: None,
            parallelism: DEFAULT_PARALLELISM,
            max_error_rate: 0.10,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn dataset_id(&self) -> String {
        self.dataset_id.clone().unwrap_or_else(|| {
            self.dataset_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    pub fn model(&self) -> ModelRef {
        ModelRef {
            backend: self.backend,
            model_name: self.model_name.clone(),
            endpoint_url: self.endpoint_url.clone(),
        }
    }

    pub fn embedding_model(&self) -> ModelRef {
        ModelRef {
            model_name: self
                .embedding_model_name
                .clone()
                .unwrap_or_else(|| self.model_name.clone()),
            ..self.model()
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
    }

    pub fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.num_documents,
            max_iterations: self.kmeans_max_iterations,
            tolerance: self.kmeans_tolerance,
            seed: self.seed,
            normalize: self.normalize_embeddings,
        }
    }

    pub fn human_prompts(&self) -> Result<Vec<PromptTemplate>, PipelineError> {
        match &self.human_prompts_path {
            None => Ok(default_human_prompts()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?;
                Ok(parse_prompt_file(&text, TemplateRole::Generate)?)
            }
        }
    }

    pub fn generation_config(&self) -> Result<GenerationConfig, PipelineError> {
        let cfg = GenerationConfig {
            strategy: self.strategy,
            num_documents: self.num_documents,
            top_p: self.top_p,
            demos_per_cluster: self.demos_per_cluster,
            human_prompts: if self.strategy == Strategy::HumanPrompt {
                self.human_prompts()?
            } else {
                Vec::new()
            },
            max_tokens: self.max_tokens,
            pair_separator: self.pair_separator.clone(),
            max_prompt_chars: self.max_prompt_chars,
            pool_source: self.pool_source,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn generate_template(&self) -> Result<PromptTemplate, PipelineError> {
        Ok(PromptTemplate::new(
            "generate",
            self.generate_template.clone(),
            TemplateRole::Generate,
        )?)
    }

    pub fn read_template(&self) -> Result<PromptTemplate, PipelineError> {
        match &self.read_template_path {
            None => Ok(PromptTemplate::new(
                "read",
                self.read_template.clone(),
                TemplateRole::Read,
            )?),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?;
                parse_prompt_file(&text, TemplateRole::Read)?
                    .into_iter()
                    .next()
                    .ok_or_else(|| {
                        PipelineError::Config(format!("{} holds no read template", p.display()))
                    })
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.model().validate()?;
        self.generation_config()?;
        self.generate_template()?;
        self.read_template()?;
        if self.max_docs == 0 || self.max_answer_tokens == 0 {
            return Err(PipelineError::Config(
                "max_docs and max_answer_tokens must be positive".into(),
            ));
        }
        if self.eval_ks.contains(&0) {
            return Err(PipelineError::Config(
                "eval_ks entries must be at least 1".into(),
            ));
        }
        if self.merge == MergeMode::Merged && self.merge_budget < 2 {
            return Err(PipelineError::Config(
                "merge_budget must be at least 2".into(),
            ));
        }
        if self.strategy == Strategy::Clustered
            && self.train_path.is_none()
            && self.merge != MergeMode::RetrievedOnly
        {
            return Err(PipelineError::Config(
                "clustered strategy requires train_path".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.max_error_rate) {
            return Err(PipelineError::Config(
                "max_error_rate must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Builds the client described by the config: transport, on-disk cache,
/// parallelism limit.
pub fn client_for(cfg: &RunConfig) -> LlmClient {
    let transport: Arc<dyn Transport> = match cfg.backend {
        BackendKind::Mock => Arc::new(MockTransport::new()),
        BackendKind::Http => Arc::new(HttpTransport::new(HttpConfig::from_env())),
    };
    LlmClient::new(transport, ResponseCache::on_disk(cfg.cache_dir()))
        .with_parallelism(cfg.parallelism)
}
