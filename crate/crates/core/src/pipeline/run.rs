use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::stages::{
    generate_for_example, prepare_clusters, read_for_example, score_example, ClusterArtifacts,
};
use super::{
    client_for, load_dataset, render_report, write_jsonl, DocumentRecord, MergeMode, PipelineError,
    PredictionRecord, RunConfig,
};
use crate::datamodel::{
    Document, ExampleScores, MetricReport, PromptTemplate, QAExample, Strategy,
};
use crate::evaluation::aggregate;
use crate::generation::{DemoWarning, GenerationConfig};
use crate::llm_backend::LlmClient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    /// Some examples failed, but no more than `max_error_rate`.
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub pool_size: usize,
    pub pool_failures: usize,
    pub sizes: Vec<usize>,
    pub inertia: f64,
    pub iterations_run: usize,
    pub converged: bool,
    /// sha256 over the assignment vector.
    pub assignment_digest: String,
    pub warnings: Vec<DemoWarning>,
}

impl ClusterSummary {
    fn from_artifacts(a: &ClusterArtifacts) -> Self {
        let digest =
            Sha256::digest(serde_json::to_vec(&a.assignment.assignments).unwrap_or_default());
        Self {
            k: a.assignment.k,
            pool_size: a.pool.entries.len(),
            pool_failures: a.pool.failures,
            sizes: a.assignment.cluster_sizes(),
            inertia: a.assignment.inertia,
            iterations_run: a.assignment.iterations_run,
            converged: a.assignment.converged,
            assignment_digest: hex::encode(digest),
            warnings: a.warnings.clone(),
        }
    }
}

/// Per-example entry in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub num_documents: usize,
    /// sha256 over the JSON of the document list.
    pub documents_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ExampleScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub wall_clock_ms: u128,
    pub examples: usize,
    pub failed_examples: usize,
    pub dataset_lines: usize,
    pub invalid_lines: usize,
    pub unknown_fields: usize,
    pub requests: u64,
    pub cache_hits: u64,
    pub network_calls: u64,
    pub retries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub config: RunConfig,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<ClusterSummary>,
    pub examples: Vec<ExampleRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
    pub stats: RunStats,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub manifest: RunManifest,
    pub output_dir: PathBuf,
    pub report_text: String,
}

struct ExampleResult {
    documents: Vec<Document>,
    prediction: Option<String>,
    scored: Option<(ExampleScores, bool)>,
    error: Option<String>,
}

fn process_example(
    cfg: &RunConfig,
    gen_cfg: &GenerationConfig,
    client: &LlmClient,
    templates: (&PromptTemplate, &PromptTemplate),
    example: &QAExample,
    clusters: Option<&ClusterArtifacts>,
) -> ExampleResult {
    let mut out = ExampleResult {
        documents: Vec::new(),
        prediction: None,
        scored: None,
        error: None,
    };
    match generate_for_example(cfg, gen_cfg, client, templates.0, example, clusters) {
        Ok(d) => out.documents = d,
        Err(e) => {
            out.error = Some(format!("generation: {e}"));
            return out;
        }
    }
    match read_for_example(cfg, client, templates.1, example, &out.documents) {
        Ok(p) => out.prediction = Some(p),
        Err(e) => {
            out.error = Some(format!("read: {e}"));
            return out;
        }
    }
    match score_example(
        cfg,
        example,
        &out.documents,
        out.prediction.as_deref().unwrap_or_default(),
    ) {
        Ok(s) => out.scored = Some((s.scores, s.unmappable)),
        Err(e) => out.error = Some(format!("evaluation: {e}")),
    }
    out
}

/// Runs `f` over `items` on up to `workers` threads; results keep input order.
pub(crate) fn par_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

fn digest_documents(docs: &[Document]) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(docs).unwrap_or_default()))
}

/// Full run with a client built from the config.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, PipelineError> {
    run_with_client(cfg, &client_for(cfg))
}

/// Full run: load, (cluster), generate, (merge), read, score, write outputs.
///
/// Per-example failures are recorded and skipped; the run fails once they
/// exceed `max_error_rate` of the examples.
pub fn run_with_client(cfg: &RunConfig, client: &LlmClient) -> Result<RunOutcome, PipelineError> {
    let start = Instant::now();
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset_path, cfg.task, cfg.limit)?;
    info!(
        "loaded {} examples from {} ({} invalid lines)",
        data.examples.len(),
        cfg.dataset_path.display(),
        data.invalid.len()
    );
    if data.examples.is_empty() {
        return Err(PipelineError::Config(
            "dataset holds no valid examples".into(),
        ));
    }
    let gen_cfg = cfg.generation_config()?;
    let templates = (cfg.generate_template()?, cfg.read_template()?);
    let clusters = if cfg.strategy == Strategy::Clustered && cfg.merge != MergeMode::RetrievedOnly {
        Some(prepare_clusters(cfg, client)?)
    } else {
        None
    };

    let results = par_map(&data.examples, cfg.parallelism, |ex| {
        process_example(
            cfg,
            &gen_cfg,
            client,
            (&templates.0, &templates.1),
            ex,
            clusters.as_ref(),
        )
    });

    let total = results.len();
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    for (ex, r) in data.examples.iter().zip(&results) {
        if let Some(e) = &r.error {
            warn!("example {} failed: {e}", ex.id);
        }
    }
    let status = if failed == 0 {
        RunStatus::Success
    } else if failed as f64 <= cfg.max_error_rate * total as f64 {
        RunStatus::Partial
    } else {
        RunStatus::Failed
    };

    let unmappable = results
        .iter()
        .filter(|r| matches!(r.scored, Some((_, true))))
        .count();
    let scored: Vec<ExampleScores> = results
        .iter()
        .filter_map(|r| r.scored.as_ref().map(|s| s.0.clone()))
        .collect();
    let metrics = if scored.is_empty() {
        None
    } else {
        Some(aggregate(scored, &cfg.dataset_id(), unmappable)?)
    };

    let doc_records: Vec<DocumentRecord> = data
        .examples
        .iter()
        .zip(&results)
        .map(|(ex, r)| DocumentRecord {
            id: ex.id.clone(),
            documents: r.documents.clone(),
            error: r.error.clone(),
        })
        .collect();
    let pred_records: Vec<PredictionRecord> = data
        .examples
        .iter()
        .zip(&results)
        .map(|(ex, r)| PredictionRecord {
            id: ex.id.clone(),
            prediction: r.prediction.clone(),
            error: r.error.clone(),
        })
        .collect();
    let examples: Vec<ExampleRecord> = data
        .examples
        .iter()
        .zip(&results)
        .map(|(ex, r)| ExampleRecord {
            id: ex.id.clone(),
            num_documents: r.documents.len(),
            documents_digest: digest_documents(&r.documents),
            prediction: r.prediction.clone(),
            scores: r.scored.as_ref().map(|s| s.0.clone()),
            error: r.error.clone(),
        })
        .collect();

    let stats = client.stats();
    let manifest = RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        status,
        clusters: clusters.as_ref().map(ClusterSummary::from_artifacts),
        examples,
        metrics,
        stats: RunStats {
            wall_clock_ms: start.elapsed().as_millis(),
            examples: total,
            failed_examples: failed,
            dataset_lines: data.total_lines,
            invalid_lines: data.invalid.len(),
            unknown_fields: data.unknown_fields,
            requests: stats.requests(),
            cache_hits: stats.cache_hits(),
            network_calls: stats.network_calls(),
            retries: stats.retries(),
        },
    };

    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    write_jsonl(&out.join("documents.jsonl"), &doc_records)?;
    write_jsonl(&out.join("predictions.jsonl"), &pred_records)?;
    let report_text = match &manifest.metrics {
        Some(m) => {
            let (text, json) = render_report(m);
            write_json(&out.join("report.json"), &json)?;
            text
        }
        None => String::from("no examples were scored\n"),
    };
    fs::write(out.join("report.txt"), &report_text)
        .map_err(|e| PipelineError::io(&out.join("report.txt"), e))?;
    if let Some(c) = &clusters {
        write_json(&out.join("clusters.json"), c)?;
    }
    write_json(&out.join("manifest.json"), &manifest)?;

    Ok(RunOutcome {
        status,
        manifest,
        output_dir: out.clone(),
        report_text,
    })
}

fn write_json<T: Serialize>(path: &std::path::Path, value: &T) -> Result<(), PipelineError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| PipelineError::io(path, e.into()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}
