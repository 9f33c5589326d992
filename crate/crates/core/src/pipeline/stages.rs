use std::collections::HashMap;

use log::info;
use serde::{Deserialize, Serialize};

use super::{
    load_dataset, merge_documents, DocumentRecord, MergeMode, PipelineError, PredictionRecord,
    RunConfig,
};
use crate::clustering::kmeans;
use crate::datamodel::{
    ClusterAssignment, Document, ExampleScores, MetricReport, PromptTemplate, QAExample, Strategy,
    Task,
};
use crate::evaluation::{
    aggregate, answer_coverage, answer_coverage_fraction, exact_match, fact_check_accuracy,
    recall_at_k, rouge_l, unigram_f1, NormalizationRules,
};
use crate::generation::{
    build_demonstration_sets, build_pair_pool, generate_clustered, generate_greedy,
    generate_human_prompts, generate_nucleus, DemoWarning, DemonstrationSet, GenerationConfig,
    PairPool,
};
use crate::llm_backend::LlmClient;
use crate::reader::{read_answer, ReadError, ReadRequest};

/// Everything the clustered strategy computes once per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifacts {
    pub pool: PairPool,
    pub assignment: ClusterAssignment,
    pub demo_sets: Vec<DemonstrationSet>,
    pub warnings: Vec<DemoWarning>,
}

/// Builds the pair pool over the training split, clusters it with
/// K = `num_documents`, and samples the demonstration sets.
pub fn prepare_clusters(
    cfg: &RunConfig,
    client: &LlmClient,
) -> Result<ClusterArtifacts, PipelineError> {
    let train_path = cfg
        .train_path
        .as_ref()
        .ok_or_else(|| PipelineError::Config("clustered strategy requires train_path".into()))?;
    let train = load_dataset(train_path, cfg.task, None)?;
    let gen_cfg = cfg.generation_config()?;
    let pool = build_pair_pool(
        client,
        &cfg.model(),
        &cfg.embedding_model(),
        &train.examples,
        &cfg.generate_template()?,
        &gen_cfg,
    )?;
    let k = cfg.num_documents;
    if pool.entries.len() < k {
        return Err(PipelineError::Config(format!(
            "pair pool has {} entries, fewer than K = {k}",
            pool.entries.len()
        )));
    }
    let assignment = kmeans(&pool.embeddings(), &cfg.kmeans_config())?;
    info!(
        "clustered {} pairs into {k} clusters (sizes {:?}, {} iterations)",
        pool.entries.len(),
        assignment.cluster_sizes(),
        assignment.iterations_run
    );
    let (demo_sets, warnings) =
        build_demonstration_sets(&pool, &assignment, cfg.demos_per_cluster, cfg.seed)?;
    Ok(ClusterArtifacts {
        pool,
        assignment,
        demo_sets,
        warnings,
    })
}

/// Produces the document list for one example according to the strategy
/// and merge mode.
pub fn generate_for_example(
    cfg: &RunConfig,
    gen_cfg: &GenerationConfig,
    client: &LlmClient,
    template: &PromptTemplate,
    example: &QAExample,
    clusters: Option<&ClusterArtifacts>,
) -> Result<Vec<Document>, PipelineError> {
    let retrieved = || -> Result<&[Document], PipelineError> {
        example.retrieved_docs.as_deref().ok_or_else(|| {
            PipelineError::Config(format!("example {} carries no retrieved_docs", example.id))
        })
    };
    if cfg.merge == MergeMode::RetrievedOnly {
        return Ok(retrieved()?.to_vec());
    }
    let model = cfg.model();
    let q = example.question.as_str();
    let k = gen_cfg.num_documents;
    let generated = match gen_cfg.strategy {
        Strategy::Greedy => vec![generate_greedy(
            client,
            &model,
            q,
            template,
            gen_cfg.max_tokens,
        )?],
        Strategy::Nucleus => generate_nucleus(
            client,
            &model,
            q,
            template,
            k,
            gen_cfg.top_p,
            gen_cfg.max_tokens,
        )?,
        Strategy::HumanPrompt => generate_human_prompts(
            client,
            &model,
            q,
            &gen_cfg.human_prompts,
            k,
            gen_cfg.max_tokens,
        )?,
        Strategy::Clustered => {
            let clusters = clusters.ok_or_else(|| {
                PipelineError::Config("clustered strategy needs cluster artifacts".into())
            })?;
            generate_clustered(
                client,
                &model,
                q,
                &clusters.demo_sets,
                gen_cfg.max_tokens,
                gen_cfg.max_prompt_chars,
            )?
        }
    };
    match cfg.merge {
        MergeMode::Merged => merge_documents(retrieved()?, &generated, cfg.merge_budget),
        _ => Ok(generated),
    }
}

/// Reads an answer; an empty completion yields an empty (wrong) answer.
pub fn read_for_example(
    cfg: &RunConfig,
    client: &LlmClient,
    template: &PromptTemplate,
    example: &QAExample,
    documents: &[Document],
) -> Result<String, PipelineError> {
    let req = ReadRequest {
        max_docs: cfg.max_docs,
        max_answer_tokens: cfg.max_answer_tokens,
        ..ReadRequest::new(&example.question, documents, template)
    };
    match read_answer(client, &cfg.model(), &req) {
        Ok(a) => Ok(a),
        Err(ReadError::EmptyCompletion) => Ok(String::new()),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub scores: ExampleScores,
    pub unmappable: bool,
}

pub fn score_example(
    cfg: &RunConfig,
    example: &QAExample,
    documents: &[Document],
    prediction: &str,
) -> Result<ScoredExample, PipelineError> {
    let mut scores = ExampleScores::empty(&example.id);
    let mut unmappable = false;
    let texts: Vec<&str> = documents.iter().map(|d| d.text.as_str()).collect();
    match example.task {
        Task::Qa => {
            scores.em = Some(exact_match(prediction, &example.answers)? as f64);
            for &k in &cfg.eval_ks {
                scores
                    .recall_at_k
                    .insert(k, recall_at_k(&texts, &example.answers, k)? as f64);
            }
            scores.answer_coverage = Some(if cfg.coverage_as_fraction {
                answer_coverage_fraction(&texts, &example.answers)?
            } else {
                answer_coverage(&texts, &example.answers)? as f64
            });
        }
        Task::Dialogue => {
            let rules = NormalizationRules::default();
            let best = |f: fn(&str, &str, &NormalizationRules) -> f64| {
                example
                    .answers
                    .iter()
                    .map(|r| f(prediction, r, &rules))
                    .fold(0.0, f64::max)
            };
            scores.f1 = Some(best(unigram_f1));
            scores.rouge_l = Some(best(rouge_l));
        }
        Task::FactCheck => {
            let gold = example.label.ok_or_else(|| {
                PipelineError::Config(format!("fact_check example {} has no label", example.id))
            })?;
            let s = fact_check_accuracy(prediction, gold);
            scores.accuracy = Some(s.score as f64);
            unmappable = s.unmappable;
        }
    }
    Ok(ScoredExample { scores, unmappable })
}

/// Scores previously written documents and predictions against a dataset.
/// Returns the report and the number of examples skipped for missing or
/// failed records.
pub fn evaluate_records(
    cfg: &RunConfig,
    examples: &[QAExample],
    documents: &[DocumentRecord],
    predictions: &[PredictionRecord],
) -> Result<(MetricReport, usize), PipelineError> {
    let docs: HashMap<&str, &DocumentRecord> =
        documents.iter().map(|r| (r.id.as_str(), r)).collect();
    let preds: HashMap<&str, &PredictionRecord> =
        predictions.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut scored = Vec::new();
    let mut unmappable = 0;
    let mut skipped = 0;
    for ex in examples {
        let Some(prediction) = preds
            .get(ex.id.as_str())
            .filter(|p| p.error.is_none())
            .and_then(|p| p.prediction.as_deref())
        else {
            skipped += 1;
            continue;
        };
        let doc_list: &[Document] = match docs.get(ex.id.as_str()) {
            Some(r) if r.error.is_none() => &r.documents,
            Some(_) => {
                skipped += 1;
                continue;
            }
            None => &[],
        };
        let s = score_example(cfg, ex, doc_list, prediction)?;
        unmappable += s.unmappable as usize;
        scored.push(s.scores);
    }
    Ok((aggregate(scored, &cfg.dataset_id(), unmappable)?, skipped))
}
