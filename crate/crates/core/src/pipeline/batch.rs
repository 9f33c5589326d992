//! Single-stage batch runs behind the `generate`, `cluster`, `read` and
//! `merge` subcommands.

use std::collections::HashMap;

use super::run::par_map;
use super::stages::{generate_for_example, prepare_clusters, read_for_example, ClusterArtifacts};
use super::{
    load_dataset, merge_documents, DocumentRecord, MergeMode, PipelineError, PredictionRecord,
    RunConfig,
};
use crate::datamodel::{QAExample, Strategy};
use crate::llm_backend::LlmClient;

/// Generated (or merged, per `cfg.merge`) documents for every example.
pub fn generate_all(
    cfg: &RunConfig,
    client: &LlmClient,
) -> Result<(Vec<DocumentRecord>, Option<ClusterArtifacts>), PipelineError> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset_path, cfg.task, cfg.limit)?;
    let gen_cfg = cfg.generation_config()?;
    let template = cfg.generate_template()?;
    let clusters = if cfg.strategy == Strategy::Clustered && cfg.merge != MergeMode::RetrievedOnly {
        Some(prepare_clusters(cfg, client)?)
    } else {
        None
    };
    let records = par_map(
        &data.examples,
        cfg.parallelism,
        |ex| match generate_for_example(cfg, &gen_cfg, client, &template, ex, clusters.as_ref()) {
            Ok(documents) => DocumentRecord {
                id: ex.id.clone(),
                documents,
                error: None,
            },
            Err(e) => DocumentRecord {
                id: ex.id.clone(),
                documents: Vec::new(),
                error: Some(e.to_string()),
            },
        },
    );
    Ok((records, clusters))
}

/// Builds the pool over `cfg.train_path` and clusters it.
pub fn cluster_pool(
    cfg: &RunConfig,
    client: &LlmClient,
) -> Result<ClusterArtifacts, PipelineError> {
    prepare_clusters(cfg, client)
}

/// Reads an answer for each example that has a document record. Examples
/// without one are read closed-book.
pub fn read_all(
    cfg: &RunConfig,
    client: &LlmClient,
    examples: &[QAExample],
    documents: &[DocumentRecord],
) -> Result<Vec<PredictionRecord>, PipelineError> {
    let template = cfg.read_template()?;
    let by_id: HashMap<&str, &DocumentRecord> =
        documents.iter().map(|r| (r.id.as_str(), r)).collect();
    Ok(par_map(examples, cfg.parallelism, |ex| {
        let rec = by_id.get(ex.id.as_str());
        if let Some(err) = rec.and_then(|r| r.error.clone()) {
            return PredictionRecord {
                id: ex.id.clone(),
                prediction: None,
                error: Some(err),
            };
        }
        let docs = rec.map(|r| r.documents.as_slice()).unwrap_or_default();
        match read_for_example(cfg, client, &template, ex, docs) {
            Ok(p) => PredictionRecord {
                id: ex.id.clone(),
                prediction: Some(p),
                error: None,
            },
            Err(e) => PredictionRecord {
                id: ex.id.clone(),
                prediction: None,
                error: Some(e.to_string()),
            },
        }
    }))
}

/// Merges each example's retrieved documents with its generated record.
pub fn merge_all(
    examples: &[QAExample],
    generated: &[DocumentRecord],
    budget: usize,
) -> Result<Vec<DocumentRecord>, PipelineError> {
    let by_id: HashMap<&str, &DocumentRecord> =
        generated.iter().map(|r| (r.id.as_str(), r)).collect();
    examples
        .iter()
        .map(|ex| {
            let retrieved = ex.retrieved_docs.as_deref().unwrap_or_default();
            let gen = by_id
                .get(ex.id.as_str())
                .map(|r| r.documents.as_slice())
                .unwrap_or_default();
            Ok(match merge_documents(retrieved, gen, budget) {
                Ok(documents) => DocumentRecord {
                    id: ex.id.clone(),
                    documents,
                    error: None,
                },
                Err(PipelineError::BothEmpty) => DocumentRecord {
                    id: ex.id.clone(),
                    documents: Vec::new(),
                    error: Some(PipelineError::BothEmpty.to_string()),
                },
                Err(e) => return Err(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Document, Task};

    #[test]
    fn merge_all_pairs_by_id() {
        let ex = |id: &str, n: usize| QAExample {
            id: id.into(),
            task: Task::Qa,
            question: "q".into(),
            answers: vec!["a".into()],
            label: None,
            retrieved_docs: Some(
                (0..n)
                    .map(|i| Document::retrieved(format!("{id}r{i}"), i))
                    .collect(),
            ),
        };
        let generated = vec![DocumentRecord {
            id: "b".into(),
            documents: vec![Document::generated("bg0", Strategy::Greedy, None, 0)],
            error: None,
        }];
        let out = merge_all(&[ex("a", 3), ex("b", 3), ex("c", 0)], &generated, 4).unwrap();
        let texts = |r: &DocumentRecord| {
            r.documents
                .iter()
                .map(|d| d.text.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(texts(&out[0]), ["ar0", "ar1", "ar2"]);
        assert_eq!(texts(&out[1]), ["bg0", "br0", "br1", "br2"]);
        assert!(out[2].error.is_some());
        assert!(merge_all(&[ex("a", 1)], &[], 1).is_err());
    }
}
