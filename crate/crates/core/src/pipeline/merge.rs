use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::datamodel::{rerank, Document};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    #[default]
    GeneratedOnly,
    RetrievedOnly,
    Merged,
}

/// Interleaves generated and retrieved documents, generated first
/// (g0, r0, g1, r1, ...), until `budget` documents are taken. When one side
/// runs out the other fills the rest. Ranks are rewritten to `0..len`.
pub fn merge_documents(
    retrieved: &[Document],
    generated: &[Document],
    budget: usize,
) -> Result<Vec<Document>, PipelineError> {
    if budget < 2 {
        return Err(PipelineError::Config(format!(
            "merge budget must be at least 2, got {budget}"
        )));
    }
    if retrieved.is_empty() && generated.is_empty() {
        return Err(PipelineError::BothEmpty);
    }
    let mut out = Vec::with_capacity(budget.min(retrieved.len() + generated.len()));
    let (mut g, mut r) = (generated.iter(), retrieved.iter());
    let mut take_generated = true;
    while out.len() < budget {
        let next = if take_generated {
            g.next().or_else(|| r.next())
        } else {
            r.next().or_else(|| g.next())
        };
        match next {
            Some(d) => out.push(d.clone()),
            None => break,
        }
        take_generated = !take_generated;
    }
    rerank(&mut out);
    Ok(out)
}
