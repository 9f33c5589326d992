//! Contextual document generation: greedy, nucleus sampling, the human
//! prompt ensemble, and clustering-based in-context prompting.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{
    ClusterAssignment, DataError, Document, EmbeddingVector, PromptTemplate, QAExample, Slots,
    Strategy, TemplateRole,
};
use crate::llm_backend::{BackendError, CompletionRequest, LlmClient, ModelRef};

/// The ten human-written generation prompts shipped with the toolkit, one per line.
pub const DEFAULT_HUMAN_PROMPTS: &str = include_str!("../data/human_prompts.txt");

/// Zero-shot generation prompt used by the greedy and nucleus strategies.
pub const DEFAULT_GENERATE_TEMPLATE: &str =
    "Generate a background document to answer the given question. {question}";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] DataError),
    #[error("{0}")]
    Precondition(String),
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    /// Seed each training question with one greedily generated document.
    #[default]
    Generated,
    /// Seed with the top pre-retrieved document carried by the dataset.
    Retrieved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub strategy: Strategy,
    pub num_documents: usize,
    pub top_p: f64,
    pub demos_per_cluster: usize,
    pub human_prompts: Vec<PromptTemplate>,
    pub max_tokens: u32,
    pub pair_separator: String,
    pub max_prompt_chars: usize,
    pub pool_source: PoolSource,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            num_documents: 10,
            top_p: 0.95,
            demos_per_cluster: 5,
            human_prompts: Vec::new(),
            max_tokens: 300,
            pair_separator: "\n".into(),
            max_prompt_chars: 12_000,
            pool_source: PoolSource::Generated,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenerationError> {
        let fail = |m: String| Err(GenerationError::Precondition(m));
        if self.num_documents == 0 {
            return fail("num_documents must be positive".into());
        }
        if self.max_tokens == 0 {
            return fail("max_tokens must be positive".into());
        }
        match self.strategy {
            Strategy::Nucleus if !(self.top_p > 0.0 && self.top_p <= 1.0) => {
                fail(format!("top_p must lie in (0, 1], got {}", self.top_p))
            }
            Strategy::HumanPrompt if self.human_prompts.len() < self.num_documents => {
                fail(format!(
                    "human_prompt strategy needs at least {} prompts, have {}",
                    self.num_documents,
                    self.human_prompts.len()
                ))
            }
            Strategy::Clustered if self.demos_per_cluster == 0 => {
                fail("demos_per_cluster must be positive".into())
            }
            _ => Ok(()),
        }
    }
}

/// Parses a prompt file: one prompt per line, ids `#1`, `#2`, ...
///
/// Blank lines are skipped but still count toward line numbers. `\n` in a
/// line is an escaped newline. A generation prompt without `{question}` gets
/// ` {question}` appended, which is how the shipped instruction-only prompts
/// are turned into templates.
pub fn parse_prompt_file(
    contents: &str,
    role: TemplateRole,
) -> Result<Vec<PromptTemplate>, DataError> {
    let mut out = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut body = line.replace("\\n", "\n");
        if role == TemplateRole::Generate && !body.contains(crate::datamodel::QUESTION_SLOT) {
            body.push_str(" {question}");
        }
        out.push(PromptTemplate::new(format!("#{}", i + 1), body, role)?);
    }
    Ok(out)
}

pub fn default_human_prompts() -> Vec<PromptTemplate> {
    parse_prompt_file(DEFAULT_HUMAN_PROMPTS, TemplateRole::Generate)
        .expect("shipped prompts are valid")
}

pub fn default_generate_template() -> PromptTemplate {
    PromptTemplate::new("default", DEFAULT_GENERATE_TEMPLATE, TemplateRole::Generate)
        .expect("valid template")
}

fn require_generate(template: &PromptTemplate) -> Result<(), GenerationError> {
    if template.role != TemplateRole::Generate {
        return Err(GenerationError::Precondition(format!(
            "template {} is not a generation template",
            template.id
        )));
    }
    template.validate()?;
    Ok(())
}

pub fn render_generate_prompt(template: &PromptTemplate, question: &str) -> String {
    template.render(Slots {
        question: Some(question),
        ..Slots::default()
    })
}

/// One document, decoded greedily from `template` with the question spliced in.
pub fn generate_greedy(
    client: &LlmClient,
    model: &ModelRef,
    question: &str,
    template: &PromptTemplate,
    max_tokens: u32,
) -> Result<Document, GenerationError> {
    require_generate(template)?;
    let prompt = render_generate_prompt(template, question);
    let res = client.complete(&CompletionRequest::greedy(
        model.clone(),
        prompt,
        max_tokens,
    ))?;
    Ok(Document::generated(res.text, Strategy::Greedy, None, 0))
}

/// Seed tag of the `i`-th nucleus sample.
pub fn sample_tag(i: usize) -> String {
    format!("s{i}")
}

/// The requests `generate_nucleus` issues, in rank order.
pub fn nucleus_requests(
    model: &ModelRef,
    question: &str,
    template: &PromptTemplate,
    k: usize,
    top_p: f64,
    max_tokens: u32,
) -> Vec<CompletionRequest> {
    let prompt = render_generate_prompt(template, question);
    (0..k)
        .map(|i| {
            CompletionRequest::sampled(
                model.clone(),
                prompt.clone(),
                max_tokens,
                1.0,
                top_p,
                sample_tag(i),
            )
        })
        .collect()
}

/// `k` samples of one prompt at temperature 1 with nucleus `top_p`.
pub fn generate_nucleus(
    client: &LlmClient,
    model: &ModelRef,
    question: &str,
    template: &PromptTemplate,
    k: usize,
    top_p: f64,
    max_tokens: u32,
) -> Result<Vec<Document>, GenerationError> {
    require_generate(template)?;
    if k == 0 {
        return Err(GenerationError::Precondition("K must be at least 1".into()));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(GenerationError::Precondition(format!(
            "top_p must lie in (0, 1], got {top_p}"
        )));
    }
    nucleus_requests(model, question, template, k, top_p, max_tokens)
        .iter()
        .enumerate()
        .map(|(rank, req)| {
            let res = client.complete(req)?;
            Ok(Document::generated(res.text, Strategy::Nucleus, None, rank))
        })
        .collect()
}

/// Document `i` is decoded greedily under `prompts[i]`.
pub fn generate_human_prompts(
    client: &LlmClient,
    model: &ModelRef,
    question: &str,
    prompts: &[PromptTemplate],
    k: usize,
    max_tokens: u32,
) -> Result<Vec<Document>, GenerationError> {
    if prompts.len() < k {
        return Err(GenerationError::Precondition(format!(
            "need {k} human prompts, have {}",
            prompts.len()
        )));
    }
    prompts[..k]
        .iter()
        .enumerate()
        .map(|(rank, p)| {
            let doc = generate_greedy(client, model, question, p, max_tokens)?;
            Ok(Document {
                strategy: Some(Strategy::HumanPrompt),
                prompt_id: Some(p.id.clone()),
                rank,
                ..doc
            })
        })
        .collect()
}

/// One embedded question-document pair from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub example_id: String,
    pub question: String,
    pub document: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPool {
    pub entries: Vec<PoolEntry>,
    /// Examples dropped because generation or embedding failed.
    pub failures: usize,
}

impl PairPool {
    pub fn embeddings(&self) -> Vec<EmbeddingVector> {
        self.entries.iter().map(|e| e.embedding.clone()).collect()
    }
}

/// Text that gets embedded for one pair.
pub fn pair_text(question: &str, document: &str, separator: &str) -> String {
    let mut s = String::with_capacity(question.len() + separator.len() + document.len());
    s.push_str(question);
    s.push_str(separator);
    s.push_str(document);
    s
}

/// Builds the clustering pool: one seed document per training question
/// (generated greedily with `model`, or the top retrieved passage) and one
/// `embed_model` embedding of the joined pair. Examples that fail are
/// dropped and counted.
pub fn build_pair_pool(
    client: &LlmClient,
    model: &ModelRef,
    embed_model: &ModelRef,
    examples: &[QAExample],
    template: &PromptTemplate,
    cfg: &GenerationConfig,
) -> Result<PairPool, GenerationError> {
    if examples.is_empty() {
        return Err(GenerationError::Precondition(
            "pair pool needs at least one example".into(),
        ));
    }
    if cfg.pool_source == PoolSource::Generated {
        require_generate(template)?;
    }
    let mut entries = Vec::with_capacity(examples.len());
    let mut failures = 0;
    for ex in examples {
        let entry = (|| -> Result<PoolEntry, GenerationError> {
            let document = match cfg.pool_source {
                PoolSource::Generated => {
                    generate_greedy(client, model, &ex.question, template, cfg.max_tokens)?.text
                }
                PoolSource::Retrieved => ex
                    .retrieved_docs
                    .as_ref()
                    .and_then(|d| d.first())
                    .map(|d| d.text.clone())
                    .ok_or_else(|| {
                        GenerationError::Precondition(format!(
                            "example {} has no retrieved document",
                            ex.id
                        ))
                    })?,
            };
            let embedding = client.embed(
                &pair_text(&ex.question, &document, &cfg.pair_separator),
                embed_model,
            )?;
            Ok(PoolEntry {
                example_id: ex.id.clone(),
                question: ex.question.clone(),
                document,
                embedding,
            })
        })();
        match entry {
            Ok(e) => entries.push(e),
            Err(e) => {
                warn!("dropping training example {} from pair pool: {e}", ex.id);
                failures += 1;
            }
        }
    }
    if failures > 0 {
        warn!(
            "pair pool: {failures} of {} examples dropped",
            examples.len()
        );
    }
    Ok(PairPool { entries, failures })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoPair {
    pub example_id: String,
    pub question: String,
    pub document: String,
}

/// In-context demonstrations drawn from one cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    pub cluster_id: usize,
    pub pairs: Vec<DemoPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoWarning {
    pub cluster_id: usize,
    pub available: usize,
    pub requested: usize,
}

/// Generator used to sample cluster `cluster_id`: seeded from `seed`, one
/// ChaCha stream per cluster.
pub fn cluster_rng(seed: u64, cluster_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cluster_id as u64);
    rng
}

/// Uniform sample of `n` items without replacement: the first `n` steps of
/// a forward Fisher-Yates shuffle.
pub fn sample_without_replacement<T: Clone>(items: &[T], n: usize, rng: &mut impl Rng) -> Vec<T> {
    let mut pool = items.to_vec();
    let take = n.min(pool.len());
    for i in 0..take {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(take);
    pool
}

/// Samples `n` pairs from each cluster. Clusters smaller than `n` contribute
/// all their members and produce a warning. Output is in cluster-id order.
pub fn build_demonstration_sets(
    pool: &PairPool,
    assignment: &ClusterAssignment,
    n: usize,
    seed: u64,
) -> Result<(Vec<DemonstrationSet>, Vec<DemoWarning>), GenerationError> {
    if assignment.assignments.len() != pool.entries.len() {
        return Err(GenerationError::Precondition(format!(
            "assignment covers {} items, pool has {}",
            assignment.assignments.len(),
            pool.entries.len()
        )));
    }
    if n == 0 {
        return Err(GenerationError::Precondition("n must be positive".into()));
    }
    let mut sets = Vec::with_capacity(assignment.k);
    let mut warnings = Vec::new();
    for (cluster_id, members) in assignment.members().into_iter().enumerate() {
        if members.is_empty() {
            return Err(GenerationError::EmptyCluster(cluster_id));
        }
        if members.len() < n {
            warn!(
                "cluster {cluster_id} has {} members, fewer than n = {n}",
                members.len()
            );
            warnings.push(DemoWarning {
                cluster_id,
                available: members.len(),
                requested: n,
            });
        }
        let chosen = sample_without_replacement(&members, n, &mut cluster_rng(seed, cluster_id));
        let pairs = chosen
            .into_iter()
            .map(|i| {
                let e = &pool.entries[i];
                DemoPair {
                    example_id: e.example_id.clone(),
                    question: e.question.clone(),
                    document: e.document.clone(),
                }
            })
            .collect();
        sets.push(DemonstrationSet { cluster_id, pairs });
    }
    Ok((sets, warnings))
}

fn render_incontext(pairs: &[(&str, &str)], question: &str) -> String {
    let mut out = String::new();
    for (q, d) in pairs {
        out.push_str("Question: ");
        out.push_str(q);
        out.push_str("\nDocument: ");
        out.push_str(d);
        out.push_str("\n\n");
    }
    out.push_str("Question: ");
    out.push_str(question);
    out.push_str("\nDocument:");
    out
}

/// Demonstration prompt: every pair as `Question: ..\nDocument: ..\n\n`,
/// then the target question and an open `Document:` stub.
pub fn assemble_incontext_prompt(
    demos: &DemonstrationSet,
    question: &str,
) -> Result<String, GenerationError> {
    if demos.pairs.is_empty() {
        return Err(GenerationError::Precondition(
            "demonstration set is empty".into(),
        ));
    }
    let pairs: Vec<(&str, &str)> = demos
        .pairs
        .iter()
        .map(|p| (p.question.as_str(), p.document.as_str()))
        .collect();
    Ok(render_incontext(&pairs, question))
}

/// Like [`assemble_incontext_prompt`], but trims demonstration documents
/// from their ends, longest first, until the prompt fits in `max_chars`
/// characters. Questions are never trimmed.
pub fn assemble_incontext_prompt_within(
    demos: &DemonstrationSet,
    question: &str,
    max_chars: usize,
) -> Result<String, GenerationError> {
    let full = assemble_incontext_prompt(demos, question)?;
    let total = full.chars().count();
    if total <= max_chars {
        return Ok(full);
    }
    let mut lens: Vec<usize> = demos
        .pairs
        .iter()
        .map(|p| p.document.chars().count())
        .collect();
    let mut excess = total - max_chars;
    while excess > 0 {
        // Longest document; first one wins ties.
        let (idx, &longest) = lens
            .iter()
            .enumerate()
            .rev()
            .max_by_key(|(_, &l)| l)
            .expect("non-empty");
        if longest == 0 {
            break;
        }
        let runner_up = lens
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != idx)
            .map(|(_, &l)| l)
            .max()
            .unwrap_or(0);
        let cut = excess.min((longest - runner_up).max(1));
        lens[idx] -= cut;
        excess -= cut;
    }
    let trimmed: Vec<(String, &str)> = demos
        .pairs
        .iter()
        .zip(&lens)
        .map(|(p, &l)| (p.document.chars().take(l).collect(), p.question.as_str()))
        .collect();
    let pairs: Vec<(&str, &str)> = trimmed.iter().map(|(d, q)| (*q, d.as_str())).collect();
    Ok(render_incontext(&pairs, question))
}

/// One greedy document per demonstration set, tagged with its cluster id.
pub fn generate_clustered(
    client: &LlmClient,
    model: &ModelRef,
    question: &str,
    demo_sets: &[DemonstrationSet],
    max_tokens: u32,
    max_prompt_chars: usize,
) -> Result<Vec<Document>, GenerationError> {
    if demo_sets.is_empty() {
        return Err(GenerationError::Precondition(
            "need at least one demonstration set".into(),
        ));
    }
    demo_sets
        .iter()
        .enumerate()
        .map(|(rank, set)| {
            let prompt = assemble_incontext_prompt_within(set, question, max_prompt_chars)?;
            let res = client.complete(&CompletionRequest::greedy(
                model.clone(),
                prompt,
                max_tokens,
            ))?;
            Ok(Document::generated(
                res.text,
                Strategy::Clustered,
                Some(set.cluster_id.to_string()),
                rank,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_backend::{completion_cache_key, MockTransport, ResponseCache};
    use std::sync::Arc;

    fn client() -> LlmClient {
        LlmClient::new(Arc::new(MockTransport::new()), ResponseCache::ephemeral())
    }

    fn demo(id: &str, q: &str, d: &str) -> DemoPair {
        DemoPair {
            example_id: id.into(),
            question: q.into(),
            document: d.into(),
        }
    }

    #[test]
    fn shipped_prompts_are_the_ten_listed() {
        let prompts = default_human_prompts();
        assert_eq!(prompts.len(), 10);
        assert_eq!(prompts[0].id, "#1");
        assert_eq!(prompts[9].id, "#10");
        assert_eq!(
            prompts[0].body,
            "Generate a background document from Wikipedia to answer the given question. {question}"
        );
        assert_eq!(
            prompts[9].body,
            "Retrieve a Wikipedia article to address the posed question. {question}"
        );
    }

    #[test]
    fn prompt_file_ids_follow_line_numbers() {
        let p = parse_prompt_file(
            "first {question}\n\nthird\\nline {question}\n",
            TemplateRole::Generate,
        )
        .unwrap();
        assert_eq!(p[0].id, "#1");
        assert_eq!(p[1].id, "#3");
        assert_eq!(p[1].body, "third\nline {question}");
        assert!(parse_prompt_file("no background {question}", TemplateRole::Read).is_err());
    }

    #[test]
    fn greedy_prompt_is_plain_splice() {
        let t = default_generate_template();
        let q = "who wrote the magic flute?";
        assert_eq!(
            render_generate_prompt(&t, q),
            format!(
                "{}{}",
                "Generate a background document to answer the given question. ", q
            )
        );
    }

    #[test]
    fn greedy_deterministic_and_requires_placeholder() {
        let c = client();
        let m = ModelRef::mock("m");
        let t = default_generate_template();
        let a = generate_greedy(&c, &m, "q?", &t, 64).unwrap();
        let b = generate_greedy(&client(), &m, "q?", &t, 64).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.strategy, Some(Strategy::Greedy));
        let bad = PromptTemplate {
            id: "x".into(),
            body: "no slot".into(),
            role: TemplateRole::Generate,
        };
        assert!(matches!(
            generate_greedy(&c, &m, "q?", &bad, 64),
            Err(GenerationError::Template(_))
        ));
    }

    #[test]
    fn nucleus_samples_are_distinct() {
        let c = client();
        let m = ModelRef::mock("m");
        let t = default_generate_template();
        let docs = generate_nucleus(&c, &m, "q?", &t, 3, 0.95, 64).unwrap();
        assert_eq!(docs.len(), 3);
        assert_ne!(docs[0].text, docs[1].text);
        assert_ne!(docs[1].text, docs[2].text);
        assert_ne!(docs[0].text, docs[2].text);
        assert_eq!(
            docs.iter().map(|d| d.rank).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        let one = generate_nucleus(&c, &m, "q?", &t, 1, 0.95, 64).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].text, docs[0].text);

        let keys: Vec<_> = nucleus_requests(&m, "q?", &t, 10, 0.95, 64)
            .iter()
            .map(completion_cache_key)
            .collect();
        for i in 0..keys.len() {
            for j in i + 1..keys.len() {
                assert_ne!(keys[i], keys[j]);
            }
        }
    }

    #[test]
    fn human_prompts_single_equals_greedy() {
        let c = client();
        let m = ModelRef::mock("m");
        let prompts = default_human_prompts();
        let docs = generate_human_prompts(&c, &m, "q?", &prompts, 1, 64).unwrap();
        let greedy = generate_greedy(&c, &m, "q?", &prompts[0], 64).unwrap();
        assert_eq!(docs[0].text, greedy.text);
        assert_eq!(docs[0].prompt_id.as_deref(), Some("#1"));
        assert!(generate_human_prompts(&c, &m, "q?", &prompts[..2], 3, 64).is_err());
    }

    #[test]
    fn incontext_grammar_single_pair() {
        let set = DemonstrationSet {
            cluster_id: 0,
            pairs: vec![demo("1", "a", "b")],
        };
        assert_eq!(
            assemble_incontext_prompt(&set, "c").unwrap(),
            "Question: a\nDocument: b\n\nQuestion: c\nDocument:"
        );
        let empty = DemonstrationSet {
            cluster_id: 0,
            pairs: vec![],
        };
        assert!(assemble_incontext_prompt(&empty, "c").is_err());
    }

    #[test]
    fn budget_trims_longest_document_first() {
        let set = DemonstrationSet {
            cluster_id: 0,
            pairs: vec![
                demo("1", "q1", &"x".repeat(50)),
                demo("2", "q2", &"y".repeat(10)),
            ],
        };
        let full = assemble_incontext_prompt(&set, "q").unwrap();
        let limit = full.chars().count() - 30;
        let fitted = assemble_incontext_prompt_within(&set, "q", limit).unwrap();
        assert_eq!(fitted.chars().count(), limit);
        assert!(fitted.contains(&format!("Document: {}\n", "x".repeat(20))));
        assert!(fitted.contains(&format!("Document: {}\n", "y".repeat(10))));

        // Cutting past the runner-up trims both evenly.
        let tight = assemble_incontext_prompt_within(&set, "q", full.chars().count() - 48).unwrap();
        assert!(tight.contains(&format!("Document: {}\n", "x".repeat(6))));
        assert!(tight.contains(&format!("Document: {}\n", "y".repeat(6))));
    }

    fn toy_pool(n: usize) -> PairPool {
        PairPool {
            entries: (0..n)
                .map(|i| PoolEntry {
                    example_id: format!("t{i}"),
                    question: format!("q{i}"),
                    document: format!("d{i}"),
                    embedding: EmbeddingVector::new(vec![i as f64 + 1.0]).unwrap(),
                })
                .collect(),
            failures: 0,
        }
    }

    fn assignment(labels: Vec<usize>, k: usize) -> ClusterAssignment {
        ClusterAssignment {
            k,
            assignments: labels,
            centroids: vec![vec![0.0]; k],
            inertia: 0.0,
            iterations_run: 1,
            converged: true,
            normalized: false,
            inertia_history: vec![],
        }
    }

    #[test]
    fn exact_and_short_clusters() {
        let pool = toy_pool(8);
        let a = assignment(vec![0, 0, 0, 0, 0, 1, 1, 1], 2);
        let (sets, warnings) = build_demonstration_sets(&pool, &a, 5, 42).unwrap();
        assert_eq!(sets[0].pairs.len(), 5);
        let mut ids: Vec<_> = sets[0].pairs.iter().map(|p| p.example_id.clone()).collect();
        ids.sort();
        assert_eq!(ids, vec!["t0", "t1", "t2", "t3", "t4"]);
        assert_eq!(sets[1].pairs.len(), 3);
        assert_eq!(
            warnings,
            vec![DemoWarning {
                cluster_id: 1,
                available: 3,
                requested: 5
            }]
        );
    }

    #[test]
    fn empty_cluster_is_an_error() {
        let pool = toy_pool(3);
        let a = assignment(vec![0, 0, 0], 2);
        assert_eq!(
            build_demonstration_sets(&pool, &a, 2, 0).unwrap_err(),
            GenerationError::EmptyCluster(1)
        );
    }

    #[test]
    fn clustered_generation_tags_cluster_ids() {
        let c = client();
        let m = ModelRef::mock("m");
        let sets = vec![
            DemonstrationSet {
                cluster_id: 0,
                pairs: vec![demo("1", "a", "b")],
            },
            DemonstrationSet {
                cluster_id: 1,
                pairs: vec![demo("1", "a", "b")],
            },
        ];
        let docs = generate_clustered(&c, &m, "q", &sets, 64, 12_000).unwrap();
        assert_eq!(docs[0].prompt_id.as_deref(), Some("0"));
        assert_eq!(docs[1].prompt_id.as_deref(), Some("1"));
        // Identical demonstrations under greedy decoding give identical text.
        assert_eq!(docs[0].text, docs[1].text);
    }
}
