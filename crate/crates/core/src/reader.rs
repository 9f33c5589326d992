//! Zero-shot reading: splice passages into a read template, decode greedily,
//! and cut the completion down to a one-line answer.

use thiserror::Error;

use crate::datamodel::{DataError, Document, PromptTemplate, Slots, TemplateRole};
use crate::llm_backend::{BackendError, CompletionRequest, LlmClient, ModelRef};

pub const DEFAULT_READ_TEMPLATE: &str =
    "Refer to the passage below and answer the following question.\n\nPassage: {background}\n\nQuestion: {question}\n\nAnswer:";

pub const DEFAULT_MAX_DOCS: usize = 10;
pub const DEFAULT_MAX_ANSWER_TOKENS: u32 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReadError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] DataError),
    #[error("template {0} is not a read template")]
    WrongRole(String),
    #[error("model returned an empty answer")]
    EmptyCompletion,
}

pub fn default_read_template() -> PromptTemplate {
    PromptTemplate::new("read-default", DEFAULT_READ_TEMPLATE, TemplateRole::Read)
        .expect("valid template")
}

#[derive(Debug, Clone)]
pub struct ReadRequest<'a> {
    pub question: &'a str,
    pub documents: &'a [Document],
    pub template: &'a PromptTemplate,
    pub max_docs: usize,
    pub max_answer_tokens: u32,
}

impl<'a> ReadRequest<'a> {
    pub fn new(question: &'a str, documents: &'a [Document], template: &'a PromptTemplate) -> Self {
        Self {
            question,
            documents,
            template,
            max_docs: DEFAULT_MAX_DOCS,
            max_answer_tokens: DEFAULT_MAX_ANSWER_TOKENS,
        }
    }
}

/// `Passage 1: ..` blocks separated by blank lines, first `max_docs` only.
pub fn format_background<S: AsRef<str>>(texts: &[S], max_docs: usize) -> String {
    texts
        .iter()
        .take(max_docs)
        .enumerate()
        .map(|(i, t)| format!("Passage {}: {}", i + 1, t.as_ref()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn assemble_read_prompt(req: &ReadRequest<'_>) -> Result<String, ReadError> {
    if req.template.role != TemplateRole::Read {
        return Err(ReadError::WrongRole(req.template.id.clone()));
    }
    req.template.validate()?;
    let texts: Vec<&str> = req.documents.iter().map(|d| d.text.as_str()).collect();
    let background = format_background(&texts, req.max_docs);
    Ok(req.template.render(Slots {
        question: Some(req.question),
        background: Some(&background),
        demonstrations: None,
    }))
}

/// First non-blank line of a completion, trimmed.
pub fn postprocess_answer(raw: &str) -> String {
    let s = raw.trim_start();
    let line = s.split('\n').next().unwrap_or("");
    line.trim().to_string()
}

pub fn read_answer(
    client: &LlmClient,
    model: &ModelRef,
    req: &ReadRequest<'_>,
) -> Result<String, ReadError> {
    let prompt = assemble_read_prompt(req)?;
    let res = client.complete(&CompletionRequest::greedy(
        model.clone(),
        prompt,
        req.max_answer_tokens,
    ))?;
    let answer = postprocess_answer(&res.text);
    if answer.is_empty() {
        return Err(ReadError::EmptyCompletion);
    }
    Ok(answer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_backend::{MockTransport, ResponseCache};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document::retrieved(format!("text {i}"), i))
            .collect()
    }

    #[test]
    fn closed_book_has_empty_background() {
        let t = default_read_template();
        let p = assemble_read_prompt(&ReadRequest::new("who?", &[], &t)).unwrap();
        assert_eq!(
            p,
            "Refer to the passage below and answer the following question.\n\nPassage: \n\nQuestion: who?\n\nAnswer:"
        );
    }

    #[test]
    fn only_max_docs_passages() {
        let t = default_read_template();
        let d = docs(12);
        let p = assemble_read_prompt(&ReadRequest::new("q", &d, &t)).unwrap();
        let re = regex::Regex::new(r"Passage \d+: ").unwrap();
        assert_eq!(re.find_iter(&p).count(), 10);
        assert!(p.contains("Passage 10: text 9"));
        assert!(!p.contains("text 10"));
    }

    #[test]
    fn generate_template_rejected() {
        let t = PromptTemplate::new("g", "{question}", TemplateRole::Generate).unwrap();
        assert!(matches!(
            assemble_read_prompt(&ReadRequest::new("q", &[], &t)),
            Err(ReadError::WrongRole(_))
        ));
    }

    #[test]
    fn postprocess_cuts_at_first_line() {
        assert_eq!(postprocess_answer(" Olympia\nThe city of"), "Olympia");
        assert_eq!(postprocess_answer("\n\n  Elis  \nmore"), "Elis");
        assert_eq!(postprocess_answer("   \n"), "");
    }

    #[test]
    fn mock_answer_is_stable() {
        let m = ModelRef::mock("m");
        let t = default_read_template();
        let d = docs(3);
        let run = || {
            let c = LlmClient::new(Arc::new(MockTransport::new()), ResponseCache::ephemeral());
            read_answer(&c, &m, &ReadRequest::new("q", &d, &t)).unwrap()
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn postprocess_is_idempotent(s in "\\PC*") {
            let once = postprocess_answer(&s);
            prop_assert_eq!(postprocess_answer(&once), once.clone());
        }

        #[test]
        fn permuting_documents_keeps_content(mut texts in prop::collection::vec("[a-z]{1,8}", 0..15), max_docs in 1usize..12) {
            let t = default_read_template();
            let d: Vec<Document> = texts.iter().enumerate().map(|(i, s)| Document::retrieved(s.clone(), i)).collect();
            let p = assemble_read_prompt(&ReadRequest { max_docs, ..ReadRequest::new("q", &d, &t) }).unwrap();
            for s in texts.iter().take(max_docs) {
                prop_assert!(p.contains(s.as_str()));
            }
            texts.reverse();
            let d2: Vec<Document> = texts.iter().enumerate().map(|(i, s)| Document::retrieved(s.clone(), i)).collect();
            let p2 = assemble_read_prompt(&ReadRequest { max_docs, ..ReadRequest::new("q", &d2, &t) }).unwrap();
            for s in texts.iter().take(max_docs) {
                prop_assert!(p2.contains(s.as_str()));
            }
        }
    }
}
