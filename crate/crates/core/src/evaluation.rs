//! Answer normalization and the QA / fact-checking / dialogue metrics.
//!
//! "Document contains answer" means the normalized answer occurs in the
//! normalized document on token boundaries: `" " + answer + " "` is a
//! substring of `" " + document + " "`. So `opera` matches "his opera
//! 'the magic flute'" but not "operas".

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{ExampleScores, Label, MetricReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("answer list is empty")]
    EmptyAnswerList,
    #[error("K must be at least 1")]
    ZeroK,
    #[error("no examples to aggregate")]
    EmptyRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationRules {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub remove_articles: bool,
    pub collapse_whitespace: bool,
}

impl Default for NormalizationRules {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            remove_articles: true,
            collapse_whitespace: true,
        }
    }
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}'..='\u{3003}'
            | '\u{3008}'..='\u{3011}'
            | '\u{FF01}'..='\u{FF0F}'
            | '\u{FF1A}'..='\u{FF1F}')
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Replaces standalone articles (maximal word-character runs equal to
/// a/an/the) with a space.
fn drop_articles(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if ARTICLES.contains(&word.as_str()) {
            out.push(' ');
        } else {
            out.push_str(word);
        }
        word.clear();
    };
    for c in s.chars() {
        if is_word_char(c) {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

/// lowercase → punctuation to spaces → drop articles → collapse whitespace → trim.
pub fn normalize_answer(text: &str, rules: &NormalizationRules) -> String {
    let mut s = if rules.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    if rules.strip_punctuation {
        s = s
            .chars()
            .map(|c| if is_punctuation(c) { ' ' } else { c })
            .collect();
    }
    if rules.remove_articles {
        s = drop_articles(&s);
    }
    if rules.collapse_whitespace {
        s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    s.trim().to_string()
}

pub fn normalize(text: &str) -> String {
    normalize_answer(text, &NormalizationRules::default())
}

fn require_answers<S: AsRef<str>>(answers: &[S]) -> Result<(), EvalError> {
    if answers.is_empty() {
        Err(EvalError::EmptyAnswerList)
    } else {
        Ok(())
    }
}

/// 1 when the normalized prediction equals some normalized answer.
pub fn exact_match<S: AsRef<str>>(prediction: &str, answers: &[S]) -> Result<u8, EvalError> {
    require_answers(answers)?;
    let p = normalize(prediction);
    Ok(answers.iter().any(|a| normalize(a.as_ref()) == p) as u8)
}

/// Token-aligned containment of an already-normalized answer. Empty answers
/// never match.
pub fn contains_normalized(normalized_doc: &str, normalized_answer: &str) -> bool {
    if normalized_answer.is_empty() {
        return false;
    }
    let doc = format!(" {normalized_doc} ");
    let ans = format!(" {normalized_answer} ");
    doc.contains(&ans)
}

/// Distinct normalized answers, first-seen order.
fn normalized_answers<S: AsRef<str>>(answers: &[S]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for a in answers {
        let n = normalize(a.as_ref());
        if !out.contains(&n) {
            out.push(n);
        }
    }
    out
}

/// 1 when any of the first `k` documents contains any acceptable answer.
pub fn recall_at_k<D: AsRef<str>, S: AsRef<str>>(
    documents: &[D],
    answers: &[S],
    k: usize,
) -> Result<u8, EvalError> {
    require_answers(answers)?;
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let answers = normalized_answers(answers);
    let hit = documents.iter().take(k).any(|d| {
        let nd = normalize(d.as_ref());
        answers.iter().any(|a| contains_normalized(&nd, a))
    });
    Ok(hit as u8)
}

/// For each distinct acceptable answer (first-seen order), the number of
/// documents that contain it.
pub fn answer_hit_counts<D: AsRef<str>, S: AsRef<str>>(
    documents: &[D],
    answers: &[S],
) -> Result<Vec<(String, usize)>, EvalError> {
    require_answers(answers)?;
    let docs: Vec<String> = documents.iter().map(|d| normalize(d.as_ref())).collect();
    let mut out: Vec<(String, usize)> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    for a in answers {
        let n = normalize(a.as_ref());
        if seen.contains(&n) {
            continue;
        }
        let count = docs.iter().filter(|d| contains_normalized(d, &n)).count();
        seen.push(n);
        out.push((a.as_ref().to_string(), count));
    }
    Ok(out)
}

/// Number of distinct acceptable answers found in at least one document.
pub fn answer_coverage<D: AsRef<str>, S: AsRef<str>>(
    documents: &[D],
    answers: &[S],
) -> Result<usize, EvalError> {
    Ok(answer_hit_counts(documents, answers)?
        .iter()
        .filter(|(_, n)| *n > 0)
        .count())
}

/// Coverage as a fraction of the distinct acceptable answers.
pub fn answer_coverage_fraction<D: AsRef<str>, S: AsRef<str>>(
    documents: &[D],
    answers: &[S],
) -> Result<f64, EvalError> {
    let distinct = normalized_answers(answers).len();
    let covered = answer_coverage(documents, answers)?;
    Ok(covered as f64 / distinct.max(1) as f64)
}

/// Maps a free-text verdict to a label by case-insensitive prefix.
pub fn map_label(prediction: &str) -> Option<Label> {
    let p = prediction.trim().to_lowercase();
    if ["support", "true", "yes"].iter().any(|s| p.starts_with(s)) {
        Some(Label::Supports)
    } else if ["refut", "false", "no"].iter().any(|s| p.starts_with(s)) {
        Some(Label::Refutes)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelScore {
    pub score: u8,
    pub unmappable: bool,
}

pub fn fact_check_accuracy(prediction: &str, gold: Label) -> LabelScore {
    match map_label(prediction) {
        Some(l) => LabelScore {
            score: (l == gold) as u8,
            unmappable: false,
        },
        None => LabelScore {
            score: 0,
            unmappable: true,
        },
    }
}

fn tokens(text: &str, rules: &NormalizationRules) -> Vec<String> {
    normalize_answer(text, rules)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Harmonic mean of unigram precision and recall over multiset overlap.
pub fn unigram_f1(prediction: &str, reference: &str, rules: &NormalizationRules) -> f64 {
    let p = tokens(prediction, rules);
    let r = tokens(reference, rules);
    if p.is_empty() || r.is_empty() {
        return (p.is_empty() && r.is_empty()) as u8 as f64;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &r {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub const ROUGE_L_BETA: f64 = 1.2;

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure, recall weighted by β = 1.2.
pub fn rouge_l(prediction: &str, reference: &str, rules: &NormalizationRules) -> f64 {
    let p = tokens(prediction, rules);
    let r = tokens(reference, rules);
    if p.is_empty() || r.is_empty() {
        return (p.is_empty() && r.is_empty()) as u8 as f64;
    }
    let lcs = lcs_len(&p, &r);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / p.len() as f64;
    let recall = lcs as f64 / r.len() as f64;
    let b2 = ROUGE_L_BETA * ROUGE_L_BETA;
    (1.0 + b2) * precision * recall / (recall + b2 * precision)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-metric arithmetic means. A metric is reported when at least one
/// example carries it, and averaged over those examples.
pub fn aggregate(
    per_example: Vec<ExampleScores>,
    dataset_id: &str,
    unmappable_predictions: usize,
) -> Result<MetricReport, EvalError> {
    if per_example.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut recall: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for ex in &per_example {
        for (&k, &v) in &ex.recall_at_k {
            let e = recall.entry(k).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    Ok(MetricReport {
        dataset_id: dataset_id.to_string(),
        n_examples: per_example.len(),
        em: mean(per_example.iter().filter_map(|e| e.em)),
        recall_at_k: recall
            .into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect(),
        answer_coverage: mean(per_example.iter().filter_map(|e| e.answer_coverage)),
        accuracy: mean(per_example.iter().filter_map(|e| e.accuracy)),
        f1: mean(per_example.iter().filter_map(|e| e.f1)),
        rouge_l: mean(per_example.iter().filter_map(|e| e.rouge_l)),
        unmappable_predictions,
        per_example,
    })
}
