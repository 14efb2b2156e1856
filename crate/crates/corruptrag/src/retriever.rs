//! Exact top-N retrieval over a store snapshot, plus a relevance audit.
//!
//! Retrieval is a linear scan: every document is scored against the query and
//! the best N survive. Selection runs through a bounded min-heap, not a full
//! sort, so tests can cross-check it against an independent sort-everything
//! oracle. Ordering is total and deterministic: higher score first, ties by
//! ascending document id.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::corpus::{StoreSnapshot, TargetedQuery};
use crate::embedder::{similarity, Embedder, SimilarityMetric};
use crate::error::{Error, Result};
use crate::generator::{complete, ChatParams, ChatProvider, CostLedger};
use crate::harness::judge::parse_label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    /// Best first; length is `min(n_requested, store size)`.
    pub ranked: Vec<RankedDoc>,
    pub n_requested: usize,
}

impl RetrievalResult {
    /// 1-based rank of a document, if it was retrieved.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.ranked.iter().position(|r| r.doc_id == doc_id).map(|p| p + 1)
    }
}

#[derive(Debug)]
struct Candidate {
    score: f64,
    doc_id: String,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Greater means better: higher score, then lexicographically smaller id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.doc_id.cmp(&self.doc_id))
    }
}

/// Scores every document against `query_text` and returns the top `n`.
pub fn retrieve_top_n(
    embedder: &dyn Embedder,
    store: &StoreSnapshot,
    query_id: &str,
    query_text: &str,
    n: usize,
    metric: SimilarityMetric,
) -> Result<RetrievalResult> {
    if n == 0 {
        return Err(Error::InvalidArg("retrieval depth n must be at least 1".into()));
    }
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let query_vector = embedder.embed(query_text)?;
    let texts: Vec<&str> = store.documents().iter().map(|d| d.text.as_str()).collect();
    let doc_vectors = embedder.embed_batch(&texts)?;

    let mut heap: BinaryHeap<std::cmp::Reverse<Candidate>> = BinaryHeap::with_capacity(n);
    for (doc, vector) in store.documents().iter().zip(&doc_vectors) {
        let score = similarity(&query_vector, vector, metric)?;
        let candidate = Candidate {
            score,
            doc_id: doc.id.clone(),
        };
        if heap.len() < n {
            heap.push(std::cmp::Reverse(candidate));
        } else if let Some(worst) = heap.peek() {
            if candidate > worst.0 {
                heap.pop();
                heap.push(std::cmp::Reverse(candidate));
            }
        }
    }
    let mut kept: Vec<Candidate> = heap.into_iter().map(|r| r.0).collect();
    kept.sort_by(|a, b| b.cmp(a));
    Ok(RetrievalResult {
        query_id: query_id.to_string(),
        ranked: kept
            .into_iter()
            .map(|c| RankedDoc {
                doc_id: c.doc_id,
                score: c.score,
            })
            .collect(),
        n_requested: n,
    })
}

/// How the audit decides whether a retrieved text implies the correct answer.
pub enum AuditJudge<'a> {
    /// Verbatim substring scan for the correct answer.
    CorrectAnswerSubstring,
    /// Ask a chat provider per text and parse a `[Label: ...]` decision.
    Llm {
        provider: &'a dyn ChatProvider,
        ledger: &'a CostLedger,
    },
}

impl AuditJudge<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            AuditJudge::CorrectAnswerSubstring => "substring",
            AuditJudge::Llm { .. } => "llm",
        }
    }
}

pub fn audit_prompt(question: &str, correct_answer: &str, text: &str) -> String {
    format!(
        "I will provide a text. Please judge whether the text implies that the answer to the question \"{question}\" is \"{correct_answer}\". Begin your judgement by providing a short explanation. After providing your explanation, you must give your decision strictly in terms of \"[Label: Yes]\" or \"[Label: No]\".\nText: {text}"
    )
}

/// Counts how many retrieved texts imply the query's correct answer. Bounded
/// by the number of retrieved documents.
pub fn relevance_audit(
    query: &TargetedQuery,
    result: &RetrievalResult,
    store: &StoreSnapshot,
    judge: &AuditJudge,
) -> Result<usize> {
    let mut relevant = 0;
    for ranked in &result.ranked {
        let doc = store.get(&ranked.doc_id).ok_or_else(|| {
            Error::InvalidArg(format!("ranked doc {} not in store", ranked.doc_id))
        })?;
        let implied = match judge {
            AuditJudge::CorrectAnswerSubstring => doc.text.contains(&query.correct_answer),
            AuditJudge::Llm { provider, ledger } => {
                let prompt = audit_prompt(&query.question, &query.correct_answer, &doc.text);
                let completion = complete(*provider, &prompt, &ChatParams::default(), ledger)?;
                parse_label(&completion.text).unwrap_or(false)
            }
        };
        if implied {
            relevant += 1;
        }
    }
    Ok(relevant)
}
