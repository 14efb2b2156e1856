//! Answer judging: did the generated answer convey the target answer?
//!
//! The offline judge is a normalized substring check: case-fold both sides,
//! replace punctuation with spaces, collapse whitespace, then test
//! containment. The LLM judge asks a chat provider and parses a
//! `[Label: Yes]` / `[Label: No]` decision; reports carry which judge ran,
//! since judged-match rates are only comparable under the same judge.

use crate::error::Result;
use crate::generator::{complete, ChatParams, ChatProvider, CostLedger};

/// Lowercases, maps every non-alphanumeric character to a space, and
/// collapses runs of whitespace.
pub fn normalize(text: &str) -> String {
    let mapped: String = text
        .chars()
        .flat_map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().collect::<Vec<char>>()
            } else {
                vec![' ']
            }
        })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when the normalized needle occurs inside the normalized haystack.
/// An empty needle never matches; containment of nothing is meaningless.
pub fn normalized_contains(haystack: &str, needle: &str) -> bool {
    let needle = normalize(needle);
    if needle.is_empty() {
        return false;
    }
    normalize(haystack).contains(&needle)
}

/// Finds the final `[Label: Yes]` / `[Label: No]` marker; the last one wins
/// because judge prompts ask for the decision after the explanation.
pub fn parse_label(text: &str) -> Option<bool> {
    let yes = text.rfind("[Label: Yes]");
    let no = text.rfind("[Label: No]");
    match (yes, no) {
        (Some(y), Some(n)) => Some(y > n),
        (Some(_), None) => Some(true),
        (None, Some(_)) => Some(false),
        (None, None) => None,
    }
}

pub fn answer_match_prompt(generated: &str, target: &str) -> String {
    format!(
        "I will provide a generated answer and a reference answer. Please judge whether the generated answer conveys the same answer as the reference. Begin your judgement by providing a short explanation. After providing your explanation, you must give your decision strictly in terms of \"[Label: Yes]\" or \"[Label: No]\".\nGenerated answer: {generated}\nReference answer: {target}"
    )
}

pub enum AnswerJudge<'a> {
    NormalizedSubstring,
    Llm {
        provider: &'a dyn ChatProvider,
        ledger: &'a CostLedger,
    },
}

impl AnswerJudge<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            AnswerJudge::NormalizedSubstring => "substring",
            AnswerJudge::Llm { .. } => "llm",
        }
    }

    /// Decides whether `generated` conveys `target`. Unparseable LLM output
    /// counts as no match rather than failing the trial.
    pub fn matches(&self, generated: &str, target: &str) -> Result<bool> {
        match self {
            AnswerJudge::NormalizedSubstring => Ok(normalized_contains(generated, target)),
            AnswerJudge::Llm { provider, ledger } => {
                let prompt = answer_match_prompt(generated, target);
                let completion = complete(*provider, &prompt, &ChatParams::default(), ledger)?;
                Ok(parse_label(&completion.text).unwrap_or(false))
            }
        }
    }
}
