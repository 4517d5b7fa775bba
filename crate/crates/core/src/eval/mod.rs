//! Answer-quality metrics: token-level F1, Hit, Coverage, and LLM-judged
//! Semantic Hit. Normalization is lowercasing, punctuation removal, and
//! whitespace trimming; tokens split on whitespace after every
//! non-alphanumeric character becomes a space.

mod harness;

pub use harness::{
    collect_traces, evaluate, CollectOutcome, EvalFixture, FixtureCase, MetricReport, QueryMetrics,
};

use crate::llm::{ChatBackend, ChatRequest};

/// Multiset of normalized tokens. Normalization is idempotent and never
/// yields empty tokens.
pub fn normalize_tokens(s: &str) -> Vec<String> {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Multiset overlap count |T(a) ∩ T(b)|.
fn overlap(pred: &[String], gold: &[String]) -> usize {
    let mut counts: std::collections::HashMap<&str, usize> = Default::default();
    for t in gold {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut m = 0;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                m += 1;
            }
        }
    }
    m
}

/// Token-level F1 against one gold answer.
fn f1_single(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let m = overlap(pred, gold) as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / pred.len() as f64;
    let r = m / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Maximum token-level F1 over the gold answer set.
pub fn token_f1(pred: &str, golds: &[String]) -> f64 {
    let pred = normalize_tokens(pred);
    golds
        .iter()
        .map(|g| f1_single(&pred, &normalize_tokens(g)))
        .fold(0.0, f64::max)
}

/// 1.0 iff the prediction shares at least one token with any gold answer.
pub fn hit(pred: &str, golds: &[String]) -> f64 {
    let pred = normalize_tokens(pred);
    let any = golds
        .iter()
        .any(|g| overlap(&pred, &normalize_tokens(g)) > 0);
    if any {
        1.0
    } else {
        0.0
    }
}

/// Gold-token recall, maximized over golds: m / |T(gold)|.
pub fn coverage(pred: &str, golds: &[String]) -> f64 {
    let pred = normalize_tokens(pred);
    golds
        .iter()
        .map(|g| {
            let gold = normalize_tokens(g);
            if gold.is_empty() {
                0.0
            } else {
                overlap(&pred, &gold) as f64 / gold.len() as f64
            }
        })
        .fold(0.0, f64::max)
}

/// LLM-as-judge factual-equivalence indicator. The judge must reply with
/// the single token YES or NO; anything else (including backend errors)
/// counts as NO with a warning, never a crash.
pub fn semantic_hit(pred: &str, golds: &[String], question: &str, judge: &dyn ChatBackend) -> f64 {
    let golds_joined = golds
        .iter()
        .map(|g| format!("- {g}"))
        .collect::<Vec<_>>()
        .join("\n");
    let req = ChatRequest::new(
        "You judge factual equivalence of answers.",
        format!(
            "Question: {question}\nPrediction: {pred}\nAccepted answers:\n{golds_joined}\n\
             Does the prediction convey the same factual content as at least one accepted \
             answer, ignoring surface-form variations? Reply with exactly YES or NO."
        ),
    );
    match judge.chat(&req) {
        Ok(resp) => {
            let verdict = resp.text.trim().to_ascii_uppercase();
            match verdict.as_str() {
                "YES" => 1.0,
                "NO" => 0.0,
                other => {
                    log::warn!("semantic judge returned {other:?}; counting as NO");
                    0.0
                }
            }
        }
        Err(e) => {
            log::warn!("semantic judge failed ({e}); counting as NO");
            0.0
        }
    }
}
