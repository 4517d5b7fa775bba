//! Stage 4: optional synthesis of sub-query results into one concise final
//! answer with conflict resolution. When disabled, the pipeline reports
//! the last sub-query's result instead.

use crate::error::Result;
use crate::llm::{ChatBackend, ChatRequest};
use crate::model::Query;

/// Hard cap applied to the aggregated answer, in whitespace tokens.
pub const MAX_ANSWER_TOKENS: usize = 64;

const SYSTEM: &str = "You are the final answer aggregator for a multi-step analytical pipeline.";

fn truncate_tokens(s: &str, max: usize) -> String {
    let tokens: Vec<&str> = s.split_whitespace().collect();
    if tokens.len() <= max {
        s.trim().to_string()
    } else {
        tokens[..max].join(" ")
    }
}

/// Aggregate ordered (sub-query, answer) pairs into the final answer.
/// Grounded only in the provided results; overlapping facts are
/// deduplicated and conflicts resolve toward answers coherent with
/// earlier established intermediate facts (preferring the later, more
/// advanced sub-query between equally coherent candidates). Backend
/// failures fall back to the last sub-query's answer with a warning.
pub fn agg_results(
    results: &[(String, String)],
    query: &Query,
    backend: &dyn ChatBackend,
) -> Result<String> {
    assert!(!results.is_empty(), "agg_results requires at least one sub-query result");
    let listed = results
        .iter()
        .enumerate()
        .map(|(i, (sq, ans))| format!("{}. {sq} -> {ans}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let req = ChatRequest::new(
        SYSTEM,
        format!(
            "Original query: {}\nSub-query results:\n{listed}\n\
             Synthesize the final answer using ONLY the results above; do not invent facts. \
             Deduplicate overlapping facts. If results conflict, prefer the answer that is \
             coherent with the earlier established facts; between equally coherent answers \
             prefer the later sub-query. \
             Reply with a short factual phrase of at most a dozen words.",
            query.text
        ),
    );
    let last_answer = || results.last().expect("results non-empty").1.clone();
    match backend.chat(&req) {
        Ok(resp) => {
            let answer = truncate_tokens(&resp.text, MAX_ANSWER_TOKENS);
            if crate::eval::normalize_tokens(&answer).is_empty() {
                log::warn!("aggregator produced an empty answer; falling back to last sub-query");
                Ok(last_answer())
            } else {
                Ok(answer)
            }
        }
        Err(e) => {
            log::warn!("aggregation failed ({e}); falling back to last sub-query answer");
            Ok(last_answer())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockChatBackend, ScriptRule};

    fn rule(contains: &str, reply: &str) -> ScriptRule {
        ScriptRule { contains: contains.into(), reply: reply.into() }
    }

    fn query() -> Query {
        Query::new("q", "When was the last time capital punishment took place?").unwrap()
    }

    #[test]
    fn synthesizes_from_results() {
        let mock = MockChatBackend::new(vec![rule("Original query:", "2006 in California.")], None);
        let results = vec![
            ("Which state?".to_string(), "California".to_string()),
            ("When?".to_string(), "2006".to_string()),
        ];
        let answer = agg_results(&results, &query(), &mock).unwrap();
        assert_eq!(answer, "2006 in California.");
        let prompt = mock.transcript()[0].request.user_prompt.clone();
        assert!(prompt.contains("Which state? -> California"));
    }

    #[test]
    fn backend_error_falls_back_to_last_answer() {
        let mock = MockChatBackend::new(vec![], None); // always a script miss
        let results = vec![("a?".to_string(), "first".to_string()), ("b?".to_string(), "last".to_string())];
        let answer = agg_results(&results, &query(), &mock).unwrap();
        assert_eq!(answer, "last");
    }

    #[test]
    fn empty_reply_falls_back_to_last_answer() {
        let mock = MockChatBackend::new(vec![rule("Original query:", "   ")], None);
        let results = vec![("a?".to_string(), "only".to_string())];
        assert_eq!(agg_results(&results, &query(), &mock).unwrap(), "only");
    }

    #[test]
    fn long_replies_truncate_at_the_token_cap() {
        let long = (0..100).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let mock = MockChatBackend::new(vec![rule("Original query:", &long)], None);
        let results = vec![("a?".to_string(), "x".to_string())];
        let answer = agg_results(&results, &query(), &mock).unwrap();
        assert_eq!(answer.split_whitespace().count(), MAX_ANSWER_TOKENS);
    }
}
