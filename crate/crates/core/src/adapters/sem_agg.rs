//! Semantic-aggregation adapter: folds the evidence set into per-batch
//! partial summaries, then one combining prompt answers the sub-query.
//! Evidence sets that fit in a single batch skip the fold entirely.

use super::{chat_text, render_all, Adapter, AdapterCapability};
use crate::error::Result;
use crate::llm::{ChatBackend, ChatRequest};
use crate::model::{Document, OperatorKind};

pub const DEFAULT_BATCH: usize = 4;

#[derive(Debug, Clone)]
pub struct SemanticAggregationAdapter {
    batch: usize,
}

impl Default for SemanticAggregationAdapter {
    fn default() -> Self {
        Self { batch: DEFAULT_BATCH }
    }
}

impl SemanticAggregationAdapter {
    pub fn new(batch: usize) -> Self {
        Self { batch: batch.max(1) }
    }
}

impl Adapter for SemanticAggregationAdapter {
    fn id(&self) -> &str {
        "sem-agg"
    }

    fn capability(&self) -> AdapterCapability {
        AdapterCapability::all_kinds(self.id())
    }

    fn run(
        &self,
        _kind: OperatorKind,
        subquery: &str,
        docs: &[&Document],
        backend: &dyn ChatBackend,
    ) -> Result<String> {
        if docs.is_empty() {
            return Ok("no evidence".into());
        }
        let system = "You aggregate evidence documents to answer analytical sub-queries.";
        if docs.len() <= self.batch {
            let req = ChatRequest::new(
                system,
                format!(
                    "Answer the question using the evidence below.\nEvidence:\n{}\nQuestion: {}\n\
                     Answer concisely using only the evidence.",
                    render_all(docs),
                    subquery
                ),
            );
            return chat_text(backend, &req);
        }
        let mut partials = Vec::new();
        for chunk in docs.chunks(self.batch) {
            let req = ChatRequest::new(
                system,
                format!(
                    "Summarize the evidence below as it relates to the question.\nEvidence:\n{}\nQuestion: {}",
                    render_all(chunk),
                    subquery
                ),
            );
            partials.push(chat_text(backend, &req)?);
        }
        let listed = partials
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{}. {p}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        let req = ChatRequest::new(
            system,
            format!(
                "Combine the partial summaries below to answer the question.\nSummaries:\n{listed}\nQuestion: {subquery}\n\
                 Answer concisely using only the summaries."
            ),
        );
        chat_text(backend, &req)
    }
}
