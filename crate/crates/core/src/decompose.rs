//! Stage 1: complexity checking and dynamic decomposition of a query into
//! at most `max_out` single-modality sub-queries plus their dependency
//! graph. Oversized or unparseable decompositions are re-prompted with
//! feedback up to `max_it` times; after that the final decomposition is
//! returned as-is (untruncated) and flagged, or an error carries the raw
//! output if it never parsed.

use crate::error::{Error, Result};
use crate::jsonx;
use crate::llm::{ChatBackend, ChatRequest};
use crate::model::{DependencyGraph, OperatorKind, Query, SubQuery};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeConfig {
    /// Enable the complexity checker; simple queries bypass decomposition.
    pub check: bool,
    /// Maximum sub-queries requested from the model.
    pub max_out: usize,
    /// Maximum re-decomposition iterations.
    pub max_it: u32,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self { check: true, max_out: 3, max_it: 2 }
    }
}

impl DecomposeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_out < 1 {
            return Err(Error::Config("max_out must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Complexity {
    Simple,
    Complex,
}

/// Decomposition result with loop metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub graph: DependencyGraph,
    pub complexity: Option<Complexity>,
    pub retries: u32,
    /// True when the final decomposition still exceeded `max_out`; it is
    /// returned untruncated.
    pub oversized: bool,
}

const CHECK_SYSTEM: &str = "You classify analytical queries as SIMPLE or COMPLEX before decomposition.";
const DECOMPOSE_SYSTEM: &str =
    "You decompose complex multi-modal analytical queries into simple single-modality sub-queries.";

fn check_prompt(q: &Query) -> ChatRequest {
    ChatRequest::new(
        CHECK_SYSTEM,
        format!(
            "COMPLEX signs: multi-part questions; multi-step reasoning combining two or more facts; \
             aggregation or grouped analysis; complex filtering with nontrivial conditions; \
             multi-entity comparison or ranking; pipeline-style tasks.\n\
             SIMPLE signs: one clear intent; asks for a single entity or fact; one operator can \
             answer it directly; decomposition would not improve clarity.\n\
             Query to classify: {}\n\
             Respond with exactly one word: SIMPLE or COMPLEX.",
            q.text
        ),
    )
}

/// Classify a query. Any verdict that is not unambiguously SIMPLE counts
/// as Complex.
pub fn check_complexity(q: &Query, backend: &dyn ChatBackend) -> Result<Complexity> {
    let reply = backend.chat(&check_prompt(q))?;
    let verdict = reply.text.trim().to_ascii_uppercase();
    if verdict.contains("SIMPLE") && !verdict.contains("COMPLEX") {
        Ok(Complexity::Simple)
    } else {
        Ok(Complexity::Complex)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RawSubQuery {
    pub q: String,
    pub modality: String,
    /// Omitted (not merely empty) dependency lists default to a chain edge
    /// from the previous sub-query.
    #[serde(default)]
    pub deps: Option<Vec<usize>>,
}

fn decompose_prompt(q: &Query, max_out: usize, feedback: Option<&str>) -> ChatRequest {
    let feedback_line = feedback.map(|f| format!("{f}\n")).unwrap_or_default();
    ChatRequest::new(
        DECOMPOSE_SYSTEM,
        format!(
            "Break the query into at most {max_out} sub-queries. Each sub-query must be a short, \
             self-contained question answerable within exactly one modality (text, table, or image). \
             Order them basic-to-advanced: earlier sub-queries retrieve grounding facts, later ones \
             build on their results. Declare, per sub-query, the zero-based indices of earlier \
             sub-queries whose answers it needs.\n{feedback_line}\
             Query to decompose: {}\n\
             Reply with only a JSON array: \
             [{{\"q\": \"...\", \"modality\": \"text|table|image\", \"deps\": [0]}}]",
            q.text
        ),
    )
}

fn parse_decomposition(reply: &str) -> Option<Vec<RawSubQuery>> {
    let value = jsonx::extract_array(reply)?;
    let subs: Vec<RawSubQuery> = serde_json::from_value(value).ok()?;
    if subs.is_empty() {
        return None;
    }
    // Every sub-query must carry exactly one recognizable modality hint.
    if subs.iter().any(|s| OperatorKind::parse(&s.modality).is_none()) {
        return None;
    }
    Some(subs)
}

/// `ParseDependency`: turn raw (text, modality, deps) triples into a
/// validated dependency graph. Forward references and cycles are rejected;
/// an omitted dependency declaration defaults to the chain edge (i-1, i).
pub fn parse_dependencies(raw: &[RawSubQuery]) -> Result<DependencyGraph> {
    let mut nodes = Vec::with_capacity(raw.len());
    for (i, sub) in raw.iter().enumerate() {
        let deps: BTreeSet<usize> = match &sub.deps {
            Some(declared) => {
                for &d in declared {
                    if d >= i {
                        return Err(Error::Dependency(format!(
                            "sub-query {i} declares dependency on {d} (forward reference)"
                        )));
                    }
                }
                declared.iter().copied().collect()
            }
            None if i > 0 => [i - 1].into_iter().collect(),
            None => BTreeSet::new(),
        };
        let mut node = SubQuery::new(i, sub.q.clone(), deps)?;
        node.modality_hint = OperatorKind::parse(&sub.modality);
        nodes.push(node);
    }
    DependencyGraph::new(nodes)
}

/// Dynamic query decomposition. With `check` enabled, a query judged
/// Simple is returned as a single-node graph without ever reaching the
/// decomposition prompt.
pub fn decompose(q: &Query, cfg: &DecomposeConfig, backend: &dyn ChatBackend) -> Result<Decomposition> {
    cfg.validate()?;
    let mut iter: u32 = 0;
    let mut feedback: Option<String> = None;
    let mut complexity = None;
    let mut last: Option<std::result::Result<Vec<RawSubQuery>, String>> = None;

    while iter <= cfg.max_it {
        let subs: Vec<RawSubQuery> = if cfg.check {
            let verdict = check_complexity(q, backend)?;
            complexity = Some(verdict);
            if verdict == Complexity::Complex {
                let reply = backend.chat(&decompose_prompt(q, cfg.max_out, feedback.as_deref()))?;
                match parse_decomposition(&reply.text) {
                    Some(subs) => subs,
                    None => {
                        iter += 1;
                        feedback = Some(
                            "Previous attempt was not valid JSON. Output only the JSON array.".into(),
                        );
                        last = Some(Err(reply.text));
                        continue;
                    }
                }
            } else {
                vec![RawSubQuery { q: q.text.clone(), modality: String::new(), deps: Some(vec![]) }]
            }
        } else {
            let reply = backend.chat(&decompose_prompt(q, cfg.max_out, feedback.as_deref()))?;
            match parse_decomposition(&reply.text) {
                Some(subs) => subs,
                None => {
                    iter += 1;
                    feedback =
                        Some("Previous attempt was not valid JSON. Output only the JSON array.".into());
                    last = Some(Err(reply.text));
                    continue;
                }
            }
        };
        if subs.len() > cfg.max_out {
            iter += 1;
            feedback = Some(format!(
                "Previous attempt produced {} sub-queries. You MUST produce at most {} sub-queries.",
                subs.len(),
                cfg.max_out
            ));
            last = Some(Ok(subs));
            continue;
        }
        let graph = build_graph(q, &subs)?;
        return Ok(Decomposition { graph, complexity, retries: iter, oversized: false });
    }

    // Retries exhausted: return the final decomposition as-is, flagged,
    // or surface the raw output if it never parsed.
    match last.expect("loop ran at least once") {
        Ok(subs) => {
            let graph = build_graph(q, &subs)?;
            Ok(Decomposition { graph, complexity, retries: cfg.max_it, oversized: true })
        }
        Err(raw) => Err(Error::UnparseableDecomposition { retries: cfg.max_it, raw }),
    }
}

fn build_graph(q: &Query, subs: &[RawSubQuery]) -> Result<DependencyGraph> {
    // The single-node bypass carries the original query with no hint.
    if subs.len() == 1 && subs[0].modality.is_empty() {
        return DependencyGraph::single(q.text.clone());
    }
    parse_dependencies(subs)
}
