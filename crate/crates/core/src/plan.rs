//! Stage 2: logical planning. Rank the candidate data operators for a
//! sub-query by confidence, using repository metadata only (titles and
//! captions, never payload bytes). Equal confidences break by the fixed
//! kind order Text, Table, Image.

use crate::error::{Error, Result};
use crate::jsonx;
use crate::llm::{ChatBackend, ChatRequest};
use crate::model::{DocumentRepository, OperatorKind, SubQuery};
use serde::{Deserialize, Serialize};

/// Candidate documents attached to each ranked operator.
pub const DEFAULT_MAX_CANDIDATE_DOCS: usize = 8;

/// One (operator kind, confidence) candidate with its metadata-selected
/// supporting documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedOperator {
    pub kind: OperatorKind,
    pub subquery_index: usize,
    pub confidence: f64,
    pub candidate_doc_ids: Vec<String>,
}

/// Per-sub-query ranked operators, confidence descending.
pub type Plan = Vec<RankedOperator>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub max_candidate_docs: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { max_candidate_docs: DEFAULT_MAX_CANDIDATE_DOCS }
    }
}

const SYSTEM: &str = "You rank data operators for a sub-query using document metadata only.";

fn plan_prompt(subquery_text: &str, ops: &[OperatorKind], repo: &DocumentRepository) -> ChatRequest {
    let ops_list = ops.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ");
    let mut listing = String::new();
    for doc in repo.documents() {
        listing.push_str(&format!(
            "{} | {} | {} | {}\n",
            doc.id,
            doc.modality().name(),
            doc.title,
            doc.caption
        ));
    }
    ChatRequest::new(
        SYSTEM,
        format!(
            "Sub-query to plan: {subquery_text}\n\
             Available operators: {ops_list}\n\
             Documents (id | modality | title | caption):\n{listing}\
             Rank every available operator by how suitable its modality is for answering the \
             sub-query. Consider direct mention or implication of a modality and the nature of \
             the requested information (quantitative comparison favors table, historical facts \
             favor text, appearance favors image). For each operator also pick the documents of \
             that modality whose title or caption looks relevant.\n\
             Reply with only a JSON array, most confident first: \
             [{{\"operator\": \"text|table|image\", \"confidence\": 0.0, \"doc_ids\": [\"...\"]}}]"
        ),
    )
}

#[derive(Deserialize)]
struct RawRanked {
    operator: String,
    confidence: f64,
    #[serde(default)]
    doc_ids: Vec<String>,
}

fn parse_plan(
    reply: &str,
    subquery_index: usize,
    ops: &[OperatorKind],
    repo: &DocumentRepository,
    cfg: &PlannerConfig,
) -> Option<Plan> {
    let value = jsonx::extract_array(reply)?;
    let raw: Vec<RawRanked> = serde_json::from_value(value).ok()?;
    let mut by_kind: Vec<Option<RankedOperator>> = vec![None; 3];
    for entry in raw {
        let Some(kind) = OperatorKind::parse(&entry.operator) else {
            continue;
        };
        if !ops.contains(&kind) || by_kind[kind.index()].is_some() {
            continue; // unrequested or duplicated kinds are ignored
        }
        if !entry.confidence.is_finite() {
            return None;
        }
        let candidate_doc_ids: Vec<String> = entry
            .doc_ids
            .into_iter()
            .filter(|id| repo.get(id).is_some_and(|d| d.modality() == kind))
            .take(cfg.max_candidate_docs)
            .collect();
        by_kind[kind.index()] = Some(RankedOperator {
            kind,
            subquery_index,
            confidence: entry.confidence.clamp(0.0, 1.0),
            candidate_doc_ids,
        });
    }
    // Every requested kind must be present exactly once.
    let mut plan: Plan = Vec::with_capacity(ops.len());
    for &kind in ops {
        plan.push(by_kind[kind.index()].take()?);
    }
    // Descending confidence; ties keep the fixed kind order.
    plan.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .expect("confidences are finite")
            .then(a.kind.index().cmp(&b.kind.index()))
    });
    Some(plan)
}

/// Rank candidate operators for one sub-query. Malformed model output is
/// re-prompted once with format feedback, then surfaces as an error.
pub fn select_op(
    subquery: &SubQuery,
    ops: &[OperatorKind],
    repo: &DocumentRepository,
    cfg: &PlannerConfig,
    backend: &dyn ChatBackend,
) -> Result<Plan> {
    if ops.is_empty() {
        return Err(Error::Config("select_op needs at least one operator kind".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = ops.iter().find(|k| !seen.insert(**k)) {
        return Err(Error::Config(format!("operator kind {dup} requested twice")));
    }
    let text = subquery.effective_text();
    let reply = backend.chat(&plan_prompt(text, ops, repo))?;
    if let Some(plan) = parse_plan(&reply.text, subquery.index, ops, repo, cfg) {
        return Ok(plan);
    }
    let mut retry = plan_prompt(text, ops, repo);
    retry.user_prompt.push_str(
        "\nYour previous reply was not valid: output only the JSON array with every available operator exactly once.",
    );
    let reply2 = backend.chat(&retry)?;
    parse_plan(&reply2.text, subquery.index, ops, repo, cfg)
        .ok_or_else(|| Error::MalformedPlan(reply2.text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockChatBackend, ScriptRule};
    use crate::model::{Document, Payload};
    use std::collections::BTreeSet;

    fn rule(contains: &str, reply: &str) -> ScriptRule {
        ScriptRule { contains: contains.into(), reply: reply.into() }
    }

    fn repo() -> DocumentRepository {
        DocumentRepository::new(vec![
            Document::new("txt-1", "History", "a text doc", Payload::Text { body: "SECRET_PAYLOAD_BYTES".into() }).unwrap(),
            Document::new(
                "tbl-1",
                "Cities",
                "a table doc",
                Payload::Table { headers: vec!["City".into()], rows: vec![vec!["LA".into()]] },
            )
            .unwrap(),
            Document::new("img-1", "Flag", "an image doc", Payload::Image { path: "f.png".into() }).unwrap(),
        ])
        .unwrap()
    }

    fn subquery(text: &str) -> SubQuery {
        SubQuery::new(0, text, BTreeSet::new()).unwrap()
    }

    #[test]
    fn ranks_all_three_kinds_by_scripted_confidences() {
        let reply = r#"[
            {"operator": "text", "confidence": 0.9, "doc_ids": ["txt-1"]},
            {"operator": "table", "confidence": 0.6, "doc_ids": ["tbl-1"]},
            {"operator": "image", "confidence": 0.3, "doc_ids": ["img-1"]}
        ]"#;
        let mock = MockChatBackend::new(vec![rule("Sub-query to plan:", reply)], None);
        let plan = select_op(&subquery("when?"), &OperatorKind::ALL, &repo(), &PlannerConfig::default(), &mock).unwrap();
        let kinds: Vec<_> = plan.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, vec![OperatorKind::Text, OperatorKind::Table, OperatorKind::Image]);
        assert!(plan.windows(2).all(|w| w[0].confidence >= w[1].confidence));
        assert_eq!(plan[0].candidate_doc_ids, vec!["txt-1".to_string()]);
    }

    #[test]
    fn restricted_ops_force_single_entry() {
        let reply = r#"[{"operator": "table", "confidence": 0.4, "doc_ids": []}]"#;
        let mock = MockChatBackend::new(vec![rule("Sub-query to plan:", reply)], None);
        let plan = select_op(
            &subquery("anything at all"),
            &[OperatorKind::Table],
            &repo(),
            &PlannerConfig::default(),
            &mock,
        )
        .unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].kind, OperatorKind::Table);
    }

    #[test]
    fn prompt_contains_metadata_but_no_payload_bytes() {
        let reply = r#"[
            {"operator": "text", "confidence": 0.9, "doc_ids": []},
            {"operator": "table", "confidence": 0.5, "doc_ids": []},
            {"operator": "image", "confidence": 0.2, "doc_ids": []}
        ]"#;
        let mock = MockChatBackend::new(vec![rule("Sub-query to plan:", reply)], None);
        select_op(&subquery("q"), &OperatorKind::ALL, &repo(), &PlannerConfig::default(), &mock).unwrap();
        let prompt = mock.transcript()[0].request.match_text();
        assert!(prompt.contains("History"), "titles are allowed");
        assert!(prompt.contains("a table doc"), "captions are allowed");
        assert!(!prompt.contains("SECRET_PAYLOAD_BYTES"), "payload bytes are not");
        assert!(!prompt.contains("LA"), "table cells are not");
    }

    #[test]
    fn equal_confidences_tie_break_in_kind_order() {
        let reply = r#"[
            {"operator": "image", "confidence": 0.5, "doc_ids": []},
            {"operator": "table", "confidence": 0.5, "doc_ids": []},
            {"operator": "text", "confidence": 0.5, "doc_ids": []}
        ]"#;
        let mock = MockChatBackend::new(vec![rule("Sub-query to plan:", reply)], None);
        let plan = select_op(&subquery("q"), &OperatorKind::ALL, &repo(), &PlannerConfig::default(), &mock).unwrap();
        let kinds: Vec<_> = plan.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, vec![OperatorKind::Text, OperatorKind::Table, OperatorKind::Image]);
    }

    #[test]
    fn wrong_modality_and_unknown_doc_ids_filtered() {
        let reply = r#"[
            {"operator": "text", "confidence": 0.9, "doc_ids": ["tbl-1", "txt-1", "ghost"]},
            {"operator": "table", "confidence": 0.5, "doc_ids": []},
            {"operator": "image", "confidence": 0.2, "doc_ids": []}
        ]"#;
        let mock = MockChatBackend::new(vec![rule("Sub-query to plan:", reply)], None);
        let plan = select_op(&subquery("q"), &OperatorKind::ALL, &repo(), &PlannerConfig::default(), &mock).unwrap();
        assert_eq!(plan[0].candidate_doc_ids, vec!["txt-1".to_string()]);
    }

    #[test]
    fn malformed_reply_reprompts_once_then_errors() {
        let mock = MockChatBackend::new(
            vec![rule("previous reply was not valid", "still garbage"), rule("Sub-query to plan:", "garbage")],
            None,
        );
        let err = select_op(&subquery("q"), &OperatorKind::ALL, &repo(), &PlannerConfig::default(), &mock).unwrap_err();
        assert!(matches!(err, Error::MalformedPlan(_)));
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn malformed_then_fixed_reply_recovers() {
        let good = r#"[
            {"operator": "text", "confidence": 0.9, "doc_ids": []},
            {"operator": "table", "confidence": 0.5, "doc_ids": []},
            {"operator": "image", "confidence": 0.2, "doc_ids": []}
        ]"#;
        let mock = MockChatBackend::new(
            vec![rule("previous reply was not valid", good), rule("Sub-query to plan:", "garbage")],
            None,
        );
        let plan = select_op(&subquery("q"), &OperatorKind::ALL, &repo(), &PlannerConfig::default(), &mock).unwrap();
        assert_eq!(plan.len(), 3);
    }

    #[test]
    fn deterministic_for_identical_input() {
        let reply = r#"[
            {"operator": "text", "confidence": 0.7, "doc_ids": ["txt-1"]},
            {"operator": "table", "confidence": 0.5, "doc_ids": []},
            {"operator": "image", "confidence": 0.1, "doc_ids": []}
        ]"#;
        let mock = MockChatBackend::new(vec![rule("Sub-query to plan:", reply)], None);
        let r = repo();
        let a = select_op(&subquery("q"), &OperatorKind::ALL, &r, &PlannerConfig::default(), &mock).unwrap();
        let b = select_op(&subquery("q"), &OperatorKind::ALL, &r, &PlannerConfig::default(), &mock).unwrap();
        assert_eq!(a, b);
    }
}
