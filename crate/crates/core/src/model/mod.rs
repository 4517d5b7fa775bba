//! Shared domain types: queries, sub-queries, dependency graphs, documents,
//! operator results, and execution traces.

mod repository;
mod trace;

pub use repository::DocumentRepository;
pub use trace::{read_trace_log, TraceFilter, TraceStore};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// A natural-language query submitted to the pipeline. `gold_answers` is
/// only populated by the evaluation harness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<Vec<String>>,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Invariant("query text is empty".into()));
        }
        Ok(Self {
            id: id.into(),
            text,
            gold_answers: None,
        })
    }

    pub fn with_golds(mut self, golds: Vec<String>) -> Self {
        self.gold_answers = Some(golds);
        self
    }
}

/// The three data operator kinds. Document modalities use the same space,
/// so this type doubles as the modality tag ([`Modality`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Text,
    Table,
    Image,
}

/// Modality of a document; identical value space to [`OperatorKind`]
/// (each operator analyzes documents of exactly its own modality).
pub type Modality = OperatorKind;

impl OperatorKind {
    /// All three kinds in the fixed tie-break order (Text, Table, Image).
    pub const ALL: [OperatorKind; 3] = [OperatorKind::Text, OperatorKind::Table, OperatorKind::Image];

    /// Stable index used for tie-breaking and one-hot encodings.
    pub fn index(self) -> usize {
        match self {
            OperatorKind::Text => 0,
            OperatorKind::Table => 1,
            OperatorKind::Image => 2,
        }
    }

    /// Short lowercase name as used in prompts, config files, and traces.
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Text => "text",
            OperatorKind::Table => "table",
            OperatorKind::Image => "image",
        }
    }

    pub fn parse(s: &str) -> Option<OperatorKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" | "textanalytics" => Some(OperatorKind::Text),
            "table" | "tableanalytics" => Some(OperatorKind::Table),
            "image" | "imageanalytics" => Some(OperatorKind::Image),
            _ => None,
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OperatorKind::Text => "TextAnalytics",
            OperatorKind::Table => "TableAnalytics",
            OperatorKind::Image => "ImageAnalytics",
        };
        f.write_str(s)
    }
}

/// One sub-query of a decomposed request. Dependencies may only point at
/// earlier sub-queries (the decomposer emits basic-to-advanced order).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuery {
    pub index: usize,
    pub text: String,
    #[serde(default)]
    pub depends_on: BTreeSet<usize>,
    /// Modality the decomposer tagged this sub-query with; absent for
    /// undecomposed single-node graphs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality_hint: Option<OperatorKind>,
    /// Set by the executor after dependency-based refinement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_text: Option<String>,
}

impl SubQuery {
    pub fn new(index: usize, text: impl Into<String>, depends_on: BTreeSet<usize>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Invariant(format!("sub-query {index} text is empty")));
        }
        if let Some(&d) = depends_on.iter().find(|&&d| d >= index) {
            return Err(Error::Dependency(format!(
                "sub-query {index} depends on {d}, which is not an earlier sub-query"
            )));
        }
        Ok(Self {
            index,
            text,
            depends_on,
            modality_hint: None,
            refined_text: None,
        })
    }

    /// Text the executor should run: the refined form when present.
    pub fn effective_text(&self) -> &str {
        self.refined_text.as_deref().unwrap_or(&self.text)
    }

    pub fn set_refined(&mut self, refined: String) -> Result<()> {
        if refined.trim().is_empty() {
            return Err(Error::Invariant(format!(
                "refined text for sub-query {} is empty",
                self.index
            )));
        }
        self.refined_text = Some(refined);
        Ok(())
    }
}

/// DAG of sub-queries. Edges `(from, to)` mean `to` depends on `from`; all
/// edges point forward (from < to), which makes the graph acyclic by
/// construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    nodes: Vec<SubQuery>,
    edges: Vec<(usize, usize)>,
}

impl DependencyGraph {
    /// Build a graph from ordered sub-queries; edges derive from each node's
    /// `depends_on`. Rejects misnumbered nodes and non-forward dependencies.
    pub fn new(nodes: Vec<SubQuery>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Invariant("dependency graph has no nodes".into()));
        }
        let mut edges = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            if node.index != i {
                return Err(Error::Invariant(format!(
                    "sub-query at position {i} carries index {}",
                    node.index
                )));
            }
            for &dep in &node.depends_on {
                if dep >= i {
                    return Err(Error::Dependency(format!(
                        "sub-query {i} depends on {dep}, which is not an earlier sub-query"
                    )));
                }
                edges.push((dep, i));
            }
        }
        Ok(Self { nodes, edges })
    }

    /// The trivial one-node graph holding the original query text.
    pub fn single(text: impl Into<String>) -> Result<Self> {
        Self::new(vec![SubQuery::new(0, text, BTreeSet::new())?])
    }

    pub fn nodes(&self) -> &[SubQuery] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [SubQuery] {
        &mut self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Payload variants per modality. Table rows are rectangular; image
/// payloads are file references (callers that cannot consume pixels work
/// from the document caption instead).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Text { body: String },
    Table { headers: Vec<String>, rows: Vec<Vec<String>> },
    Image { path: String },
}

impl Payload {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Text { .. } => OperatorKind::Text,
            Payload::Table { .. } => OperatorKind::Table,
            Payload::Image { .. } => OperatorKind::Image,
        }
    }
}

/// A document in the multimodal repository. Planning reads only `title`
/// and `caption`; adapters read the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub caption: String,
    pub payload: Payload,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        caption: impl Into<String>,
        payload: Payload,
    ) -> Result<Self> {
        let doc = Self {
            id: id.into(),
            title: title.into(),
            caption: caption.into(),
            payload,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn modality(&self) -> Modality {
        self.payload.modality()
    }

    fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::Repository("document id is empty".into()));
        }
        if let Payload::Table { headers, rows } = &self.payload {
            for (r, row) in rows.iter().enumerate() {
                if row.len() != headers.len() {
                    return Err(Error::Repository(format!(
                        "document {}: row {r} has {} cells, expected {}",
                        self.id,
                        row.len(),
                        headers.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

// Wire format keeps an explicit "modality" field next to the payload; the
// in-memory type derives it from the payload variant, so (de)serialization
// goes through a raw mirror that cross-checks the two.
#[derive(Serialize, Deserialize)]
struct DocumentRaw {
    id: String,
    modality: OperatorKind,
    title: String,
    caption: String,
    payload: serde_json::Value,
}

impl Serialize for Document {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = DocumentRaw {
            id: self.id.clone(),
            modality: self.modality(),
            title: self.title.clone(),
            caption: self.caption.clone(),
            payload: serde_json::to_value(&self.payload).map_err(serde::ser::Error::custom)?,
        };
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Document {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = DocumentRaw::deserialize(deserializer)?;
        let payload: Payload = match raw.modality {
            OperatorKind::Text => serde_json::from_value::<TextPayload>(raw.payload)
                .map(|p| Payload::Text { body: p.body })
                .map_err(D::Error::custom)?,
            OperatorKind::Table => serde_json::from_value::<TablePayload>(raw.payload)
                .map(|p| Payload::Table { headers: p.headers, rows: p.rows })
                .map_err(D::Error::custom)?,
            OperatorKind::Image => serde_json::from_value::<ImagePayload>(raw.payload)
                .map(|p| Payload::Image { path: p.path })
                .map_err(D::Error::custom)?,
        };
        Document::new(raw.id, raw.title, raw.caption, payload).map_err(D::Error::custom)
    }
}

#[derive(Deserialize)]
struct TextPayload {
    body: String,
}
#[derive(Deserialize)]
struct TablePayload {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}
#[derive(Deserialize)]
struct ImagePayload {
    path: String,
}

/// Result of one adapter execution. `valid` is forced to false whenever the
/// answer normalizes to nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorResult {
    pub answer: String,
    pub valid: bool,
    /// Backend-specific raw text (last model reply or error tag).
    pub raw: String,
    pub adapter_id: String,
    pub elapsed: f64,
}

impl OperatorResult {
    pub fn new(answer: String, valid: bool, raw: String, adapter_id: String, elapsed: f64) -> Self {
        let valid = valid && !crate::eval::normalize_tokens(&answer).is_empty();
        Self {
            answer,
            valid,
            raw,
            adapter_id,
            elapsed,
        }
    }
}

/// The four metric scores attached to every execution trace, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricScores {
    pub f1: f64,
    pub hit: f64,
    pub coverage: f64,
    pub sem_hit: f64,
}

impl MetricScores {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("f1", self.f1),
            ("hit", self.hit),
            ("coverage", self.coverage),
            ("sem_hit", self.sem_hit),
        ] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Invariant(format!("metric {name}={v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One per-(sub-query, operator, adapter) execution outcome; the unit of the
/// trace log and the raw material for router training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub query_id: String,
    pub subquery_text: String,
    pub operator_kind: OperatorKind,
    pub adapter_id: String,
    pub answer: String,
    pub scores: MetricScores,
    pub elapsed: f64,
}

impl ExecutionTrace {
    pub fn validate(&self) -> Result<()> {
        self.scores.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_rejects_blank_text() {
        assert!(Query::new("q1", "   ").is_err());
        assert!(Query::new("q1", "what?").is_ok());
    }

    #[test]
    fn subquery_rejects_forward_and_self_deps() {
        let deps: BTreeSet<usize> = [2].into_iter().collect();
        assert!(SubQuery::new(2, "x", deps).is_err());
        let deps: BTreeSet<usize> = [3].into_iter().collect();
        assert!(SubQuery::new(2, "x", deps).is_err());
        let deps: BTreeSet<usize> = [0, 1].into_iter().collect();
        assert!(SubQuery::new(2, "x", deps).is_ok());
    }

    #[test]
    fn graph_edges_follow_depends_on() {
        let nodes = vec![
            SubQuery::new(0, "a", BTreeSet::new()).unwrap(),
            SubQuery::new(1, "b", BTreeSet::new()).unwrap(),
            SubQuery::new(2, "c", [0, 1].into_iter().collect()).unwrap(),
        ];
        let g = DependencyGraph::new(nodes).unwrap();
        assert_eq!(g.edges(), &[(0, 2), (1, 2)]);
    }

    #[test]
    fn graph_rejects_misnumbered_nodes() {
        let nodes = vec![SubQuery::new(1, "a", BTreeSet::new()).unwrap()];
        assert!(DependencyGraph::new(nodes).is_err());
    }

    #[test]
    fn document_rejects_ragged_table() {
        let payload = Payload::Table {
            headers: vec!["a".into(), "b".into()],
            rows: vec![vec!["1".into()]],
        };
        assert!(Document::new("t1", "T", "c", payload).is_err());
    }

    #[test]
    fn document_roundtrips_with_modality_field() {
        let doc = Document::new(
            "img1",
            "Flag",
            "A flag.",
            Payload::Image { path: "img/flag.png".into() },
        )
        .unwrap();
        let json = serde_json::to_string(&doc).unwrap();
        assert!(json.contains("\"modality\":\"image\""));
        let back: Document = serde_json::from_str(&json).unwrap();
        assert_eq!(doc, back);
    }

    #[test]
    fn document_rejects_modality_payload_mismatch() {
        let json = r#"{"id":"x","modality":"table","title":"t","caption":"c","payload":{"body":"hi"}}"#;
        assert!(serde_json::from_str::<Document>(json).is_err());
    }

    #[test]
    fn operator_result_invalidates_empty_answer() {
        let r = OperatorResult::new("  .. ".into(), true, "raw".into(), "a".into(), 0.0);
        assert!(!r.valid);
        let r = OperatorResult::new("2006".into(), true, "raw".into(), "a".into(), 0.0);
        assert!(r.valid);
    }

    #[test]
    fn trace_rejects_out_of_range_scores() {
        let t = ExecutionTrace {
            query_id: "q".into(),
            subquery_text: "s".into(),
            operator_kind: OperatorKind::Table,
            adapter_id: "a".into(),
            answer: "x".into(),
            scores: MetricScores { f1: 1.2, hit: 0.0, coverage: 0.0, sem_hit: 0.0 },
            elapsed: 0.1,
        };
        assert!(t.validate().is_err());
    }
}
