//! Pluggable backend wrappers. Every adapter exposes the same
//! `execute(kind, subquery, docs)` interface and declares which operator
//! kinds it supports; the registry preserves registration order, which
//! doubles as the routing tie-break order.

mod programmatic;
mod remote;
mod sem_agg;
mod single_model;
mod table_struct;

pub use programmatic::ProgrammaticPromptAdapter;
pub use remote::{RemoteAdapter, RemoteAdapterConfig};
pub use sem_agg::SemanticAggregationAdapter;
pub use single_model::SingleModelAdapter;
pub use table_struct::TableStructuredAdapter;

use crate::error::{Error, Result};
use crate::llm::{BackendError, ChatBackend, ChatRequest};
use crate::model::{Document, OperatorKind, OperatorResult, Payload};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

/// Which operator kinds an adapter implements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterCapability {
    pub adapter_id: String,
    pub supported: BTreeSet<OperatorKind>,
}

impl AdapterCapability {
    pub fn new(adapter_id: impl Into<String>, supported: impl IntoIterator<Item = OperatorKind>) -> Self {
        let supported: BTreeSet<_> = supported.into_iter().collect();
        assert!(!supported.is_empty(), "capability set must be non-empty");
        Self { adapter_id: adapter_id.into(), supported }
    }

    pub fn all_kinds(adapter_id: impl Into<String>) -> Self {
        Self::new(adapter_id, OperatorKind::ALL)
    }

    pub fn supports(&self, kind: OperatorKind) -> bool {
        self.supported.contains(&kind)
    }
}

pub trait Adapter: Send + Sync {
    fn id(&self) -> &str;
    fn capability(&self) -> AdapterCapability;

    /// Run one operator over modality-matched documents. Callers go through
    /// [`Adapter::execute`], which enforces capability and modality
    /// preconditions before any backend call.
    fn run(
        &self,
        kind: OperatorKind,
        subquery: &str,
        docs: &[&Document],
        backend: &dyn ChatBackend,
    ) -> Result<String>;

    fn execute(
        &self,
        kind: OperatorKind,
        subquery: &str,
        docs: &[&Document],
        backend: &dyn ChatBackend,
    ) -> Result<OperatorResult> {
        if !self.capability().supports(kind) {
            return Err(Error::Adapter {
                adapter: self.id().into(),
                message: format!("does not support {kind}"),
            });
        }
        if let Some(doc) = docs.iter().find(|d| d.modality() != kind) {
            return Err(Error::Adapter {
                adapter: self.id().into(),
                message: format!("document {} is {}, expected {}", doc.id, doc.modality(), kind),
            });
        }
        let start = Instant::now();
        match self.run(kind, subquery, docs, backend) {
            Ok(answer) => {
                let valid = crate::exec::rule_validity(&answer);
                Ok(OperatorResult::new(
                    answer.clone(),
                    valid,
                    answer,
                    self.id().into(),
                    start.elapsed().as_secs_f64(),
                ))
            }
            // Backend failures become invalid results so the executor's
            // fallback chain proceeds; configuration errors stay fatal.
            Err(Error::Backend(e)) if !matches!(e, BackendError::Config(_)) => {
                Ok(OperatorResult::new(
                    String::new(),
                    false,
                    format!("backend error: {e}"),
                    self.id().into(),
                    start.elapsed().as_secs_f64(),
                ))
            }
            Err(e) => Err(e),
        }
    }
}

/// Ordered adapter registry; ids unique, iteration order = registration
/// order.
#[derive(Default, Clone)]
pub struct AdapterRegistry {
    adapters: Vec<Arc<dyn Adapter>>,
}

impl AdapterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, adapter: Arc<dyn Adapter>) -> Result<()> {
        if self.adapters.iter().any(|a| a.id() == adapter.id()) {
            return Err(Error::Config(format!("duplicate adapter id: {}", adapter.id())));
        }
        self.adapters.push(adapter);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Arc<dyn Adapter>> {
        self.adapters.iter().find(|a| a.id() == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Adapter>> {
        self.adapters.iter()
    }

    pub fn ids(&self) -> Vec<String> {
        self.adapters.iter().map(|a| a.id().to_string()).collect()
    }

    /// Adapters supporting `kind`, in registration order.
    pub fn capable(&self, kind: OperatorKind) -> Vec<&Arc<dyn Adapter>> {
        self.adapters.iter().filter(|a| a.capability().supports(kind)).collect()
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }

    /// The default lineup: semantic aggregation, programmatic prompting,
    /// and single-model over all three kinds, plus the structure-aware
    /// table adapter.
    pub fn standard() -> Self {
        let mut reg = Self::new();
        reg.register(Arc::new(SemanticAggregationAdapter::default())).expect("fresh registry");
        reg.register(Arc::new(ProgrammaticPromptAdapter::default())).expect("fresh registry");
        reg.register(Arc::new(SingleModelAdapter::default())).expect("fresh registry");
        reg.register(Arc::new(TableStructuredAdapter::default())).expect("fresh registry");
        reg
    }
}

/// Render one document's content for an adapter prompt.
pub(crate) fn render_evidence(doc: &Document) -> String {
    match &doc.payload {
        Payload::Text { body } => format!("[text {}] {}\n{}", doc.id, doc.title, body),
        Payload::Table { headers, rows } => {
            let mut out = format!("[table {}] {}\n{}", doc.id, doc.title, headers.join(" | "));
            for row in rows {
                out.push('\n');
                out.push_str(&row.join(" | "));
            }
            out
        }
        Payload::Image { path } => {
            format!("[image {}] {} ({})\ncaption: {}", doc.id, doc.title, path, doc.caption)
        }
    }
}

pub(crate) fn render_all(docs: &[&Document]) -> String {
    docs.iter().map(|d| render_evidence(d)).collect::<Vec<_>>().join("\n\n")
}

pub(crate) fn chat_text(backend: &dyn ChatBackend, req: &ChatRequest) -> Result<String> {
    Ok(backend.chat(req)?.text)
}
