//! Single-model adapter: one end-to-end prompt packaging all evidence of
//! the modality. For image operators it attaches the image payloads when
//! the backend can consume pixels, and substitutes captions otherwise.

use super::{chat_text, render_all, Adapter, AdapterCapability};
use crate::error::Result;
use crate::llm::{ChatBackend, ChatRequest};
use crate::model::{Document, OperatorKind, Payload};

#[derive(Debug, Clone, Default)]
pub struct SingleModelAdapter;

impl Adapter for SingleModelAdapter {
    fn id(&self) -> &str {
        "single-model"
    }

    fn capability(&self) -> AdapterCapability {
        AdapterCapability::all_kinds(self.id())
    }

    fn run(
        &self,
        kind: OperatorKind,
        subquery: &str,
        docs: &[&Document],
        backend: &dyn ChatBackend,
    ) -> Result<String> {
        let system = "You are a multi-modal analyst answering from packaged evidence.";
        let mut req = if kind == OperatorKind::Image && backend.supports_images() {
            let listed = docs
                .iter()
                .map(|d| format!("[image {}] {}", d.id, d.title))
                .collect::<Vec<_>>()
                .join("\n");
            let paths: Vec<String> = docs
                .iter()
                .filter_map(|d| match &d.payload {
                    Payload::Image { path } => Some(path.clone()),
                    _ => None,
                })
                .collect();
            ChatRequest::new(
                system,
                format!("Question: {subquery}\nEvidence (image):\n{listed}\nAnswer concisely from the attached images."),
            )
            .with_images(paths)
        } else {
            ChatRequest::new(
                system,
                format!(
                    "Question: {subquery}\nEvidence ({}):\n{}\nAnswer concisely using only the evidence.",
                    kind.name(),
                    render_all(docs)
                ),
            )
        };
        req.max_tokens = 512;
        chat_text(backend, &req)
    }
}
