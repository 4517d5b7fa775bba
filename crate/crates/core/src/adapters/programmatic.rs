//! Programmatic-prompting adapter: a fixed two-step template. Step one
//! extracts entities/constraints/reasoning into constrained fields, step
//! two turns those notes into the final answer. Always exactly two calls.

use super::{chat_text, render_all, Adapter, AdapterCapability};
use crate::error::Result;
use crate::llm::{ChatBackend, ChatRequest};
use crate::model::{Document, OperatorKind};

#[derive(Debug, Clone, Default)]
pub struct ProgrammaticPromptAdapter;

impl Adapter for ProgrammaticPromptAdapter {
    fn id(&self) -> &str {
        "prog-prompt"
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
        let system = "You execute a fixed two-step analysis program.";
        let evidence = render_all(docs);
        let step1 = ChatRequest::new(
            system,
            format!(
                "Reasoning step for question: {subquery}\nEvidence:\n{evidence}\n\
                 Fill exactly these fields:\nENTITIES: <key entities>\nCONSTRAINTS: <conditions to satisfy>\n\
                 REASONING: <how the evidence answers the question>"
            ),
        );
        let notes = chat_text(backend, &step1)?;
        let step2 = ChatRequest::new(
            system,
            format!(
                "Extract the final answer for: {subquery}\nNotes:\n{notes}\n\
                 Reply with only the answer, no explanation."
            ),
        );
        chat_text(backend, &step2)
    }
}
