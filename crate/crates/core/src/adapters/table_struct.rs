//! Structure-aware table adapter (TableAnalytics only). Three phases per
//! table: schema grounding selects relevant columns from the headers, row
//! filtering picks candidate rows over the reduced schema (chunked), and
//! answer extraction runs over the surviving candidate records. Trivial
//! tables collapse the first two phases.

use super::{chat_text, Adapter, AdapterCapability};
use crate::error::Result;
use crate::jsonx;
use crate::llm::{ChatBackend, ChatRequest};
use crate::model::{Document, OperatorKind, Payload};

pub const DEFAULT_ROW_CHUNK: usize = 20;

const SYSTEM: &str = "You analyze tables through schema grounding, row filtering, and answer extraction.";

#[derive(Debug, Clone)]
pub struct TableStructuredAdapter {
    row_chunk: usize,
}

impl Default for TableStructuredAdapter {
    fn default() -> Self {
        Self { row_chunk: DEFAULT_ROW_CHUNK }
    }
}

impl TableStructuredAdapter {
    pub fn new(row_chunk: usize) -> Self {
        Self { row_chunk: row_chunk.max(1) }
    }

    /// Phase 1: pick relevant columns from the header list. Unknown names
    /// are dropped; an empty or unusable selection falls back to the full
    /// schema. Single-column tables skip the prompt.
    fn ground_schema(
        &self,
        subquery: &str,
        title: &str,
        headers: &[String],
        backend: &dyn ChatBackend,
    ) -> Result<Vec<usize>> {
        let all: Vec<usize> = (0..headers.len()).collect();
        if headers.len() <= 1 {
            return Ok(all);
        }
        let req = ChatRequest::new(
            SYSTEM,
            format!(
                "Select the relevant column names for the question from this table schema.\n\
                 Table: {title}\nColumns: {}\nQuestion: {subquery}\n\
                 Reply with a JSON array of column names.",
                headers.join(", ")
            ),
        );
        let reply = chat_text(backend, &req)?;
        let selected: Vec<usize> = jsonx::extract_array(&reply)
            .and_then(|v| v.as_array().cloned())
            .map(|names| {
                names
                    .iter()
                    .filter_map(|n| n.as_str())
                    .filter_map(|n| headers.iter().position(|h| h.eq_ignore_ascii_case(n.trim())))
                    .collect()
            })
            .unwrap_or_default();
        if selected.is_empty() {
            log::debug!("schema grounding selected no known columns; using full schema");
            return Ok(all);
        }
        Ok(selected)
    }

    /// Phase 2: candidate row indices over the projected rows, chunked.
    /// Single-row tables skip the prompt.
    fn filter_rows(
        &self,
        subquery: &str,
        headers: &[String],
        rows: &[Vec<String>],
        columns: &[usize],
        backend: &dyn ChatBackend,
    ) -> Result<Vec<usize>> {
        if rows.len() <= 1 {
            return Ok((0..rows.len()).collect());
        }
        let header_line = project(headers, columns).join(" | ");
        let mut candidates = Vec::new();
        for (chunk_no, chunk) in rows.chunks(self.row_chunk).enumerate() {
            let offset = chunk_no * self.row_chunk;
            let listing = chunk
                .iter()
                .enumerate()
                .map(|(i, row)| format!("{}: {}", offset + i, project(row, columns).join(" | ")))
                .collect::<Vec<_>>()
                .join("\n");
            let req = ChatRequest::new(
                SYSTEM,
                format!(
                    "Select the indices of rows that are relevant to the question.\n\
                     Columns: {header_line}\nRows:\n{listing}\nQuestion: {subquery}\n\
                     Reply with a JSON array of row indices."
                ),
            );
            let reply = chat_text(backend, &req)?;
            if let Some(arr) = jsonx::extract_array(&reply).and_then(|v| v.as_array().cloned()) {
                for idx in arr.iter().filter_map(|v| v.as_u64()) {
                    let idx = idx as usize;
                    if idx < rows.len() && !candidates.contains(&idx) {
                        candidates.push(idx);
                    }
                }
            }
        }
        candidates.sort_unstable();
        Ok(candidates)
    }
}

fn project(row: &[String], columns: &[usize]) -> Vec<String> {
    columns.iter().map(|&c| row[c].clone()).collect()
}

impl Adapter for TableStructuredAdapter {
    fn id(&self) -> &str {
        "table-struct"
    }

    fn capability(&self) -> AdapterCapability {
        AdapterCapability::new(self.id(), [OperatorKind::Table])
    }

    fn run(
        &self,
        _kind: OperatorKind,
        subquery: &str,
        docs: &[&Document],
        backend: &dyn ChatBackend,
    ) -> Result<String> {
        let mut candidate_blocks = Vec::new();
        for doc in docs {
            let Payload::Table { headers, rows } = &doc.payload else {
                continue;
            };
            let columns = self.ground_schema(subquery, &doc.title, headers, backend)?;
            let picked = self.filter_rows(subquery, headers, rows, &columns, backend)?;
            if picked.is_empty() {
                continue;
            }
            let mut block = format!("Table {}: {}", doc.id, project(headers, &columns).join(" | "));
            for idx in picked {
                block.push('\n');
                block.push_str(&project(&rows[idx], &columns).join(" | "));
            }
            candidate_blocks.push(block);
        }
        if candidate_blocks.is_empty() {
            return Ok("no evidence".into());
        }
        let req = ChatRequest::new(
            SYSTEM,
            format!(
                "Answer from the candidate rows: {subquery}\n{}\nAnswer concisely using only these rows.",
                candidate_blocks.join("\n\n")
            ),
        );
        chat_text(backend, &req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockChatBackend, ScriptRule};

    fn rule(contains: &str, reply: &str) -> ScriptRule {
        ScriptRule { contains: contains.into(), reply: reply.into() }
    }

    fn cities_table() -> Document {
        Document::new(
            "tbl-cities",
            "Sun Belt cities",
            "Major cities in the Sun Belt by state.",
            Payload::Table {
                headers: vec!["City".into(), "State".into(), "Population".into()],
                rows: vec![
                    vec!["Los Angeles".into(), "California".into(), "3.8M".into()],
                    vec!["San Diego".into(), "California".into(), "1.4M".into()],
                    vec!["Phoenix".into(), "Arizona".into(), "1.6M".into()],
                ],
            },
        )
        .unwrap()
    }

    #[test]
    fn three_phase_pipeline_projects_and_answers() {
        let adapter = TableStructuredAdapter::default();
        let mock = MockChatBackend::new(
            vec![
                rule("Select the relevant column names", r#"["City", "State"]"#),
                rule("Select the indices of rows", "[0, 1]"),
                rule("Answer from the candidate rows:", "Los Angeles, San Diego"),
            ],
            None,
        );
        let doc = cities_table();
        let res = adapter.execute(OperatorKind::Table, "Which California cities?", &[&doc], &mock).unwrap();
        assert_eq!(res.answer, "Los Angeles, San Diego");
        assert_eq!(mock.call_count(), 3);
        // The answer prompt carries only projected candidate rows.
        let answer_prompt = &mock.transcript()[2].request.user_prompt;
        assert!(answer_prompt.contains("Los Angeles | California"));
        assert!(!answer_prompt.contains("Phoenix"));
        assert!(!answer_prompt.contains("3.8M"), "population column was projected away");
    }

    #[test]
    fn unknown_column_selection_falls_back_to_full_schema() {
        let adapter = TableStructuredAdapter::default();
        let mock = MockChatBackend::new(
            vec![
                rule("Select the relevant column names", r#"["Nonexistent"]"#),
                rule("Select the indices of rows", "[2]"),
                rule("Answer from the candidate rows:", "Phoenix"),
            ],
            None,
        );
        let doc = cities_table();
        let res = adapter.execute(OperatorKind::Table, "Which Arizona city?", &[&doc], &mock).unwrap();
        assert_eq!(res.answer, "Phoenix");
        let answer_prompt = &mock.transcript()[2].request.user_prompt;
        assert!(answer_prompt.contains("Phoenix | Arizona | 1.6M"), "full schema retained");
    }

    #[test]
    fn empty_candidates_yield_invalid_result() {
        let adapter = TableStructuredAdapter::default();
        let mock = MockChatBackend::new(
            vec![
                rule("Select the relevant column names", r#"["City"]"#),
                rule("Select the indices of rows", "[]"),
            ],
            None,
        );
        let doc = cities_table();
        let res = adapter.execute(OperatorKind::Table, "anything?", &[&doc], &mock).unwrap();
        assert!(!res.valid);
        assert_eq!(mock.call_count(), 2, "no answer prompt when no candidates");
    }

    #[test]
    fn one_by_one_table_collapses_to_single_answer_prompt() {
        let adapter = TableStructuredAdapter::default();
        let mock = MockChatBackend::new(
            vec![rule("Answer from the candidate rows:", "42")],
            None,
        );
        let doc = Document::new(
            "t",
            "Tiny",
            "one cell",
            Payload::Table { headers: vec!["Value".into()], rows: vec![vec!["42".into()]] },
        )
        .unwrap();
        let res = adapter.execute(OperatorKind::Table, "what value?", &[&doc], &mock).unwrap();
        assert_eq!(res.answer, "42");
        assert_eq!(mock.call_count(), 1);
    }

    #[test]
    fn rows_chunked_by_configured_size() {
        let adapter = TableStructuredAdapter::new(2);
        let mock = MockChatBackend::new(
            vec![
                rule("Select the relevant column names", r#"["City"]"#),
                rule("Select the indices of rows", "[0]"),
                rule("Answer from the candidate rows:", "x"),
            ],
            None,
        );
        let doc = Document::new(
            "t",
            "T",
            "c",
            Payload::Table {
                headers: vec!["City".into(), "State".into()],
                rows: (0..5).map(|i| vec![format!("c{i}"), "s".into()]).collect(),
            },
        )
        .unwrap();
        adapter.execute(OperatorKind::Table, "q", &[&doc], &mock).unwrap();
        // 1 grounding + ceil(5/2)=3 filter chunks + 1 answer.
        assert_eq!(mock.call_count(), 5);
        assert_eq!(mock.calls_containing("Select the indices of rows"), 3);
    }
}
