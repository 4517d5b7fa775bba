//! Append-only execution trace store: one JSON object per line, either
//! file-backed or in-memory. Appends funnel through a single writer;
//! file scans take the writer lock so they never observe a partial line.

use crate::error::{Error, Result};
use crate::model::{ExecutionTrace, OperatorKind};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

#[derive(Debug, Default, Clone)]
pub struct TraceFilter {
    pub operator_kind: Option<OperatorKind>,
    pub adapter_id: Option<String>,
}

impl TraceFilter {
    fn matches(&self, t: &ExecutionTrace) -> bool {
        self.operator_kind.is_none_or(|k| t.operator_kind == k)
            && self.adapter_id.as_deref().is_none_or(|a| t.adapter_id == a)
    }
}

#[derive(Debug)]
pub struct TraceStore {
    inner: Inner,
}

#[derive(Debug)]
enum Inner {
    Memory(Mutex<Vec<ExecutionTrace>>),
    File {
        path: PathBuf,
        writer: Mutex<BufWriter<File>>,
    },
}

impl TraceStore {
    /// Volatile store for runs with no configured trace log.
    pub fn memory() -> Self {
        Self {
            inner: Inner::Memory(Mutex::new(Vec::new())),
        }
    }

    /// Open (creating if needed) an append-only line-delimited log.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            inner: Inner::File {
                path,
                writer: Mutex::new(BufWriter::new(file)),
            },
        })
    }

    pub fn append(&self, trace: &ExecutionTrace) -> Result<()> {
        trace.validate()?;
        match &self.inner {
            Inner::Memory(v) => {
                v.lock().expect("trace store poisoned").push(trace.clone());
            }
            Inner::File { writer, .. } => {
                let mut w = writer.lock().expect("trace store poisoned");
                serde_json::to_writer(&mut *w, trace)?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
        }
        Ok(())
    }

    pub fn scan(&self, filter: &TraceFilter) -> Result<Vec<ExecutionTrace>> {
        match &self.inner {
            Inner::Memory(v) => {
                let v = v.lock().expect("trace store poisoned");
                Ok(v.iter().filter(|t| filter.matches(t)).cloned().collect())
            }
            Inner::File { path, writer } => {
                let _write_guard = writer.lock().expect("trace store poisoned");
                read_trace_log_filtered(path, filter)
            }
        }
    }

    pub fn scan_all(&self) -> Result<Vec<ExecutionTrace>> {
        self.scan(&TraceFilter::default())
    }
}

/// Read a trace log file directly (offline commands that only consume a log).
pub fn read_trace_log(path: impl AsRef<Path>) -> Result<Vec<ExecutionTrace>> {
    read_trace_log_filtered(path.as_ref(), &TraceFilter::default())
}

fn read_trace_log_filtered(path: &Path, filter: &TraceFilter) -> Result<Vec<ExecutionTrace>> {
    let file = File::open(path)
        .map_err(|e| Error::Trace(format!("cannot open trace log {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (no, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trace: ExecutionTrace = serde_json::from_str(&line)
            .map_err(|e| Error::Trace(format!("{}:{}: {e}", path.display(), no + 1)))?;
        trace.validate()?;
        if filter.matches(&trace) {
            out.push(trace);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MetricScores;

    fn trace(kind: OperatorKind, adapter: &str) -> ExecutionTrace {
        ExecutionTrace {
            query_id: "q".into(),
            subquery_text: "s".into(),
            operator_kind: kind,
            adapter_id: adapter.into(),
            answer: "a".into(),
            scores: MetricScores { f1: 0.5, hit: 1.0, coverage: 0.5, sem_hit: 0.0 },
            elapsed: 0.01,
        }
    }

    #[test]
    fn append_then_scan_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let store = TraceStore::open(dir.path().join("log.jsonl")).unwrap();
        let t = trace(OperatorKind::Text, "a1");
        store.append(&t).unwrap();
        let got = store.scan_all().unwrap();
        assert_eq!(got, vec![t]);
    }

    #[test]
    fn scan_filters_by_operator_kind() {
        let store = TraceStore::memory();
        store.append(&trace(OperatorKind::Text, "a1")).unwrap();
        store.append(&trace(OperatorKind::Table, "a1")).unwrap();
        store.append(&trace(OperatorKind::Table, "a2")).unwrap();
        let got = store
            .scan(&TraceFilter { operator_kind: Some(OperatorKind::Table), adapter_id: None })
            .unwrap();
        assert_eq!(got.len(), 2);
        assert!(got.iter().all(|t| t.operator_kind == OperatorKind::Table));
        let got = store
            .scan(&TraceFilter {
                operator_kind: Some(OperatorKind::Table),
                adapter_id: Some("a2".into()),
            })
            .unwrap();
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn out_of_range_scores_rejected_on_append() {
        let store = TraceStore::memory();
        let mut t = trace(OperatorKind::Text, "a1");
        t.scores.f1 = 1.2;
        assert!(store.append(&t).is_err());
        assert!(store.scan_all().unwrap().is_empty());
    }

    #[test]
    fn insertion_order_preserved_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let store = TraceStore::open(&path).unwrap();
            store.append(&trace(OperatorKind::Text, "first")).unwrap();
        }
        {
            let store = TraceStore::open(&path).unwrap();
            store.append(&trace(OperatorKind::Text, "second")).unwrap();
            let got = store.scan_all().unwrap();
            assert_eq!(got[0].adapter_id, "first");
            assert_eq!(got[1].adapter_id, "second");
        }
    }
}
