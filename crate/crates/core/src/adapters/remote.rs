//! Generic remote-backend adapter: the extension point for wiring real
//! external query systems in over HTTP. Speaks the same execute contract,
//! POSTing `{kind, subquery, documents}` and reading `{answer}`.

use super::{Adapter, AdapterCapability};
use crate::error::{Error, Result};
use crate::llm::ChatBackend;
use crate::model::{Document, OperatorKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct RemoteAdapterConfig {
    pub id: String,
    pub endpoint: String,
    pub supported: BTreeSet<OperatorKind>,
    pub timeout: Duration,
}

#[derive(Serialize)]
struct ExecuteRequest<'a> {
    kind: OperatorKind,
    subquery: &'a str,
    documents: Vec<&'a Document>,
}

#[derive(Deserialize)]
struct ExecuteResponse {
    answer: String,
}

pub struct RemoteAdapter {
    cfg: RemoteAdapterConfig,
    client: reqwest::blocking::Client,
}

impl RemoteAdapter {
    pub fn new(cfg: RemoteAdapterConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| Error::Config(format!("remote adapter {}: {e}", cfg.id)))?;
        Ok(Self { cfg, client })
    }

    /// Request body for one execute call; split out so the wire shape is
    /// testable without a live endpoint.
    pub fn request_body(kind: OperatorKind, subquery: &str, docs: &[&Document]) -> serde_json::Value {
        serde_json::to_value(ExecuteRequest { kind, subquery, documents: docs.to_vec() })
            .expect("execute request serializes")
    }
}

impl Adapter for RemoteAdapter {
    fn id(&self) -> &str {
        &self.cfg.id
    }

    fn capability(&self) -> AdapterCapability {
        AdapterCapability::new(self.cfg.id.clone(), self.cfg.supported.iter().copied())
    }

    fn run(
        &self,
        kind: OperatorKind,
        subquery: &str,
        docs: &[&Document],
        _backend: &dyn ChatBackend,
    ) -> Result<String> {
        let url = format!("{}/execute", self.cfg.endpoint.trim_end_matches('/'));
        let body = Self::request_body(kind, subquery, docs);
        let resp = self
            .client
            .post(url)
            .json(&body)
            .send()
            .map_err(|e| crate::llm::BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| crate::llm::BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(crate::llm::BackendError::Provider(format!("{status}: {text}")).into());
        }
        let parsed: ExecuteResponse = serde_json::from_str(&text)
            .map_err(|e| crate::llm::BackendError::Provider(format!("malformed execute response: {e}")))?;
        Ok(parsed.answer)
    }
}
