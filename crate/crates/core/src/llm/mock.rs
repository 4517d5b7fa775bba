//! Deterministic scripted chat backend. Rules are ordered
//! (substring-pattern, reply) pairs with an optional default; an unmatched
//! prompt without a default is an error. A pure function of (script,
//! request), so identical requests always produce identical responses.

use crate::error::{Error, Result};
use crate::llm::{BackendError, ChatBackend, ChatRequest, ChatResponse};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub contains: String,
    pub reply: String,
}

// Script files are a JSON array of rules; an entry carrying only a
// "default" key sets the fallback reply.
#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptEntry {
    Rule(ScriptRule),
    Default { default: String },
}

/// One recorded call: request, reply (or error tag), and wall-clock span.
#[derive(Debug, Clone)]
pub struct TranscriptEntry {
    pub request: ChatRequest,
    pub reply: std::result::Result<String, String>,
    pub started: Instant,
    pub finished: Instant,
}

/// Ordered record of every call a mock backend served.
pub type Transcript = Vec<TranscriptEntry>;

#[derive(Debug)]
pub struct MockChatBackend {
    rules: Vec<ScriptRule>,
    default: Option<String>,
    delay: Option<Duration>,
    supports_images: bool,
    calls: AtomicUsize,
    transcript: Mutex<Transcript>,
}

impl MockChatBackend {
    pub fn new(rules: Vec<ScriptRule>, default: Option<String>) -> Self {
        Self {
            rules,
            default,
            delay: None,
            supports_images: false,
            calls: AtomicUsize::new(0),
            transcript: Mutex::new(Vec::new()),
        }
    }

    /// Load a script file: `[{"contains": ..., "reply": ...}, ..., {"default": ...}]`.
    pub fn from_script_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read mock script {}: {e}", path.display())))?;
        Self::from_script_str(&raw)
            .map_err(|e| Error::Config(format!("mock script {}: {e}", path.display())))
    }

    pub fn from_script_str(raw: &str) -> Result<Self> {
        let entries: Vec<ScriptEntry> = serde_json::from_str(raw)?;
        let mut rules = Vec::new();
        let mut default = None;
        for entry in entries {
            match entry {
                ScriptEntry::Rule(r) => rules.push(r),
                ScriptEntry::Default { default: d } => default = Some(d),
            }
        }
        Ok(Self::new(rules, default))
    }

    /// Inject a fixed per-call latency (timing tests).
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn with_image_support(mut self, supported: bool) -> Self {
        self.supports_images = supported;
        self
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().expect("transcript poisoned").clone()
    }

    /// Calls whose match text contains `marker`.
    pub fn calls_containing(&self, marker: &str) -> usize {
        self.transcript()
            .iter()
            .filter(|e| e.request.match_text().contains(marker))
            .count()
    }
}

impl ChatBackend for MockChatBackend {
    fn chat(&self, req: &ChatRequest) -> std::result::Result<ChatResponse, BackendError> {
        let started = Instant::now();
        if let Some(delay) = self.delay {
            std::thread::sleep(delay);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = req.match_text();
        let reply = self
            .rules
            .iter()
            .find(|r| text.contains(&r.contains))
            .map(|r| r.reply.clone())
            .or_else(|| self.default.clone());
        let finished = Instant::now();
        let outcome = match &reply {
            Some(r) => Ok(r.clone()),
            None => Err(format!("unmatched prompt: {}", truncate(&text, 160))),
        };
        self.transcript.lock().expect("transcript poisoned").push(TranscriptEntry {
            request: req.clone(),
            reply: outcome,
            started,
            finished,
        });
        match reply {
            Some(text) => Ok(ChatResponse {
                prompt_tokens: req.user_prompt.split_whitespace().count() as u64,
                completion_tokens: text.split_whitespace().count() as u64,
                text,
            }),
            None => Err(BackendError::ScriptMiss(truncate(&text, 160))),
        }
    }

    fn supports_images(&self) -> bool {
        self.supports_images
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_string()
    } else {
        let cut: String = s.chars().take(max).collect();
        format!("{cut}...")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(contains: &str, reply: &str) -> ScriptRule {
        ScriptRule { contains: contains.into(), reply: reply.into() }
    }

    #[test]
    fn scripted_substring_match_replies() {
        let mock = MockChatBackend::new(vec![rule("flag", "California")], None);
        let resp = mock.chat(&ChatRequest::new("sys", "which state's flag has a bear?")).unwrap();
        assert_eq!(resp.text, "California");
    }

    #[test]
    fn identical_requests_get_identical_responses() {
        let mock = MockChatBackend::new(vec![rule("flag", "California")], None);
        let req = ChatRequest::new("sys", "the flag question");
        let a = mock.chat(&req).unwrap();
        let b = mock.chat(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn first_matching_rule_wins() {
        let mock = MockChatBackend::new(vec![rule("a", "first"), rule("ab", "second")], None);
        assert_eq!(mock.chat(&ChatRequest::new("", "ab")).unwrap().text, "first");
    }

    #[test]
    fn unmatched_without_default_errors() {
        let mock = MockChatBackend::new(vec![rule("flag", "California")], None);
        let err = mock.chat(&ChatRequest::new("sys", "something else")).unwrap_err();
        assert!(matches!(err, BackendError::ScriptMiss(_)));
    }

    #[test]
    fn default_covers_unmatched() {
        let mock = MockChatBackend::new(vec![], Some("fallback".into()));
        assert_eq!(mock.chat(&ChatRequest::new("sys", "anything")).unwrap().text, "fallback");
    }

    #[test]
    fn script_file_format_parses_rules_and_default() {
        let raw = r#"[
            {"contains": "flag", "reply": "California"},
            {"default": "echo"}
        ]"#;
        let mock = MockChatBackend::from_script_str(raw).unwrap();
        assert_eq!(mock.chat(&ChatRequest::new("", "a flag")).unwrap().text, "California");
        assert_eq!(mock.chat(&ChatRequest::new("", "other")).unwrap().text, "echo");
    }

    #[test]
    fn transcript_records_requests_in_order() {
        let mock = MockChatBackend::new(vec![rule("one", "1"), rule("two", "2")], None);
        mock.chat(&ChatRequest::new("", "one")).unwrap();
        mock.chat(&ChatRequest::new("", "two")).unwrap();
        let t = mock.transcript();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].reply.as_deref(), Ok("1"));
        assert_eq!(t[1].request.user_prompt, "two");
        assert_eq!(mock.calls_containing("two"), 1);
    }
}
