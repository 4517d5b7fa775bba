//! Programmable chat backend for tests that need structured replies the
//! fixed-substring script format cannot express (randomized corpora,
//! per-call counters). Shares the transcript shape with the scripted mock.

use crate::llm::{BackendError, ChatBackend, ChatRequest, ChatResponse, Transcript, TranscriptEntry};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

type ReplyFn = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

pub struct FnChatBackend {
    f: Box<ReplyFn>,
    delay: Option<Duration>,
    supports_images: bool,
    calls: AtomicUsize,
    transcript: Mutex<Transcript>,
}

impl FnChatBackend {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        Self {
            f: Box::new(f),
            delay: None,
            supports_images: false,
            calls: AtomicUsize::new(0),
            transcript: Mutex::new(Vec::new()),
        }
    }

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

    pub fn calls_containing(&self, marker: &str) -> usize {
        self.transcript()
            .iter()
            .filter(|e| e.request.match_text().contains(marker))
            .count()
    }
}

impl ChatBackend for FnChatBackend {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let started = Instant::now();
        if let Some(delay) = self.delay {
            std::thread::sleep(delay);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let reply = (self.f)(req);
        let finished = Instant::now();
        self.transcript.lock().expect("transcript poisoned").push(TranscriptEntry {
            request: req.clone(),
            reply: reply.as_ref().map(Clone::clone).map_err(|e| e.to_string()),
            started,
            finished,
        });
        reply.map(|text| ChatResponse {
            prompt_tokens: req.user_prompt.split_whitespace().count() as u64,
            completion_tokens: text.split_whitespace().count() as u64,
            text,
        })
    }

    fn supports_images(&self) -> bool {
        self.supports_images
    }
}
