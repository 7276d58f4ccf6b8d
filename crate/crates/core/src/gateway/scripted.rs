//! Scripted backend: drives fault-injection and simulator tests. A handler
//! closure decides each reply; the wrapper tracks invocation counts and peak
//! concurrency so tests can assert retry and in-flight contracts.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::{cache_key, Backend, BackendReply, ChatRequest, InvokeError};

/// Handler arguments: the request and how many times this exact request
/// (by cache-key digest) has been invoked before, starting at 0.
pub type ScriptHandler =
    dyn Fn(&ChatRequest, u32) -> Result<BackendReply, InvokeError> + Send + Sync;

pub struct ScriptedBackend {
    handler: Box<ScriptHandler>,
    invocations: AtomicU32,
    per_digest: Mutex<HashMap<String, u32>>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    /// Optional pause inside each invocation so concurrency probes can
    /// actually observe overlap.
    hold: Option<Duration>,
}

impl ScriptedBackend {
    pub fn new(
        handler: impl Fn(&ChatRequest, u32) -> Result<BackendReply, InvokeError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            handler: Box::new(handler),
            invocations: AtomicU32::new(0),
            per_digest: Mutex::new(HashMap::new()),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            hold: None,
        }
    }

    /// Reply with a fixed text for every request.
    pub fn constant(content: impl Into<String>) -> Self {
        let content = content.into();
        Self::new(move |request, _| Ok(BackendReply::stop(request, content.clone())))
    }

    /// Fail transiently the first `failures` times each request is seen,
    /// then succeed with `content`.
    pub fn fail_then_succeed(failures: u32, content: impl Into<String>) -> Self {
        let content = content.into();
        Self::new(move |request, seen| {
            if seen < failures {
                Err(InvokeError::Transient(format!(
                    "scripted transient failure {}",
                    seen + 1
                )))
            } else {
                Ok(BackendReply::stop(request, content.clone()))
            }
        })
    }

    pub fn with_hold(mut self, hold: Duration) -> Self {
        self.hold = Some(hold);
        self
    }

    pub fn invocations(&self) -> u32 {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn invoke(&self, request: &ChatRequest) -> Result<BackendReply, InvokeError> {
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let seen = {
            let mut per_digest = self.per_digest.lock().unwrap();
            let counter = per_digest.entry(cache_key(request)).or_insert(0);
            let seen = *counter;
            *counter += 1;
            seen
        };

        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        if let Some(hold) = self.hold {
            std::thread::sleep(hold);
        }
        let outcome = (self.handler)(request, seen);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        outcome
    }
}
