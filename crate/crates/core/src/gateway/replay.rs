//! Deterministic replay backend: resolves requests by cache-key digest from a
//! fixture directory and fails hard on anything unrecorded, so hermetic tests
//! can never fall through to the network.

use std::path::PathBuf;

use super::cache::load_entry;
use super::{cache_key, Backend, BackendReply, ChatRequest, InvokeError};

pub struct ReplayBackend {
    dir: PathBuf,
}

impl ReplayBackend {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir }
    }
}

impl Backend for ReplayBackend {
    fn invoke(&self, request: &ChatRequest) -> Result<BackendReply, InvokeError> {
        let digest = cache_key(request);
        let path = self.dir.join(format!("{digest}.json"));
        let entry = load_entry(&path)
            .map_err(|e| InvokeError::Malformed(e.to_string()))?
            .ok_or(InvokeError::MissingFixture(digest))?;
        Ok(BackendReply {
            content: entry.response.content,
            finish_reason: entry.response.finish_reason,
            prompt_units: entry.response.prompt_units,
            completion_units: entry.response.completion_units,
        })
    }
}
