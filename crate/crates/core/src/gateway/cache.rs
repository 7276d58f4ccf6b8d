//! Content-addressed response cache: one `<digest>.json` file per request,
//! holding the request and response verbatim. Replay fixtures use the same
//! layout, so any cache directory doubles as a fixture set.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, GatewayError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: ChatRequest,
    pub response: ChatResponse,
}

pub struct Cache {
    dir: PathBuf,
    // Readers go straight to the filesystem; writers serialize here and
    // publish via rename so a reader never sees a partial file.
    write_lock: Mutex<()>,
}

impl Cache {
    pub fn open(dir: PathBuf) -> Result<Self, GatewayError> {
        fs::create_dir_all(&dir)
            .map_err(|e| GatewayError::CacheIo(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn entry_path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn load(&self, digest: &str) -> Result<Option<CacheEntry>, GatewayError> {
        load_entry(&self.entry_path(digest))
    }

    pub fn store(
        &self,
        digest: &str,
        request: &ChatRequest,
        response: &ChatResponse,
    ) -> Result<(), GatewayError> {
        let entry = CacheEntry {
            request: request.clone(),
            response: response.clone(),
        };
        let body = serde_json::to_string_pretty(&entry)
            .map_err(|e| GatewayError::CacheIo(e.to_string()))?;
        let path = self.entry_path(digest);
        let tmp = self.dir.join(format!("{digest}.json.tmp"));

        let _guard = self.write_lock.lock().unwrap();
        if path.exists() {
            return Ok(());
        }
        fs::write(&tmp, body)
            .map_err(|e| GatewayError::CacheIo(format!("{}: {e}", tmp.display())))?;
        fs::rename(&tmp, &path)
            .map_err(|e| GatewayError::CacheIo(format!("{}: {e}", path.display())))?;
        Ok(())
    }
}

pub(crate) fn load_entry(path: &Path) -> Result<Option<CacheEntry>, GatewayError> {
    let bytes = match fs::read(path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(GatewayError::CacheIo(format!("{}: {e}", path.display()))),
    };
    let entry = serde_json::from_slice(&bytes).map_err(|e| {
        GatewayError::MalformedResponse(format!("bad cache entry {}: {e}", path.display()))
    })?;
    Ok(Some(entry))
}
