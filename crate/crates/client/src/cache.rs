use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use haipw_core::Arm;
use serde::{Deserialize, Serialize};

use crate::ClientError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    TransportError,
    Invalid,
}

/// One completion attempt as persisted in the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub model: String,
    pub unit_id: String,
    pub arm: Arm,
    pub prompt_index: usize,
    pub text: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub status: ResponseStatus,
}

impl RawResponse {
    pub fn key(&self) -> CacheKey {
        CacheKey { model: self.model.clone(), unit_id: self.unit_id.clone(), arm: self.arm, prompt_index: self.prompt_index }
    }

    /// Delivered responses are final; transport failures are retried later.
    pub fn is_reusable(&self) -> bool {
        self.status != ResponseStatus::TransportError
    }
}

pub fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub model: String,
    pub unit_id: String,
    pub arm: Arm,
    pub prompt_index: usize,
}

struct CacheState {
    entries: HashMap<CacheKey, RawResponse>,
    writer: Option<File>,
}

/// Append-only JSON-lines store of responses. Later lines win on load; lines
/// that fail to parse (a torn final write) are skipped.
pub struct ResponseCache {
    path: Option<PathBuf>,
    state: Mutex<CacheState>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self { path: None, state: Mutex::new(CacheState { entries: HashMap::new(), writer: None }) }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        let path = path.as_ref().to_path_buf();
        let io = |e: std::io::Error| ClientError::Cache(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path).map_err(io)?).lines() {
                let line = line.map_err(io)?;
                if let Ok(r) = serde_json::from_str::<RawResponse>(&line) {
                    if r.is_reusable() {
                        entries.insert(r.key(), r);
                    }
                }
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(Self { path: Some(path), state: Mutex::new(CacheState { entries, writer: Some(writer) }) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Option<RawResponse> {
        self.state.lock().expect("cache lock").entries.get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Persists a response. Every record is written; only delivered ones are
    /// served back by [`ResponseCache::get`].
    pub fn append(&self, response: &RawResponse) -> Result<(), ClientError> {
        let mut state = self.state.lock().expect("cache lock");
        if let Some(writer) = state.writer.as_mut() {
            let mut line = serde_json::to_string(response).map_err(|e| ClientError::Cache(e.to_string()))?;
            line.push('\n');
            writer
                .write_all(line.as_bytes())
                .and_then(|_| writer.flush())
                .map_err(|e| ClientError::Cache(e.to_string()))?;
        }
        if response.is_reusable() {
            state.entries.insert(response.key(), response.clone());
        }
        Ok(())
    }
}
