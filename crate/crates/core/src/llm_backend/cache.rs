use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, CacheKey, FinishReason};

/// One-line metadata stored ahead of the raw response body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub kind: String,
    pub backend: String,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<FinishReason>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub header: CacheHeader,
    pub body: String,
}

impl CacheEntry {
    fn encode(&self) -> String {
        let header = serde_json::to_string(&self.header).expect("header serializes");
        format!("{header}\n{}", self.body)
    }

    fn decode(raw: &str) -> Result<Self, BackendError> {
        let (header, body) = raw
            .split_once('\n')
            .ok_or_else(|| BackendError::Cache("cache file has no header line".into()))?;
        let header = serde_json::from_str(header)
            .map_err(|e| BackendError::Cache(format!("bad cache header: {e}")))?;
        Ok(Self {
            header,
            body: body.to_string(),
        })
    }
}

/// Append-only, content-addressed response store.
///
/// On disk each key lives at `<root>/<key[0..2]>/<key[2..4]>/<key>`. A key is
/// written at most once; racing writers produce identical bytes, so the final
/// rename is last-write-wins.
#[derive(Debug)]
pub struct ResponseCache {
    root: Option<PathBuf>,
    memory: Mutex<HashMap<CacheKey, CacheEntry>>,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ResponseCache {
    pub fn on_disk(root: impl Into<PathBuf>) -> Self {
        Self {
            root: Some(root.into()),
            memory: Mutex::new(HashMap::new()),
        }
    }

    /// Process-local cache, gone when dropped.
    pub fn ephemeral() -> Self {
        Self {
            root: None,
            memory: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn path_for(&self, key: &CacheKey) -> Option<PathBuf> {
        let k = key.as_str();
        self.root
            .as_ref()
            .map(|r| r.join(&k[0..2]).join(&k[2..4]).join(k))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, BackendError> {
        let Some(path) = self.path_for(key) else {
            return Ok(self.memory.lock().unwrap().get(key).cloned());
        };
        match fs::read_to_string(&path) {
            Ok(raw) => CacheEntry::decode(&raw).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(BackendError::Cache(format!("{}: {e}", path.display()))),
        }
    }

    pub fn put(&self, key: &CacheKey, entry: &CacheEntry) -> Result<(), BackendError> {
        let Some(path) = self.path_for(key) else {
            self.memory
                .lock()
                .unwrap()
                .entry(key.clone())
                .or_insert_with(|| entry.clone());
            return Ok(());
        };
        if path.exists() {
            return Ok(());
        }
        let io = |e: std::io::Error| BackendError::Cache(format!("{}: {e}", path.display()));
        let dir = path.parent().expect("fan-out path has a parent");
        fs::create_dir_all(dir).map_err(io)?;
        let tmp = dir.join(format!(
            ".{}.{}.{}.tmp",
            key.as_str(),
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(entry.encode().as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        drop(f);
        fs::rename(&tmp, &path).map_err(io)
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        match self.path_for(key) {
            Some(p) => p.exists(),
            None => self.memory.lock().unwrap().contains_key(key),
        }
    }
}
