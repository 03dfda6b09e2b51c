//! Persistent content-addressed store of model judgments.
//!
//! On-disk layout: the magic line `FIMJC1\n`, then records of
//! `u32 LE payload length | SHA-256 of payload | payload`, where the payload
//! is a JSON object `{"key", "judgment"}`. Later records for a key win.
//! Records that fail their checksum are dropped on open and the store is
//! rewritten without them, so the affected keys are recomputed.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::backend::ModelJudgment;
use super::prompt::SentinelConfig;
use crate::context::Strategy;

const MAGIC: &[u8] = b"FIMJC1\n";
const HEADER_LEN: usize = 4 + 32;
pub const STORE_FILE: &str = "judgments.bin";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl CacheKey {
    /// Digest of everything that determines a judgment for one line.
    pub fn new(
        file_digest: &str,
        line: usize,
        strategy: &Strategy,
        sentinels: &SentinelConfig,
        backend_id: &str,
    ) -> Self {
        let mut h = Sha256::new();
        for part in [
            file_digest,
            &line.to_string(),
            &strategy.descriptor(),
            &sentinels.descriptor(),
            backend_id,
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        CacheKey(hex::encode(h.finalize()))
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache store {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// A store record that was discarded on open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheCorrupt {
    pub offset: usize,
    pub reason: String,
}

impl fmt::Display for CacheCorrupt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "corrupt cache record at byte {}: {}", self.offset, self.reason)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: CacheKey,
    judgment: ModelJudgment,
}

type Slot = Arc<Mutex<Option<ModelJudgment>>>;

pub struct JudgmentCache {
    path: Option<PathBuf>,
    slots: Mutex<HashMap<CacheKey, Slot>>,
    writer: Mutex<Option<File>>,
    corrupt: Vec<CacheCorrupt>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl fmt::Debug for JudgmentCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JudgmentCache")
            .field("path", &self.path)
            .field("stats", &self.stats())
            .finish()
    }
}

fn encode_record(entry: &Entry) -> Vec<u8> {
    let payload = serde_json::to_vec(entry).expect("cache entry serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&payload));
    out.extend_from_slice(&payload);
    out
}

fn decode_store(bytes: &[u8]) -> (Vec<Entry>, Vec<CacheCorrupt>) {
    let mut entries = Vec::new();
    let mut corrupt = Vec::new();
    if bytes.is_empty() {
        return (entries, corrupt);
    }
    if !bytes.starts_with(MAGIC) {
        corrupt.push(CacheCorrupt {
            offset: 0,
            reason: "bad magic".into(),
        });
        return (entries, corrupt);
    }
    let mut pos = MAGIC.len();
    while pos < bytes.len() {
        if bytes.len() - pos < HEADER_LEN {
            corrupt.push(CacheCorrupt {
                offset: pos,
                reason: "truncated header".into(),
            });
            break;
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let checksum = &bytes[pos + 4..pos + HEADER_LEN];
        let start = pos + HEADER_LEN;
        if bytes.len() - start < len {
            corrupt.push(CacheCorrupt {
                offset: pos,
                reason: "truncated payload".into(),
            });
            break;
        }
        let payload = &bytes[start..start + len];
        if Sha256::digest(payload).as_slice() != checksum {
            corrupt.push(CacheCorrupt {
                offset: pos,
                reason: "checksum mismatch".into(),
            });
        } else {
            match serde_json::from_slice::<Entry>(payload) {
                Ok(entry) => entries.push(entry),
                Err(e) => corrupt.push(CacheCorrupt {
                    offset: pos,
                    reason: format!("undecodable payload: {e}"),
                }),
            }
        }
        pos = start + len;
    }
    (entries, corrupt)
}

impl JudgmentCache {
    /// A cache that lives only as long as the value.
    pub fn in_memory() -> Self {
        JudgmentCache {
            path: None,
            slots: Mutex::new(HashMap::new()),
            writer: Mutex::new(None),
            corrupt: Vec::new(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Opens (or creates) the store `judgments.bin` inside `dir`.
    pub fn open_dir(dir: impl AsRef<Path>) -> Result<Self, CacheError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| CacheError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Self::open(dir.join(STORE_FILE))
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| CacheError::Io {
            path: path.display().to_string(),
            source,
        };
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(e)),
        };
        let (entries, corrupt) = decode_store(&bytes);
        let mut slots = HashMap::new();
        for entry in entries {
            slots.insert(entry.key, Arc::new(Mutex::new(Some(entry.judgment))));
        }

        let file = if bytes.is_empty() || !corrupt.is_empty() {
            // fresh store, or rewrite without the damaged records
            let mut keys: Vec<&CacheKey> = slots.keys().collect();
            keys.sort();
            let mut out = MAGIC.to_vec();
            for key in keys {
                let judgment = slots[key].lock().unwrap().clone().expect("loaded slot is filled");
                out.extend(encode_record(&Entry {
                    key: key.clone(),
                    judgment,
                }));
            }
            fs::write(&path, &out).map_err(io_err)?;
            OpenOptions::new().append(true).open(&path).map_err(io_err)?
        } else {
            OpenOptions::new().append(true).open(&path).map_err(io_err)?
        };

        Ok(JudgmentCache {
            path: Some(path),
            slots: Mutex::new(slots),
            writer: Mutex::new(Some(file)),
            corrupt,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Records discarded when the store was opened.
    pub fn corrupt_entries(&self) -> &[CacheCorrupt] {
        &self.corrupt
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn len(&self) -> usize {
        self.slots
            .lock()
            .unwrap()
            .values()
            .filter(|s| s.lock().unwrap().is_some())
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the stored judgment for `key`, or runs `compute` and stores
    /// its result. Concurrent callers with the same key wait for the first
    /// computation; errors are not cached.
    pub fn get_or_compute<E, F>(&self, key: &CacheKey, compute: F) -> Result<ModelJudgment, E>
    where
        F: FnOnce() -> Result<ModelJudgment, E>,
        E: From<CacheError>,
    {
        let slot = self.slots.lock().unwrap().entry(key.clone()).or_default().clone();
        let mut guard = slot.lock().unwrap();
        if let Some(j) = guard.as_ref() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(j.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let judgment = compute()?;
        self.persist(key, &judgment)?;
        *guard = Some(judgment.clone());
        Ok(judgment)
    }

    fn persist(&self, key: &CacheKey, judgment: &ModelJudgment) -> Result<(), CacheError> {
        let mut writer = self.writer.lock().unwrap();
        let Some(file) = writer.as_mut() else {
            return Ok(());
        };
        let record = encode_record(&Entry {
            key: key.clone(),
            judgment: judgment.clone(),
        });
        file.write_all(&record)
            .and_then(|_| file.flush())
            .map_err(|source| CacheError::Io {
                path: self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                source,
            })
    }
}
