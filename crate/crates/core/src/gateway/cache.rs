use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, Fingerprint, GatewayError};

const CACHE_FORMAT: &str = "vulrag-replay-cache";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub fingerprint: Fingerprint,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    kind: String,
    format: String,
    fingerprint_version: String,
}

/// Recorded responses keyed by request fingerprint.
///
/// When backed by a file, every new record is appended immediately so an
/// interrupted run keeps what it paid for. Loading applies records in file
/// order, so a later overwrite wins.
#[derive(Debug, Default)]
pub struct ReplayCache {
    entries: Mutex<BTreeMap<Fingerprint, CacheEntry>>,
    path: Option<PathBuf>,
}

impl ReplayCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens the cache at `path`, creating an empty one if the file does not
    /// exist yet.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let entries = if path.exists() { read_entries(path)? } else { BTreeMap::new() };
        Ok(ReplayCache { entries: Mutex::new(entries), path: Some(path.to_path_buf()) })
    }

    /// Loads the cache read-only: records are kept in memory only.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        Ok(ReplayCache { entries: Mutex::new(read_entries(path.as_ref())?), path: None })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fp: &Fingerprint) -> Option<ChatResponse> {
        self.entries.lock().unwrap().get(fp).map(|e| e.response.clone())
    }

    pub fn entries(&self) -> Vec<CacheEntry> {
        self.entries.lock().unwrap().values().cloned().collect()
    }

    /// Stores `response` for `request`. Re-recording an identical response is
    /// a no-op; a different one is a conflict unless `overwrite` is set.
    pub fn record(&self, request: &ChatRequest, response: &ChatResponse, overwrite: bool) -> Result<(), GatewayError> {
        let fingerprint = request.fingerprint();
        let mut entries = self.entries.lock().unwrap();
        if let Some(existing) = entries.get(&fingerprint) {
            if existing.response == *response {
                return Ok(());
            }
            if !overwrite {
                return Err(GatewayError::CacheConflict { fingerprint });
            }
        }
        let entry = CacheEntry { fingerprint: fingerprint.clone(), request: request.clone(), response: response.clone() };
        if let Some(path) = &self.path {
            append_entry(path, &entry)?;
        }
        entries.insert(fingerprint, entry);
        Ok(())
    }

    /// Writes every entry, sorted by fingerprint, to `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GatewayError> {
        let entries = self.entries.lock().unwrap();
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        writeln!(w, "{}", serde_json::to_string(&header())?)?;
        for e in entries.values() {
            writeln!(w, "{}", serde_json::to_string(e)?)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn header() -> CacheHeader {
    CacheHeader {
        kind: "header".into(),
        format: CACHE_FORMAT.into(),
        fingerprint_version: ChatRequest::FINGERPRINT_VERSION.into(),
    }
}

fn read_entries(path: &Path) -> Result<BTreeMap<Fingerprint, CacheEntry>, GatewayError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            let h: CacheHeader = serde_json::from_str(&line)
                .map_err(|e| GatewayError::CacheFormat(format!("{}: bad header: {e}", path.display())))?;
            if h.format != CACHE_FORMAT || h.fingerprint_version != ChatRequest::FINGERPRINT_VERSION {
                return Err(GatewayError::CacheFormat(format!(
                    "{}: expected {CACHE_FORMAT}/{}, found {}/{}",
                    path.display(),
                    ChatRequest::FINGERPRINT_VERSION,
                    h.format,
                    h.fingerprint_version
                )));
            }
            continue;
        }
        let e: CacheEntry = serde_json::from_str(&line)
            .map_err(|e| GatewayError::CacheFormat(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.insert(e.fingerprint.clone(), e);
    }
    Ok(out)
}

fn append_entry(path: &Path, e: &CacheEntry) -> Result<(), GatewayError> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = String::new();
    if fresh {
        buf.push_str(&serde_json::to_string(&header())?);
        buf.push('\n');
    }
    buf.push_str(&serde_json::to_string(e)?);
    buf.push('\n');
    f.write_all(buf.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;

    fn req(t: &str) -> ChatRequest {
        ChatRequest { model: "m".into(), messages: vec![ChatMessage::user(t)], temperature: 0.0, max_output_tokens: 64 }
    }

    #[test]
    fn record_then_get() {
        let c = ReplayCache::in_memory();
        c.record(&req("a"), &ChatResponse::complete("A"), false).unwrap();
        assert_eq!(c.get(&req("a").fingerprint()).unwrap().text, "A");
        assert!(c.get(&req("b").fingerprint()).is_none());
    }

    #[test]
    fn conflicting_record_needs_overwrite() {
        let c = ReplayCache::in_memory();
        c.record(&req("a"), &ChatResponse::complete("A"), false).unwrap();
        c.record(&req("a"), &ChatResponse::complete("A"), false).unwrap();
        let err = c.record(&req("a"), &ChatResponse::complete("B"), false).unwrap_err();
        assert!(matches!(err, GatewayError::CacheConflict { .. }));
        c.record(&req("a"), &ChatResponse::complete("B"), true).unwrap();
        assert_eq!(c.get(&req("a").fingerprint()).unwrap().text, "B");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cache.jsonl");
        let c = ReplayCache::open(&p).unwrap();
        c.record(&req("a"), &ChatResponse::complete("A"), false).unwrap();
        c.record(&req("b"), &ChatResponse::complete("B\nwith newline"), false).unwrap();
        c.record(&req("a"), &ChatResponse::complete("A2"), true).unwrap();

        let appended = ReplayCache::load(&p).unwrap();
        assert_eq!(appended.entries(), c.entries());

        let q = dir.path().join("sorted.jsonl");
        c.save(&q).unwrap();
        assert_eq!(ReplayCache::load(&q).unwrap().entries(), c.entries());
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, "{\"kind\":\"header\",\"format\":\"other\",\"fingerprint_version\":\"x\"}\n").unwrap();
        assert!(matches!(ReplayCache::load(&p), Err(GatewayError::CacheFormat(_))));
    }
}
