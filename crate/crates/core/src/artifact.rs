//! Line-delimited JSON artifacts. Every file starts with a header record that
//! names the artifact, the tool version and the resolved run configuration.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TOOL: &str = "vulrag";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
    #[error("{path}: expected a {expected} artifact, found {found}")]
    WrongKind { path: String, expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub kind: String,
    pub artifact: String,
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    pub config: serde_json::Value,
}

impl ArtifactHeader {
    pub fn new(artifact: &str, schema_version: u32, config: &impl Serialize) -> Self {
        ArtifactHeader {
            kind: "header".into(),
            artifact: artifact.into(),
            tool: TOOL.into(),
            version: TOOL_VERSION.into(),
            schema_version,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.display().to_string(), source }
}

pub fn write_jsonl<T: Serialize>(path: &Path, header: &ArtifactHeader, records: &[T]) -> Result<(), ArtifactError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    writeln!(w, "{}", to_line(header)).map_err(io_err(path))?;
    for r in records {
        writeln!(w, "{}", to_line(r)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Appends one record, writing `header` first if the file is new or empty.
pub fn append_jsonl<T: Serialize>(path: &Path, header: &ArtifactHeader, record: &T) -> Result<(), ArtifactError> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut buf = String::new();
    if fresh {
        buf.push_str(&to_line(header));
        buf.push('\n');
    }
    buf.push_str(&to_line(record));
    buf.push('\n');
    f.write_all(buf.as_bytes()).map_err(io_err(path))
}

/// Reads a header plus records. `expected` names the artifact kind.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, expected: &str) -> Result<(ArtifactHeader, Vec<T>), ArtifactError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut header: Option<ArtifactHeader> = None;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let fmt = |message: String| ArtifactError::Format { path: path.display().to_string(), line: i + 1, message };
        if header.is_none() {
            let h: ArtifactHeader = serde_json::from_str(&line).map_err(|e| fmt(format!("bad header: {e}")))?;
            if h.artifact != expected {
                return Err(ArtifactError::WrongKind {
                    path: path.display().to_string(),
                    expected: expected.into(),
                    found: h.artifact,
                });
            }
            header = Some(h);
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| fmt(e.to_string()))?);
    }
    let header = header.ok_or_else(|| ArtifactError::Format {
        path: path.display().to_string(),
        line: 0,
        message: "empty file, header missing".into(),
    })?;
    Ok((header, out))
}

/// Records of a file that may have been cut off mid-write. A missing file
/// gives no records; unreadable record lines are skipped with a warning. The
/// header must still be present and name `expected`.
pub fn read_jsonl_lenient<T: DeserializeOwned>(path: &Path, expected: &str) -> Result<Vec<T>, ArtifactError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut lines = BufReader::new(file).lines();
    let Some(first) = lines.next() else { return Ok(Vec::new()) };
    let first = first.map_err(io_err(path))?;
    let header: ArtifactHeader = serde_json::from_str(&first).map_err(|e| ArtifactError::Format {
        path: path.display().to_string(),
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.artifact != expected {
        return Err(ArtifactError::WrongKind {
            path: path.display().to_string(),
            expected: expected.into(),
            found: header.artifact,
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            Err(e) => tracing::warn!(path = %path.display(), line = i + 2, error = %e, "skipping unreadable record"),
        }
    }
    Ok(out)
}

fn to_line<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string(v).expect("artifact records serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        let h = ArtifactHeader::new("things", 1, &serde_json::json!({"n": 10}));
        write_jsonl(&p, &h, &[1u32, 2, 3]).unwrap();
        let (h2, v): (_, Vec<u32>) = read_jsonl(&p, "things").unwrap();
        assert_eq!(h2, h);
        assert_eq!(v, [1, 2, 3]);
        assert!(matches!(read_jsonl::<u32>(&p, "other"), Err(ArtifactError::WrongKind { .. })));
    }

    #[test]
    fn append_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        let h = ArtifactHeader::new("things", 1, &());
        append_jsonl(&p, &h, &1u32).unwrap();
        append_jsonl(&p, &h, &2u32).unwrap();
        let (_, v): (_, Vec<u32>) = read_jsonl(&p, "things").unwrap();
        assert_eq!(v, [1, 2]);
    }

    #[test]
    fn lenient_read_skips_torn_tail_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        assert!(read_jsonl_lenient::<u32>(&p, "nums").unwrap().is_empty());
        let h = ArtifactHeader::new("nums", 1, &());
        append_jsonl(&p, &h, &1u32).unwrap();
        append_jsonl(&p, &h, &2u32).unwrap();
        let mut t = std::fs::read_to_string(&p).unwrap();
        t.push('3');
        t.push('x');
        std::fs::write(&p, t).unwrap();
        assert_eq!(read_jsonl_lenient::<u32>(&p, "nums").unwrap(), [1, 2]);
        assert!(matches!(read_jsonl_lenient::<u32>(&p, "other"), Err(ArtifactError::WrongKind { .. })));
    }
}
