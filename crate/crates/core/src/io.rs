//! Versioned JSONL streams and atomic file output.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::measurement::{CameraDetection, LidarDepthObs};
use crate::sim::GtRecord;
use crate::tracker::TrackOutput;

pub const SCHEMA_VERSION: &str = "1.0";
const SCHEMA_MAJOR: &str = "1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema { path: PathBuf, line: usize, message: String },
}

impl IoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

/// A record with its schema version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: String,
    #[serde(flatten)]
    pub record: T,
}

impl<T> Versioned<T> {
    pub fn new(record: T) -> Self {
        Self { schema_version: SCHEMA_VERSION.to_owned(), record }
    }
}

/// All detections of one camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub t: f64,
    pub detections: Vec<CameraDetection>,
}

pub type DetectionLine = Versioned<DetectionFrame>;
pub type LidarLine = Versioned<LidarDepthObs>;
pub type GtLine = Versioned<GtRecord>;
pub type TrackLine = Versioned<TrackOutput>;

fn check_version(v: &str) -> Result<(), String> {
    match v.split('.').next() {
        Some(SCHEMA_MAJOR) => Ok(()),
        _ => Err(format!("unsupported schema_version {v:?} (expected {SCHEMA_MAJOR}.x)")),
    }
}

/// Serializes records as one JSON object per line.
pub fn to_jsonl<T: Serialize>(records: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&Versioned::new(r)).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Parses versioned JSONL text; blank lines are skipped.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(text.as_bytes()).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| IoError::Schema { path: path.to_owned(), line: i + 1, message };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        match value.get("schema_version").and_then(|v| v.as_str()) {
            Some(v) => check_version(v).map_err(schema)?,
            None => return Err(schema("missing schema_version".into())),
        }
        let rec: Versioned<T> = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
        out.push(rec.record);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_jsonl(&text, path)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    write_atomic(path, to_jsonl(records).as_bytes())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Schema {
        path: path.to_owned(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| IoError::io(path, e))?))
}
