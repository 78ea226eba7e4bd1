//! Append-only NDJSON event log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::BackendError;

/// Events are flushed as one JSON object per line, in `seq` order.
pub const LOG_FILE: &str = "events.ndjson";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Assessment,
    Ack,
    Next,
    Solved,
    Rating,
    Report,
    WeightUpdate,
    KpiSample,
    RecipeChange,
    FaultInjected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub ts_ms: u64,
    pub kind: EventKind,
    pub payload: Json,
}

#[derive(Debug)]
pub struct EventStore {
    path: Option<PathBuf>,
    file: Option<File>,
    records: Vec<EventRecord>,
}

impl EventStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            file: None,
            records: Vec::new(),
        }
    }

    /// Opens or creates a log, loading any records already present.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let records = if path.exists() { read_log(&path)? } else { Vec::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| BackendError::io(&path, e))?;
        Ok(Self {
            path: Some(path),
            file: Some(file),
            records,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn append(&mut self, kind: EventKind, ts_ms: u64, payload: Json) -> Result<&EventRecord, BackendError> {
        let record = EventRecord {
            seq: self.records.len() as u64,
            ts_ms,
            kind,
            payload,
        };
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            let path = self.path.as_deref().unwrap_or(Path::new(LOG_FILE));
            f.write_all(line.as_bytes()).map_err(|e| BackendError::io(path, e))?;
            f.flush().map_err(|e| BackendError::io(path, e))?;
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }
}

/// Reads a log, checking that sequence numbers are gap-free from zero.
pub fn read_log(path: &Path) -> Result<Vec<EventRecord>, BackendError> {
    let f = File::open(path).map_err(|e| BackendError::io(path, e))?;
    parse_log(BufReader::new(f))
}

pub fn parse_log(reader: impl BufRead) -> Result<Vec<EventRecord>, BackendError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| BackendError::io(Path::new(LOG_FILE), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EventRecord = serde_json::from_str(&line).map_err(|e| BackendError::Log {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.seq != out.len() as u64 {
            return Err(BackendError::Log {
                line: i + 1,
                message: format!("expected seq {}, found {}", out.len(), rec.seq),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        {
            let mut s = EventStore::open(&path).unwrap();
            s.append(EventKind::Ack, 5, json!({})).unwrap();
            s.append(EventKind::Rating, 9, json!({"stars": 4})).unwrap();
        }
        let mut s = EventStore::open(&path).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.append(EventKind::Report, 11, json!({"text": "x"})).unwrap().seq, 2);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().starts_with(r#"{"seq":0,"ts_ms":5,"kind":"ack""#));
    }

    #[test]
    fn gaps_are_rejected() {
        let log = "{\"seq\":0,\"ts_ms\":1,\"kind\":\"ack\",\"payload\":{}}\n{\"seq\":2,\"ts_ms\":1,\"kind\":\"ack\",\"payload\":{}}\n";
        match parse_log(log.as_bytes()) {
            Err(BackendError::Log { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
