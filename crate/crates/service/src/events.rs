//! Log records and the append-only event log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// Interaction event kinds with their payloads. Positions and counts are
/// in characters of the editor buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventBody {
    /// Server-only: a non-empty suggestion returned to the client.
    SuggestionShown { suggestion_id: String, arm: String, text: String, cursor: usize },
    /// Server-only: the arm's policy failed and an empty suggestion was returned.
    SuggestError { arm: String, message: String },
    /// The suggestion was spliced into the buffer at `position`, or at the
    /// cursor it was requested for when absent.
    Accepted {
        suggestion_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        position: Option<usize>,
    },
    Rejected {
        suggestion_id: String,
        #[serde(default)]
        implicit: bool,
    },
    CharTyped { position: usize, text: String },
    CharsDeleted { position: usize, count: usize },
    TestsRun {},
    BufferSnapshot { buffer_hash: String },
}

impl EventBody {
    pub fn is_server_only(&self) -> bool {
        matches!(self, EventBody::SuggestionShown { .. } | EventBody::SuggestError { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Client,
    Server,
}

/// An event as submitted by a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientEvent {
    pub seq: u64,
    /// Milliseconds since the Unix epoch, as observed by the client.
    pub timestamp: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub session_id: String,
    pub origin: Origin,
    /// Strictly increasing per session and origin.
    pub seq: u64,
    pub timestamp: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub participant_label: String,
    pub problem_id: String,
    /// Arm names in presentation order: index 0 is "Assistant 1".
    pub arm_order: Vec<String>,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum LogRecord {
    Session(Session),
    Event(InteractionEvent),
}

pub fn now_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Reads every record. A trailing line without a newline is a torn write
/// and is ignored; `truncate_to` reports where the valid prefix ends.
fn read_records(path: &Path) -> Result<(Vec<LogRecord>, u64), ServiceError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut valid_len = 0u64;
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !line.ends_with('\n') {
            log::warn!("{}: dropping torn trailing record", path.display());
            break;
        }
        if !line.trim().is_empty() {
            let record = serde_json::from_str(&line).map_err(|e| ServiceError::CorruptLog {
                path: path.display().to_string(),
                line: line_no,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        valid_len += n as u64;
    }
    Ok((records, valid_len))
}

/// Loads the log at `path` without opening it for writing.
pub fn load_log(path: &Path) -> Result<Vec<LogRecord>, ServiceError> {
    Ok(read_records(path)?.0)
}

/// Single serialized writer; every append is flushed and synced before
/// it returns.
pub struct EventLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl EventLog {
    /// Opens (creating if needed) and returns the existing records.
    pub fn open(path: &Path) -> Result<(Self, Vec<LogRecord>), ServiceError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let (records, valid_len) = read_records(path)?;
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        if file.metadata()?.len() != valid_len {
            file.set_len(valid_len)?;
            file.seek(SeekFrom::End(0))?;
        }
        Ok((Self { path: path.to_path_buf(), file: Mutex::new(file) }, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, records: &[LogRecord]) -> Result<(), ServiceError> {
        if records.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).expect("record serializes");
            buf.push(b'\n');
        }
        let mut file = self.file.lock().expect("log lock poisoned");
        file.write_all(&buf)?;
        file.sync_data()?;
        Ok(())
    }

    /// Reads the log back while holding the writer lock.
    pub fn snapshot(&self) -> Result<Vec<LogRecord>, ServiceError> {
        let _guard = self.file.lock().expect("log lock poisoned");
        load_log(&self.path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shape() {
        let e = ClientEvent { seq: 3, timestamp: 10, body: EventBody::CharsDeleted { position: 4, count: 2 } };
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v, serde_json::json!({"seq":3,"timestamp":10,"kind":"CHARS_DELETED","payload":{"position":4,"count":2}}));
        let back: ClientEvent = serde_json::from_value(v).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let rec = LogRecord::Event(InteractionEvent {
            session_id: "s".into(),
            origin: Origin::Client,
            seq: 1,
            timestamp: 0,
            body: EventBody::TestsRun {},
        });
        {
            let (log, _) = EventLog::open(&path).unwrap();
            log.append(std::slice::from_ref(&rec)).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"record\":\"ev").unwrap();
        drop(f);
        let (log, records) = EventLog::open(&path).unwrap();
        assert_eq!(records, vec![rec.clone()]);
        log.append(std::slice::from_ref(&rec)).unwrap();
        assert_eq!(load_log(&path).unwrap(), vec![rec.clone(), rec]);
    }
}
