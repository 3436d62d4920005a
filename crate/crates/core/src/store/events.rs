use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::StoreError;

/// Closed set of session event types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventType {
    SessionCreated,
    Described,
    DescriptionEdited,
    ImagesGenerated,
    FeedbackAppended,
    ImagesFlagged,
    ImageSelected,
    MeshGenerated,
    MeshSelected,
    PostProcessed,
    Exported,
}

impl EventType {
    pub const ALL: [EventType; 11] = [
        Self::SessionCreated,
        Self::Described,
        Self::DescriptionEdited,
        Self::ImagesGenerated,
        Self::FeedbackAppended,
        Self::ImagesFlagged,
        Self::ImageSelected,
        Self::MeshGenerated,
        Self::MeshSelected,
        Self::PostProcessed,
        Self::Exported,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SessionCreated => "SessionCreated",
            Self::Described => "Described",
            Self::DescriptionEdited => "DescriptionEdited",
            Self::ImagesGenerated => "ImagesGenerated",
            Self::FeedbackAppended => "FeedbackAppended",
            Self::ImagesFlagged => "ImagesFlagged",
            Self::ImageSelected => "ImageSelected",
            Self::MeshGenerated => "MeshGenerated",
            Self::MeshSelected => "MeshSelected",
            Self::PostProcessed => "PostProcessed",
            Self::Exported => "Exported",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    #[serde(rename = "type")]
    pub kind: EventType,
    pub payload: Value,
}

const CRC_FIELD: &str = ",\"crc32\":";

/// Serializes a record as one line (no trailing newline). The CRC covers
/// the bytes of the record object without the `crc32` member.
pub fn encode_line(record: &EventRecord) -> String {
    let body = serde_json::to_string(record).expect("event records serialize");
    let crc = crc32fast::hash(body.as_bytes());
    format!("{}{CRC_FIELD}{crc}}}", &body[..body.len() - 1])
}

/// Parses and checksums one line.
pub fn decode_line(line: &str) -> Result<EventRecord, String> {
    let idx = line.rfind(CRC_FIELD).ok_or("missing crc32")?;
    let crc_text = line[idx + CRC_FIELD.len()..].strip_suffix('}').ok_or("unterminated record")?;
    let crc: u32 = crc_text.parse().map_err(|_| format!("bad crc32 {crc_text:?}"))?;
    let body = format!("{}}}", &line[..idx]);
    let actual = crc32fast::hash(body.as_bytes());
    if actual != crc {
        return Err(format!("crc32 mismatch: stored {crc}, computed {actual}"));
    }
    serde_json::from_str(&body).map_err(|e| format!("bad record: {e}"))
}

/// Session ids become file names, so only a safe alphabet is accepted.
pub fn validate_session_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    if ok {
        Ok(())
    } else {
        Err(StoreError::NotFound(format!("session {id:?}")))
    }
}

struct Scan {
    records: Vec<EventRecord>,
    /// Byte length of the valid prefix.
    valid_len: u64,
    /// A trailing line failed validation.
    torn_tail: bool,
}

fn scan(id: &str, text: &str) -> Result<Scan, StoreError> {
    let mut records = Vec::new();
    let mut offset = 0u64;
    let mut valid_len = 0u64;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, raw) in lines.iter().enumerate() {
        offset += raw.len() as u64;
        let complete = raw.ends_with('\n');
        let line = raw.trim_end_matches('\n');
        let is_last = i + 1 == lines.len();
        let parsed = if complete { decode_line(line) } else { Err("incomplete line".into()) };
        match parsed {
            Ok(rec) => {
                let expected = records.len() as u64 + 1;
                if rec.seq != expected {
                    return Err(StoreError::CorruptLog {
                        session: id.into(),
                        line: i + 1,
                        reason: format!("sequence {} where {expected} expected", rec.seq),
                    });
                }
                records.push(rec);
                valid_len = offset;
            }
            Err(_) if is_last => return Ok(Scan { records, valid_len, torn_tail: true }),
            Err(reason) => return Err(StoreError::CorruptLog { session: id.into(), line: i + 1, reason }),
        }
    }
    Ok(Scan { records, valid_len, torn_tail: false })
}

/// Append-only per-session JSON-lines logs under one directory.
#[derive(Debug, Clone)]
pub struct EventLog {
    dir: PathBuf,
}

impl EventLog {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn path_of(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    pub fn exists(&self, id: &str) -> bool {
        validate_session_id(id).is_ok() && self.path_of(id).is_file()
    }

    /// Appends one event and returns its sequence number. When
    /// `expected_version` is given, the log must currently hold exactly that
    /// many events, otherwise [`StoreError::SequenceConflict`]. The write
    /// is fsynced before returning.
    pub fn append(&self, id: &str, kind: EventType, payload: Value, expected_version: Option<u64>) -> Result<u64, StoreError> {
        validate_session_id(id)?;
        let path = self.path_of(id);
        let creating = kind == EventType::SessionCreated;
        let mut file = if creating {
            OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&path)
        } else {
            OpenOptions::new().read(true).write(true).open(&path)
        }
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StoreError::NotFound(format!("session {id}")),
            _ => StoreError::io(&path, e),
        })?;
        file.lock().map_err(|e| StoreError::io(&path, e))?;
        let result = self.append_locked(id, &path, &mut file, kind, payload, expected_version);
        let _ = file.unlock();
        result
    }

    fn append_locked(
        &self,
        id: &str,
        path: &Path,
        file: &mut File,
        kind: EventType,
        payload: Value,
        expected_version: Option<u64>,
    ) -> Result<u64, StoreError> {
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(|e| StoreError::io(path, e))?;
        let scan = scan(id, &text)?;
        if scan.torn_tail {
            tracing::warn!(session = id, "truncating torn trailing event line");
            file.set_len(scan.valid_len).map_err(|e| StoreError::io(path, e))?;
        }
        let current = scan.records.len() as u64;
        if let Some(expected) = expected_version {
            if expected != current {
                return Err(StoreError::SequenceConflict { expected, actual: current });
            }
        }
        if kind == EventType::SessionCreated && current > 0 {
            return Err(StoreError::SequenceConflict { expected: 0, actual: current });
        }
        if kind != EventType::SessionCreated && current == 0 {
            return Err(StoreError::NotFound(format!("session {id}")));
        }
        let record = EventRecord { seq: current + 1, ts: Utc::now(), kind, payload };
        let mut line = encode_line(&record);
        line.push('\n');
        file.seek(SeekFrom::Start(scan.valid_len)).map_err(|e| StoreError::io(path, e))?;
        file.write_all(line.as_bytes()).map_err(|e| StoreError::io(path, e))?;
        file.sync_data().map_err(|e| StoreError::io(path, e))?;
        if current == 0 {
            if let Ok(d) = File::open(&self.dir) {
                let _ = d.sync_all();
            }
        }
        Ok(record.seq)
    }

    /// All committed events. A torn trailing line (crash mid-append) is
    /// ignored with a warning and removed by the next append.
    pub fn load(&self, id: &str) -> Result<Vec<EventRecord>, StoreError> {
        validate_session_id(id)?;
        let path = self.path_of(id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(format!("session {id}"))),
            Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                let bytes = fs::read(&path).map_err(|e| StoreError::io(&path, e))?;
                String::from_utf8_lossy(&bytes).into_owned()
            }
            Err(e) => return Err(StoreError::io(&path, e)),
        };
        let scan = scan(id, &text)?;
        if scan.torn_tail {
            tracing::warn!(session = id, "ignoring torn trailing event line");
        }
        if scan.records.is_empty() {
            return Err(StoreError::NotFound(format!("session {id}")));
        }
        Ok(scan.records)
    }

    /// Session ids with a log file, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = fs::read_dir(&self.dir)
            .map_err(|e| StoreError::io(&self.dir, e))?
            .flatten()
            .filter_map(|e| e.file_name().to_str()?.strip_suffix(".jsonl").map(str::to_owned))
            .filter(|id| validate_session_id(id).is_ok())
            .collect();
        ids.sort();
        Ok(ids)
    }
}
