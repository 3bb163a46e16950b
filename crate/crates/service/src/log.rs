//! Append-only command log and state snapshots.
//!
//! One JSON record per line:
//! `{"seq":7,"ts":1700000000,"crc32":"1a2b3c4d","kind":"sensor_event","payload":{...}}`.
//! The checksum covers `seq|ts|kind|payload`, with the payload in its
//! canonical form (keys sorted, no whitespace).

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use spms_core::UnixSeconds;
use thiserror::Error;
use tracing::warn;

use crate::command::{Applied, Command};
use crate::state::ServiceState;

pub const LOG_FILE: &str = "events.log";
pub const OUTBOX_FILE: &str = "outbox.jsonl";
const SNAPSHOT_PREFIX: &str = "snapshot-";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("replay diverged at seq {seq}")]
    ReplayDivergence { seq: u64 },
    #[error("bad snapshot {path}: {reason}")]
    BadSnapshot { path: String, reason: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub ts: UnixSeconds,
    pub crc32: String,
    pub kind: String,
    pub payload: Value,
}

/// What a record's payload holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordBody {
    pub command: Command,
    #[serde(flatten)]
    pub applied: Applied,
}

fn checksum(seq: u64, ts: UnixSeconds, kind: &str, payload: &Value) -> String {
    let canonical = serde_json::to_string(payload).expect("value serializes");
    let mut h = crc32fast::Hasher::new();
    h.update(format!("{seq}|{ts}|{kind}|").as_bytes());
    h.update(canonical.as_bytes());
    format!("{:08x}", h.finalize())
}

impl LogRecord {
    pub fn new(seq: u64, ts: UnixSeconds, command: &Command, applied: &Applied) -> Self {
        let kind = command.kind().to_owned();
        let body = RecordBody { command: command.clone(), applied: applied.clone() };
        // Through Value so object keys come out sorted.
        let payload = serde_json::to_value(&body).expect("record body serializes");
        let crc32 = checksum(seq, ts, &kind, &payload);
        Self { seq, ts, crc32, kind, payload }
    }

    pub fn checksum_ok(&self) -> bool {
        checksum(self.seq, self.ts, &self.kind, &self.payload) == self.crc32
    }

    pub fn body(&self) -> Result<RecordBody, serde_json::Error> {
        serde_json::from_value(self.payload.clone())
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("record serializes");
        line.push('\n');
        line
    }
}

pub struct LogWriter {
    file: File,
    path: PathBuf,
    sync: bool,
}

impl LogWriter {
    pub fn open(path: &Path, sync: bool) -> Result<Self, LogError> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        Ok(Self { file, path: path.to_owned(), sync })
    }

    /// Returns once the record is written (and synced, if configured).
    pub fn append(&mut self, record: &LogRecord) -> Result<(), LogError> {
        self.file.write_all(record.to_line().as_bytes()).map_err(io_err(&self.path))?;
        if self.sync {
            self.file.sync_data().map_err(io_err(&self.path))?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct ReadLog {
    pub records: Vec<LogRecord>,
    /// Byte length of the valid prefix; anything after it is a torn write.
    pub valid_len: u64,
    pub torn_tail: bool,
}

/// Reads and checks a log. A damaged final line is a torn write and is
/// reported, not fatal. Damage anywhere else is `CorruptLog`.
pub fn read_log(path: &Path) -> Result<ReadLog, LogError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ReadLog::default()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = ReadLog::default();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        let expected = out.records.last().map_or(1, |r| r.seq + 1);
        let complete = buf.ends_with(b"\n");
        let parsed = std::str::from_utf8(&buf)
            .ok()
            .and_then(|s| serde_json::from_str::<LogRecord>(s.trim_end()).ok())
            .filter(|r| r.checksum_ok());
        match parsed {
            Some(r) if complete && r.seq == expected => {
                out.valid_len += n as u64;
                out.records.push(r);
            }
            Some(r) if complete => {
                return Err(LogError::CorruptLog {
                    seq: expected,
                    reason: format!("expected seq {expected}, found {}", r.seq),
                })
            }
            _ => {
                // Only a damaged last line is tolerated.
                let mut rest = Vec::new();
                std::io::Read::read_to_end(&mut reader, &mut rest).map_err(io_err(path))?;
                if rest.iter().all(u8::is_ascii_whitespace) {
                    out.torn_tail = true;
                    break;
                }
                return Err(LogError::CorruptLog { seq: expected, reason: "bad checksum or unparseable record".into() });
            }
        }
    }
    Ok(out)
}

/// Cuts a torn tail off so new appends start on a clean line.
pub fn truncate_log(path: &Path, valid_len: u64) -> Result<(), LogError> {
    let file = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    file.set_len(valid_len).map_err(io_err(path))?;
    file.sync_all().map_err(io_err(path))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub digest: String,
    pub state: ServiceState,
}

pub fn snapshot_path(dir: &Path, seq: u64) -> PathBuf {
    dir.join(format!("{SNAPSHOT_PREFIX}{seq}"))
}

pub fn write_snapshot(dir: &Path, seq: u64, state: &ServiceState) -> Result<PathBuf, LogError> {
    let snap = Snapshot { seq, digest: state.digest(), state: state.clone() };
    let path = snapshot_path(dir, seq);
    let tmp = path.with_extension("tmp");
    let bytes = serde_json::to_vec(&snap).expect("snapshot serializes");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    File::open(&tmp).and_then(|f| f.sync_all()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(path)
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, LogError> {
    let bad = |reason: String| LogError::BadSnapshot { path: path.display().to_string(), reason };
    let bytes = fs::read(path).map_err(io_err(path))?;
    let snap: Snapshot = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
    if snap.state.digest() != snap.digest {
        return Err(bad("digest mismatch".into()));
    }
    Ok(snap)
}

/// Snapshot sequence numbers present in `dir`, ascending.
pub fn list_snapshots(dir: &Path) -> Result<Vec<u64>, LogError> {
    let mut seqs = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(seqs),
        Err(e) => return Err(io_err(dir)(e)),
    };
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        if let Some(seq) = name.to_str().and_then(|n| n.strip_prefix(SNAPSHOT_PREFIX)).and_then(|s| s.parse().ok()) {
            seqs.push(seq);
        }
    }
    seqs.sort_unstable();
    Ok(seqs)
}

/// Re-applies records on top of `state`, checking each against what the
/// live process recorded.
pub fn replay(state: &mut ServiceState, records: &[LogRecord]) -> Result<(), LogError> {
    for r in records {
        let body = r.body().map_err(|e| LogError::CorruptLog { seq: r.seq, reason: e.to_string() })?;
        let applied = crate::apply::apply(state, &body.command, r.ts);
        if applied != body.applied {
            return Err(LogError::ReplayDivergence { seq: r.seq });
        }
    }
    Ok(())
}

/// Newest readable snapshot at or below `max_seq`; damaged ones are
/// skipped with a warning.
pub fn latest_snapshot(dir: &Path, max_seq: u64) -> Result<Option<Snapshot>, LogError> {
    for seq in list_snapshots(dir)?.into_iter().rev().filter(|&s| s <= max_seq) {
        match read_snapshot(&snapshot_path(dir, seq)) {
            Ok(s) if s.seq == seq => return Ok(Some(s)),
            Ok(_) => warn!(seq, "snapshot seq does not match its file name; skipped"),
            Err(e) => warn!("{e}; skipped"),
        }
    }
    Ok(None)
}

#[derive(Debug)]
pub struct Recovered {
    pub state: ServiceState,
    pub last_seq: u64,
    pub from_snapshot: Option<u64>,
    pub torn_tail: bool,
}

/// Rebuilds state from `dir`: latest good snapshot plus the log after it.
/// A torn final record is cut off the file.
pub fn recover(dir: &Path, initial: ServiceState, use_snapshots: bool) -> Result<Recovered, LogError> {
    let log_path = dir.join(LOG_FILE);
    let read = read_log(&log_path)?;
    if read.torn_tail {
        warn!(valid_len = read.valid_len, "torn final log record dropped");
        truncate_log(&log_path, read.valid_len)?;
    }
    rebuild(dir, read, initial, use_snapshots)
}

/// Like [`recover`] but never writes; a torn tail is only ignored.
pub fn load(dir: &Path, initial: ServiceState, use_snapshots: bool) -> Result<Recovered, LogError> {
    let read = read_log(&dir.join(LOG_FILE))?;
    rebuild(dir, read, initial, use_snapshots)
}

fn rebuild(dir: &Path, read: ReadLog, initial: ServiceState, use_snapshots: bool) -> Result<Recovered, LogError> {
    let last_seq = read.records.last().map_or(0, |r| r.seq);
    let snap = if use_snapshots { latest_snapshot(dir, last_seq)? } else { None };
    let (mut state, from_snapshot) = match snap {
        Some(s) => (s.state, Some(s.seq)),
        None => (initial, None),
    };
    let start = from_snapshot.unwrap_or(0);
    let tail: Vec<LogRecord> = read.records.into_iter().filter(|r| r.seq > start).collect();
    replay(&mut state, &tail)?;
    Ok(Recovered { state, last_seq, from_snapshot, torn_tail: read.torn_tail })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apply::apply;

    fn rec(seq: u64, state: &mut ServiceState) -> LogRecord {
        let cmd = Command::TimerTick;
        let applied = apply(state, &cmd, 100 + seq as i64);
        LogRecord::new(seq, 100 + seq as i64, &cmd, &applied)
    }

    #[test]
    fn checksum_covers_fields() {
        let mut s = ServiceState::default();
        let r = rec(1, &mut s);
        assert!(r.checksum_ok());
        let reparsed: LogRecord = serde_json::from_str(r.to_line().trim_end()).unwrap();
        assert!(reparsed.checksum_ok());
        let mut bad = r.clone();
        bad.ts += 1;
        assert!(!bad.checksum_ok());
        let mut bad = r;
        bad.kind = "login".into();
        assert!(!bad.checksum_ok());
    }

    #[test]
    fn torn_tail_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        let mut s = ServiceState::default();
        let lines: Vec<String> = (1..=3).map(|i| rec(i, &mut s).to_line()).collect();

        fs::write(&path, format!("{}{}{}", lines[0], lines[1], &lines[2][..20])).unwrap();
        let read = read_log(&path).unwrap();
        assert_eq!(read.records.len(), 2);
        assert!(read.torn_tail);
        assert_eq!(read.valid_len as usize, lines[0].len() + lines[1].len());

        let flipped = lines[1].replacen("timer_tick", "timer_tack", 1);
        fs::write(&path, format!("{}{}{}", lines[0], flipped, lines[2])).unwrap();
        assert!(matches!(read_log(&path), Err(LogError::CorruptLog { seq: 2, .. })));

        fs::write(&path, format!("{}{}", lines[0], lines[2])).unwrap();
        assert!(matches!(read_log(&path), Err(LogError::CorruptLog { seq: 2, .. })));

        fs::write(&path, "").unwrap();
        assert!(read_log(&path).unwrap().records.is_empty());
    }
}
