//! The single writer. Every command goes through [`Engine::submit`], which
//! applies it, appends the record durably and only then lets anything
//! outside see the result.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use spms_core::UnixSeconds;
use thiserror::Error;
use tracing::{info, warn};

use crate::apply::apply;
use crate::clock::Clock;
use crate::command::{Applied, Command, Event};
use crate::config::{Policy, ServiceConfig};
use crate::log::{io_err, recover, write_snapshot, LogError, LogRecord, LogWriter, LOG_FILE, OUTBOX_FILE};
use crate::state::ServiceState;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("writer stopped after a failed append; restart to recover")]
    Poisoned,
}

#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub snapshot_every: u64,
    pub sync_writes: bool,
    /// Use snapshots during recovery. Off means a full log replay.
    pub use_snapshots: bool,
    pub policy: Policy,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { snapshot_every: 1000, sync_writes: true, use_snapshots: true, policy: Policy::default() }
    }
}

impl From<&ServiceConfig> for EngineOptions {
    fn from(cfg: &ServiceConfig) -> Self {
        Self {
            snapshot_every: cfg.snapshot_every,
            sync_writes: cfg.sync_writes,
            use_snapshots: true,
            policy: cfg.policy.clone(),
        }
    }
}

/// A command that made it into the log.
#[derive(Debug, Clone, PartialEq)]
pub struct Committed {
    pub seq: u64,
    pub ts: UnixSeconds,
    pub applied: Applied,
}

pub struct Engine {
    dir: PathBuf,
    state: Arc<RwLock<ServiceState>>,
    writer: LogWriter,
    outbox: File,
    seq: u64,
    snapshot_every: u64,
    clock: Arc<dyn Clock>,
    poisoned: bool,
}

impl Engine {
    /// Recovers whatever `dir` holds and logs a policy change if the
    /// configured policy differs from the recovered one.
    pub fn open(dir: &Path, opts: EngineOptions, clock: Arc<dyn Clock>) -> Result<Self, EngineError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let rec = recover(dir, ServiceState::default(), opts.use_snapshots)?;
        info!(
            last_seq = rec.last_seq,
            from_snapshot = ?rec.from_snapshot,
            torn_tail = rec.torn_tail,
            "recovered service state"
        );
        let outbox = rewrite_outbox(dir, &rec.state)?;
        let mut engine = Self {
            dir: dir.to_owned(),
            writer: LogWriter::open(&dir.join(LOG_FILE), opts.sync_writes)?,
            state: Arc::new(RwLock::new(rec.state)),
            outbox,
            seq: rec.last_seq,
            snapshot_every: opts.snapshot_every.max(1),
            clock,
            poisoned: false,
        };
        if engine.state.read().policy != opts.policy {
            engine.submit(Command::SetPolicy { policy: opts.policy })?;
        }
        Ok(engine)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Shared, read-only view for queries.
    pub fn state(&self) -> Arc<RwLock<ServiceState>> {
        self.state.clone()
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        self.clock.clone()
    }

    pub fn submit(&mut self, cmd: Command) -> Result<Committed, EngineError> {
        if self.poisoned {
            return Err(EngineError::Poisoned);
        }
        // The write lock is held until the record is durable, so readers
        // never see state the log does not have yet.
        let mut state = self.state.write();
        let ts = state.last_ts.max(self.clock.now());
        let applied = apply(&mut state, &cmd, ts);
        let seq = self.seq + 1;
        let record = LogRecord::new(seq, ts, &cmd, &applied);
        if let Err(e) = self.writer.append(&record) {
            self.poisoned = true;
            return Err(e.into());
        }
        self.seq = seq;
        for ev in &applied.events {
            if let Event::Notified { notif_id, .. } = ev {
                if let Some(n) = state.notifications.iter().rev().find(|n| &n.notif_id == notif_id) {
                    let line = serde_json::to_string(n).expect("notification serializes");
                    if let Err(e) = writeln!(self.outbox, "{line}") {
                        warn!("outbox write failed: {e}");
                    }
                }
            }
        }
        if seq.is_multiple_of(self.snapshot_every) {
            if let Err(e) = write_snapshot(&self.dir, seq, &state) {
                warn!("snapshot at seq {seq} failed: {e}");
            }
        }
        Ok(Committed { seq, ts, applied })
    }
}

/// The outbox is derived from state, so it is rebuilt on start rather
/// than trusted.
fn rewrite_outbox(dir: &Path, state: &ServiceState) -> Result<File, LogError> {
    let path = dir.join(OUTBOX_FILE);
    let mut text = String::new();
    for n in &state.notifications {
        text.push_str(&serde_json::to_string(n).expect("notification serializes"));
        text.push('\n');
    }
    fs::write(&path, text).map_err(io_err(&path))?;
    OpenOptions::new().append(true).open(&path).map_err(io_err(&path))
}
