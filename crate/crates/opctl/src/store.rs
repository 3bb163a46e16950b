//! Offline operations on a data directory: seeding, reports, replay.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use spms_core::LotConfig;
use spms_service::log::{self, read_log, read_snapshot, LOG_FILE, OUTBOX_FILE};
use spms_service::{auth, report, Command, Engine, EngineOptions, ServiceConfig, ServiceState, SystemClock};

use crate::error::OpError;
use crate::files::SeedUser;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedSummary {
    pub lots: usize,
    pub slots: usize,
    pub users: usize,
    pub last_seq: u64,
}

fn has_data(dir: &Path) -> Result<bool, OpError> {
    match fs::metadata(dir.join(LOG_FILE)) {
        Ok(m) => Ok(m.len() > 0),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(OpError::runtime(e)),
    }
}

/// Removes the log, outbox and snapshots, nothing else.
fn wipe(dir: &Path) -> Result<(), OpError> {
    let seqs = log::list_snapshots(dir).map_err(OpError::runtime)?;
    for seq in seqs {
        fs::remove_file(log::snapshot_path(dir, seq)).map_err(OpError::runtime)?;
    }
    for name in [LOG_FILE, OUTBOX_FILE] {
        match fs::remove_file(dir.join(name)) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(OpError::runtime(e)),
        }
    }
    Ok(())
}

/// Appends lot and user records to the log of `dir`, which must be empty
/// unless `force` is set, in which case it is cleared first.
pub fn seed(
    dir: &Path,
    cfg: &ServiceConfig,
    lots: &[LotConfig],
    users: &[SeedUser],
    force: bool,
) -> Result<SeedSummary, OpError> {
    if has_data(dir)? {
        if !force {
            return Err(OpError::RefuseOverwrite(dir.to_owned()));
        }
        wipe(dir)?;
    }
    let mut engine = Engine::open(dir, EngineOptions::from(cfg), Arc::new(SystemClock)).map_err(OpError::runtime)?;
    let mut submit = |cmd: Command| -> Result<(), OpError> {
        let what = cmd.kind();
        let c = engine.submit(cmd).map_err(OpError::runtime)?;
        c.applied.outcome.map(|_| ()).map_err(|e| OpError::Runtime(format!("{what}: {e}")))
    };
    for lot in lots {
        submit(Command::CreateLot { config: lot.clone() })?;
    }
    for u in users {
        if !auth::password_is_strong_enough(&u.password) {
            return Err(OpError::Config(format!("user {}: password too short", u.email)));
        }
        submit(Command::RegisterUser {
            name: u.name.clone(),
            email: u.email.clone(),
            phone: u.phone.clone(),
            password_hash: auth::hash_password(&u.password, cfg.password_rounds),
        })?;
    }
    Ok(SeedSummary {
        lots: lots.len(),
        slots: lots.iter().map(|l| l.slots.len()).sum(),
        users: users.len(),
        last_seq: engine.seq(),
    })
}

/// Reads the state of `dir` without writing anything.
pub fn load_state(dir: &Path, use_snapshots: bool) -> Result<(ServiceState, u64), OpError> {
    let rec = log::load(dir, ServiceState::default(), use_snapshots).map_err(OpError::runtime)?;
    Ok((rec.state, rec.last_seq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Occupancy,
    Billing,
}

pub fn report_text(state: &ServiceState, kind: ReportKind, csv: bool) -> String {
    match (kind, csv) {
        (ReportKind::Occupancy, false) => report::occupancy_text(state),
        (ReportKind::Occupancy, true) => report::to_csv(&report::OCCUPANCY_HEADER, &report::occupancy_rows(state)),
        (ReportKind::Billing, false) => report::billing_text(state),
        (ReportKind::Billing, true) => report::to_csv(&report::BILLING_HEADER, &report::billing_rows(state)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub seq: u64,
    pub digest: String,
}

/// Full replay of the log from the initial state. With `against`, also
/// checks that replaying up to the snapshot's seq reproduces it.
pub fn replay(dir: &Path, against: Option<&Path>) -> Result<ReplayOutcome, OpError> {
    let read = read_log(&dir.join(LOG_FILE)).map_err(OpError::runtime)?;
    let mut state = ServiceState::default();
    if let Some(path) = against {
        let snap = read_snapshot(path).map_err(OpError::runtime)?;
        let (head, _) = read.records.split_at(read.records.partition_point(|r| r.seq <= snap.seq));
        if head.last().map_or(0, |r| r.seq) != snap.seq {
            return Err(OpError::Runtime(format!("log does not reach snapshot seq {}", snap.seq)));
        }
        log::replay(&mut state, head).map_err(OpError::runtime)?;
        let digest = state.digest();
        if digest != snap.digest || snap.state.digest() != snap.digest {
            return Err(OpError::Runtime(format!(
                "replay diverges from snapshot at seq {}: {} != {}",
                snap.seq, digest, snap.digest
            )));
        }
        let rest: Vec<_> = read.records.iter().filter(|r| r.seq > snap.seq).cloned().collect();
        log::replay(&mut state, &rest).map_err(OpError::runtime)?;
    } else {
        log::replay(&mut state, &read.records).map_err(OpError::runtime)?;
    }
    Ok(ReplayOutcome { seq: read.records.last().map_or(0, |r| r.seq), digest: state.digest() })
}
