//! The service state. Everything here is a pure fold over the command log;
//! maps are ordered so serialization and iteration are deterministic.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spms_core::{
    occupancy_summary, BillId, BillingRecord, ExtraService, GateId, LotConfig, LotId,
    OccupancySummary, ParkingLot, ParkingSession, Reservation, ReservationId, ReservationState,
    SessionId, SlotId, SlotState, Tariff, UnixSeconds, UserId,
};

use crate::config::Policy;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub user_id: UserId,
    pub name: String,
    pub email: String,
    pub phone: String,
    pub password_hash: String,
    pub created_at: UnixSeconds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub user_id: UserId,
    pub expires_at: UnixSeconds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResetRecord {
    pub user_id: UserId,
    pub expires_at: UnixSeconds,
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub notif_id: String,
    pub user_id: UserId,
    pub channel: String,
    pub body: String,
    pub created_at: UnixSeconds,
}

/// A sensor reading that contradicts the model, kept for operators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub ts: UnixSeconds,
    pub lot_id: LotId,
    pub slot_id: SlotId,
    pub state: SlotState,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotRecord {
    pub config: LotConfig,
    pub lot: ParkingLot,
    /// Last time each slot's sensor reported anything.
    pub last_reading: BTreeMap<SlotId, UnixSeconds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceState {
    pub policy: Policy,
    pub last_ts: UnixSeconds,
    pub users: BTreeMap<UserId, User>,
    pub email_index: BTreeMap<String, UserId>,
    /// Keyed by hex SHA-256 of the bearer token.
    pub tokens: BTreeMap<String, TokenRecord>,
    /// Keyed by hex SHA-256 of the reset code.
    pub resets: BTreeMap<String, ResetRecord>,
    pub lots: BTreeMap<LotId, LotRecord>,
    pub reservations: BTreeMap<ReservationId, Reservation>,
    /// ACTIVE or CHECKED_IN reservations.
    pub live_reservations: BTreeSet<ReservationId>,
    /// `user_id` + U+001F + idempotency key.
    pub idempotency: BTreeMap<String, ReservationId>,
    pub sessions: BTreeMap<SessionId, ParkingSession>,
    /// `lot_id/slot_id` of every slot with an open session.
    pub open_sessions: BTreeMap<String, SessionId>,
    pub bills: BTreeMap<BillId, BillingRecord>,
    pub bill_by_session: BTreeMap<SessionId, BillId>,
    pub notifications: Vec<Notification>,
    pub anomalies: Vec<Anomaly>,
    /// `lot_id/gate_id` of open gates and when to close them.
    pub gate_close_at: BTreeMap<String, UnixSeconds>,
    pub counters: Counters,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub users: u64,
    pub reservations: u64,
    pub sessions: u64,
    pub bills: u64,
    pub notifications: u64,
}

impl Default for ServiceState {
    fn default() -> Self {
        Self::new(Policy::default())
    }
}

pub fn slot_key(lot_id: &LotId, slot_id: &SlotId) -> String {
    format!("{lot_id}/{slot_id}")
}

pub fn gate_key(lot_id: &LotId, gate_id: &GateId) -> String {
    format!("{lot_id}/{gate_id}")
}

pub fn idempotency_key(user_id: &UserId, key: &str) -> String {
    format!("{user_id}\u{1f}{key}")
}

impl ServiceState {
    pub fn new(policy: Policy) -> Self {
        Self {
            policy,
            last_ts: 0,
            users: BTreeMap::new(),
            email_index: BTreeMap::new(),
            tokens: BTreeMap::new(),
            resets: BTreeMap::new(),
            lots: BTreeMap::new(),
            reservations: BTreeMap::new(),
            live_reservations: BTreeSet::new(),
            idempotency: BTreeMap::new(),
            sessions: BTreeMap::new(),
            open_sessions: BTreeMap::new(),
            bills: BTreeMap::new(),
            bill_by_session: BTreeMap::new(),
            notifications: Vec::new(),
            anomalies: Vec::new(),
            gate_close_at: BTreeMap::new(),
            counters: Counters::default(),
        }
    }

    /// Hex SHA-256 over the canonical JSON form (object keys sorted).
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("state serializes");
        let bytes = serde_json::to_vec(&value).expect("value serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn user_by_email(&self, email: &str) -> Option<&User> {
        self.email_index
            .get(&normalize_email(email))
            .and_then(|id| self.users.get(id))
    }

    pub fn tariff_for(&self, lot_id: &LotId) -> Option<&Tariff> {
        let lot = self.lots.get(lot_id)?;
        Some(self.policy.tariff.as_ref().unwrap_or(&lot.config.tariff))
    }

    /// The lot's catalog plus the global one; the lot wins on equal codes.
    pub fn extras_for(&self, lot_id: &LotId) -> Vec<ExtraService> {
        let mut out: BTreeMap<String, ExtraService> =
            self.policy.extras.iter().map(|e| (e.code.clone(), e.clone())).collect();
        if let Some(lot) = self.lots.get(lot_id) {
            for e in &lot.config.extras {
                out.insert(e.code.clone(), e.clone());
            }
        }
        out.into_values().collect()
    }

    pub fn occupancy(&self, lot_id: &LotId) -> Option<OccupancySummary> {
        self.lots.get(lot_id).map(|l| occupancy_summary(&l.lot))
    }

    pub fn slot_state(&self, lot_id: &LotId, slot_id: &SlotId) -> Option<SlotState> {
        self.lots.get(lot_id)?.lot.slot(slot_id).map(|s| s.state)
    }

    pub fn open_session_at(&self, lot_id: &LotId, slot_id: &SlotId) -> Option<&ParkingSession> {
        self.open_sessions
            .get(&slot_key(lot_id, slot_id))
            .and_then(|id| self.sessions.get(id))
    }

    pub fn live_reservations_for_slot<'a>(
        &'a self,
        lot_id: &'a LotId,
        slot_id: &'a SlotId,
    ) -> impl Iterator<Item = &'a Reservation> + 'a {
        self.live_reservations
            .iter()
            .filter_map(|id| self.reservations.get(id))
            .filter(move |r| &r.lot_id == lot_id && &r.slot_id == slot_id)
    }

    /// The ACTIVE booking whose window contains `now`, if any.
    pub fn current_booking<'a>(&'a self, lot_id: &'a LotId, slot_id: &'a SlotId, now: UnixSeconds) -> Option<&'a Reservation> {
        self.live_reservations_for_slot(lot_id, slot_id)
            .find(|r| r.state == ReservationState::Active && r.is_current(now))
    }

    /// The ACTIVE booking a car may check into right now, if any.
    pub fn due_booking<'a>(&'a self, lot_id: &'a LotId, slot_id: &'a SlotId, now: UnixSeconds) -> Option<&'a Reservation> {
        self.live_reservations_for_slot(lot_id, slot_id).find(|r| r.is_due(now))
    }

    /// Earliest live booking on the slot whose window has not ended.
    pub fn next_booking<'a>(&'a self, lot_id: &'a LotId, slot_id: &'a SlotId, now: UnixSeconds) -> Option<&'a Reservation> {
        self.live_reservations_for_slot(lot_id, slot_id)
            .filter(|r| r.window_end > now)
            .min_by_key(|r| (r.window_start, r.reservation_id.clone()))
    }

    /// Who a session's bill belongs to. Walk-in sessions have no owner.
    pub fn session_owner(&self, session: &ParkingSession) -> Option<&UserId> {
        session
            .reservation_id
            .as_ref()
            .and_then(|r| self.reservations.get(r))
            .map(|r| &r.user_id)
    }

    pub fn notifications_for<'a>(&'a self, user_id: &'a UserId) -> impl Iterator<Item = &'a Notification> + 'a {
        self.notifications.iter().filter(move |n| &n.user_id == user_id)
    }
}

pub fn normalize_email(email: &str) -> String {
    email.trim().to_lowercase()
}

/// Deliberately loose: one `@`, a non-empty local part, a dotted domain,
/// no whitespace.
pub fn email_is_valid(email: &str) -> bool {
    let email = email.trim();
    let Some((local, domain)) = email.split_once('@') else {
        return false;
    };
    !local.is_empty()
        && !domain.contains('@')
        && domain.contains('.')
        && !domain.starts_with('.')
        && !domain.ends_with('.')
        && !email.chars().any(char::is_whitespace)
        && email.len() <= 254
}
