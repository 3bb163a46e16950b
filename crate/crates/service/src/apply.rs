//! The single state-transition function. `apply` is total and
//! deterministic: the same state, command and time always give the same
//! result, which is what makes replay work.

use sha2::{Digest, Sha256};
use spms_core::{
    reservation_transition, slot_transition, validate_booking_request, BillId, BillingRecord,
    DomainError, GateKind, LotId, ParkingSession, Reservation, ReservationEvent, ReservationId,
    ReservationState, SessionId, SlotEvent, SlotId, SlotState, UnixSeconds, UserId,
};

use crate::command::{Applied, Command, Event, Reply};
use crate::error::ServiceError;
use crate::state::{
    email_is_valid, gate_key, idempotency_key, normalize_email, slot_key, Anomaly, LotRecord,
    Notification, ResetRecord, ServiceState, TokenRecord, User,
};

pub const GATE_OPEN_PULSE: u32 = 2000;
pub const GATE_CLOSED_PULSE: u32 = 1000;
pub const DISPLAY_MAX_CHARS: usize = 32;

pub fn code_digest(code: &str) -> String {
    hex::encode(Sha256::digest(code.as_bytes()))
}

pub fn apply(state: &mut ServiceState, cmd: &Command, ts: UnixSeconds) -> Applied {
    state.last_ts = state.last_ts.max(ts);
    let mut cx = Cx { s: state, ts, events: Vec::new() };
    cx.claim_current_bookings();
    let outcome = cx.dispatch(cmd);
    cx.claim_current_bookings();
    Applied { outcome, events: cx.events }
}

struct Cx<'a> {
    s: &'a mut ServiceState,
    ts: UnixSeconds,
    events: Vec<Event>,
}

type Outcome = Result<Reply, ServiceError>;

impl Cx<'_> {
    fn dispatch(&mut self, cmd: &Command) -> Outcome {
        match cmd {
            Command::SetPolicy { policy } => {
                self.s.policy = policy.clone();
                Ok(Reply::Done)
            }
            Command::CreateLot { config } => self.create_lot(config),
            Command::RegisterUser { name, email, phone, password_hash } => {
                self.register(name, email, phone, password_hash)
            }
            Command::Login { user_id, password_hash, token_digest } => {
                self.login(user_id, password_hash, token_digest)
            }
            Command::ResetPassword { email, code } => self.reset_password(email, code),
            Command::RedeemReset { code, new_password_hash } => self.redeem(code, new_password_hash),
            Command::CreateReservation {
                user_id,
                lot_id,
                slot_id,
                window_start,
                window_end,
                eta,
                idempotency_key,
            } => self.create_reservation(
                user_id,
                lot_id,
                slot_id.as_ref(),
                (*window_start, *window_end),
                *eta,
                idempotency_key.as_deref(),
            ),
            Command::CancelReservation { user_id, reservation_id } => self.cancel(user_id, reservation_id),
            Command::SensorEvent { topic, payload } => {
                self.sensor(topic, payload);
                Ok(Reply::Done)
            }
            Command::TimerTick => {
                self.tick();
                Ok(Reply::Done)
            }
            Command::OperatorFault { lot_id, slot_id } => self.fault(lot_id, slot_id),
            Command::OperatorRestore { lot_id, slot_id } => {
                self.require_slot(lot_id, slot_id)?;
                self.set_slot(lot_id, slot_id, SlotEvent::Restore)?;
                Ok(Reply::Done)
            }
            Command::AddExtra { user_id, session_id, code } => self.add_extra(user_id, session_id, code),
            Command::CloseSession { session_id } => self.operator_close(session_id),
        }
    }

    // ---- helpers -------------------------------------------------------

    fn next_id(counter: &mut u64, prefix: &str) -> String {
        *counter += 1;
        format!("{prefix}-{counter}")
    }

    fn require_slot(&self, lot_id: &LotId, slot_id: &SlotId) -> Result<SlotState, ServiceError> {
        let lot = self.s.lots.get(lot_id).ok_or_else(|| ServiceError::UnknownLot(lot_id.to_string()))?;
        lot.lot
            .slot(slot_id)
            .map(|s| s.state)
            .ok_or_else(|| ServiceError::UnknownSlot(slot_id.to_string()))
    }

    fn set_slot(&mut self, lot_id: &LotId, slot_id: &SlotId, event: SlotEvent) -> Result<SlotState, DomainError> {
        let slot = self
            .s
            .lots
            .get_mut(lot_id)
            .and_then(|l| l.lot.slot_mut(slot_id))
            .expect("caller checked the slot exists");
        let from = slot.state;
        let to = slot_transition(from, event)?;
        slot.state = to;
        if from != to {
            self.events.push(Event::SlotChanged { lot_id: lot_id.clone(), slot_id: slot_id.clone(), from, to });
        }
        Ok(to)
    }

    fn move_reservation(&mut self, id: &ReservationId, event: ReservationEvent) -> Result<Reservation, DomainError> {
        let current = self.s.reservations.get(id).expect("caller checked the reservation exists");
        let next = reservation_transition(current, event, self.ts)?;
        let from = current.state;
        if next.state != from {
            self.events.push(Event::ReservationChanged {
                reservation_id: id.clone(),
                from: Some(from),
                to: next.state,
            });
        }
        if !next.state.is_live() {
            self.s.live_reservations.remove(id);
        }
        self.s.reservations.insert(id.clone(), next.clone());
        Ok(next)
    }

    fn notify(&mut self, user_id: &UserId, body: String) {
        let notif_id = Self::next_id(&mut self.s.counters.notifications, "n");
        self.events.push(Event::Notified { notif_id: notif_id.clone(), user_id: user_id.clone() });
        self.s.notifications.push(Notification {
            notif_id,
            user_id: user_id.clone(),
            channel: "sms-sim".into(),
            body,
            created_at: self.ts,
        });
    }

    fn ignore(&mut self, reason: String) {
        self.events.push(Event::Ignored { reason });
    }

    /// A FREE slot whose booking window is running becomes RESERVED.
    fn claim_current_bookings(&mut self) {
        let ts = self.ts;
        let due: Vec<(LotId, SlotId)> = self
            .s
            .live_reservations
            .iter()
            .filter_map(|id| self.s.reservations.get(id))
            .filter(|r| r.is_due(ts) && r.is_current(ts))
            .filter(|r| self.s.slot_state(&r.lot_id, &r.slot_id) == Some(SlotState::Free))
            .map(|r| (r.lot_id.clone(), r.slot_id.clone()))
            .collect();
        for (lot, slot) in due {
            self.set_slot(&lot, &slot, SlotEvent::Reserve).expect("FREE accepts Reserve");
        }
    }

    /// Frees a RESERVED slot unless some other booking still holds it.
    fn release_if_unheld(&mut self, lot_id: &LotId, slot_id: &SlotId) {
        if self.s.slot_state(lot_id, slot_id) != Some(SlotState::Reserved) {
            return;
        }
        let ts = self.ts;
        let held = self
            .s
            .live_reservations_for_slot(lot_id, slot_id)
            .any(|r| r.is_due(ts) && r.is_current(ts));
        if !held {
            self.set_slot(lot_id, slot_id, SlotEvent::ReleaseReservation).expect("RESERVED accepts Release");
        }
    }

    /// Ends a session and bills it. The reservation behind it, if any,
    /// completes.
    fn close_session(&mut self, session_id: &SessionId) -> Result<BillingRecord, ServiceError> {
        let session = self
            .s
            .sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))?;
        let tariff = self.s.tariff_for(&session.lot_id).cloned().expect("session lot exists");
        let bill_id = BillId::new(format!("b-{}", self.s.counters.bills + 1));
        let (closed, bill) = session.close(self.ts, &tariff, bill_id.clone())?;
        self.s.counters.bills += 1;
        self.s.open_sessions.remove(&slot_key(&closed.lot_id, &closed.slot_id));
        self.s.sessions.insert(session_id.clone(), closed.clone());
        self.s.bills.insert(bill_id.clone(), bill.clone());
        self.s.bill_by_session.insert(session_id.clone(), bill_id.clone());
        self.events.push(Event::SessionClosed {
            session_id: session_id.clone(),
            bill_id: bill_id.clone(),
            total_minor: bill.total_minor,
        });
        if let Some(rid) = &closed.reservation_id {
            if self.s.reservations.get(rid).map(|r| r.state) == Some(ReservationState::CheckedIn) {
                let res = self.move_reservation(rid, ReservationEvent::CheckOut)?;
                self.notify(
                    &res.user_id,
                    format!("Bill {bill_id}: {} minutes, total {} {}", bill.duration_minutes, bill.total_minor, bill.currency_code),
                );
            }
        }
        Ok(bill)
    }

    fn open_session(&mut self, lot_id: &LotId, slot_id: &SlotId, reservation_id: Option<ReservationId>) {
        let session_id = SessionId::new(Self::next_id(&mut self.s.counters.sessions, "s"));
        let session = ParkingSession::open(session_id.clone(), lot_id.clone(), slot_id.clone(), reservation_id.clone(), self.ts);
        self.s.open_sessions.insert(slot_key(lot_id, slot_id), session_id.clone());
        self.s.sessions.insert(session_id.clone(), session);
        self.events.push(Event::SessionOpened {
            session_id,
            lot_id: lot_id.clone(),
            slot_id: slot_id.clone(),
            reservation_id,
        });
    }

    // ---- lots and accounts ---------------------------------------------

    fn create_lot(&mut self, config: &spms_core::LotConfig) -> Outcome {
        if self.s.lots.contains_key(&config.lot_id) {
            return Err(ServiceError::LotExists(config.lot_id.to_string()));
        }
        let lot = config.to_lot().map_err(|e| ServiceError::InvalidLot(e.to_string()))?;
        self.s.lots.insert(
            config.lot_id.clone(),
            LotRecord { config: config.clone(), lot, last_reading: Default::default() },
        );
        Ok(Reply::Done)
    }

    fn register(&mut self, name: &str, email: &str, phone: &str, password_hash: &str) -> Outcome {
        if !email_is_valid(email) {
            return Err(ServiceError::InvalidEmail);
        }
        let email = normalize_email(email);
        if self.s.email_index.contains_key(&email) {
            return Err(ServiceError::DuplicateEmail);
        }
        let user_id = UserId::new(Self::next_id(&mut self.s.counters.users, "u"));
        let user = User {
            user_id: user_id.clone(),
            name: name.trim().to_owned(),
            email: email.clone(),
            phone: phone.trim().to_owned(),
            password_hash: password_hash.to_owned(),
            created_at: self.ts,
        };
        self.s.email_index.insert(email, user_id.clone());
        self.s.users.insert(user_id, user.clone());
        Ok(Reply::User { user })
    }

    fn login(&mut self, user_id: &UserId, password_hash: &str, token_digest: &str) -> Outcome {
        match self.s.users.get(user_id) {
            Some(u) if u.password_hash == password_hash => {}
            _ => return Err(ServiceError::InvalidCredentials),
        }
        let ts = self.ts;
        self.s.tokens.retain(|_, t| t.expires_at > ts);
        let expires_at = ts + self.s.policy.token_ttl_s();
        self.s
            .tokens
            .insert(token_digest.to_owned(), TokenRecord { user_id: user_id.clone(), expires_at });
        Ok(Reply::Token { user_id: user_id.clone(), expires_at })
    }

    fn reset_password(&mut self, email: &str, code: &str) -> Outcome {
        let Some(user_id) = self.s.user_by_email(email).map(|u| u.user_id.clone()) else {
            return Ok(Reply::Done);
        };
        let ttl = self.s.policy.reset_ttl_s();
        self.s.resets.insert(
            code_digest(code),
            ResetRecord { user_id: user_id.clone(), expires_at: self.ts + ttl, used: false },
        );
        self.notify(
            &user_id,
            format!("Password reset code {code}, valid {} minutes", self.s.policy.reset_ttl_minutes),
        );
        Ok(Reply::Done)
    }

    fn redeem(&mut self, code: &str, new_password_hash: &str) -> Outcome {
        let digest = code_digest(code);
        let record = self.s.resets.get(&digest).ok_or(ServiceError::InvalidResetCode)?;
        if record.used {
            return Err(ServiceError::CodeAlreadyUsed);
        }
        if self.ts > record.expires_at {
            return Err(ServiceError::CodeExpired);
        }
        let user_id = record.user_id.clone();
        self.s.resets.get_mut(&digest).expect("present").used = true;
        if let Some(u) = self.s.users.get_mut(&user_id) {
            u.password_hash = new_password_hash.to_owned();
        }
        self.s.tokens.retain(|_, t| t.user_id != user_id);
        Ok(Reply::Done)
    }

    // ---- reservations --------------------------------------------------

    fn slot_bookable(&self, lot_id: &LotId, slot_id: &SlotId, state: SlotState, start: UnixSeconds, end: UnixSeconds) -> bool {
        if state == SlotState::OutOfService {
            return false;
        }
        if start <= self.ts && state != SlotState::Free {
            return false;
        }
        !self
            .s
            .live_reservations_for_slot(lot_id, slot_id)
            .any(|r| r.overlaps(start, end))
    }

    fn create_reservation(
        &mut self,
        user_id: &UserId,
        lot_id: &LotId,
        slot_id: Option<&SlotId>,
        (start, end): (UnixSeconds, UnixSeconds),
        eta: Option<UnixSeconds>,
        key: Option<&str>,
    ) -> Outcome {
        if !self.s.users.contains_key(user_id) {
            return Err(ServiceError::Unauthorized);
        }
        if let Some(existing) = key.and_then(|k| self.s.idempotency.get(&idempotency_key(user_id, k))) {
            let reservation = self.s.reservations[existing].clone();
            return Ok(Reply::Reservation { reservation, replayed: true });
        }
        let lot = self.s.lots.get(lot_id).ok_or_else(|| ServiceError::UnknownLot(lot_id.to_string()))?;
        validate_booking_request(start, end, self.ts - self.s.policy.booking_grace_s)?;

        let chosen = match slot_id {
            Some(wanted) => {
                let slot = lot.lot.slot(wanted).ok_or_else(|| ServiceError::UnknownSlot(wanted.to_string()))?;
                if !self.slot_bookable(lot_id, wanted, slot.state, start, end) {
                    return Err(ServiceError::SlotUnavailable);
                }
                wanted.clone()
            }
            None => lot
                .lot
                .slots
                .iter()
                .find(|s| self.slot_bookable(lot_id, &s.slot_id, s.state, start, end))
                .map(|s| s.slot_id.clone())
                .ok_or(ServiceError::NoSlotFree)?,
        };

        let reservation_id = ReservationId::new(Self::next_id(&mut self.s.counters.reservations, "r"));
        let reservation = Reservation {
            reservation_id: reservation_id.clone(),
            user_id: user_id.clone(),
            lot_id: lot_id.clone(),
            slot_id: chosen.clone(),
            window_start: start,
            window_end: end,
            state: ReservationState::Active,
            created_at: self.ts,
            hold_deadline: start + self.s.policy.hold_window_s(),
            eta,
        };
        self.s.reservations.insert(reservation_id.clone(), reservation.clone());
        self.s.live_reservations.insert(reservation_id.clone());
        if let Some(k) = key {
            self.s.idempotency.insert(idempotency_key(user_id, k), reservation_id.clone());
        }
        self.events.push(Event::ReservationChanged {
            reservation_id: reservation_id.clone(),
            from: None,
            to: ReservationState::Active,
        });
        self.notify(
            user_id,
            format!("Booking {reservation_id} confirmed: lot {lot_id} slot {chosen}, {start} to {end}"),
        );
        Ok(Reply::Reservation { reservation, replayed: false })
    }

    fn cancel(&mut self, user_id: &UserId, reservation_id: &ReservationId) -> Outcome {
        let res = self
            .s
            .reservations
            .get(reservation_id)
            .ok_or_else(|| ServiceError::UnknownReservation(reservation_id.to_string()))?;
        if &res.user_id != user_id {
            return Err(ServiceError::NotOwner);
        }
        let reservation = self.move_reservation(reservation_id, ReservationEvent::Cancel)?;
        self.release_if_unheld(&reservation.lot_id, &reservation.slot_id);
        Ok(Reply::Reservation { reservation, replayed: false })
    }

    // ---- telemetry -----------------------------------------------------

    fn sensor(&mut self, topic: &str, payload: &str) {
        let levels: Vec<&str> = topic.split('/').collect();
        match levels.as_slice() {
            ["lot", lot, "slot", slot, "ir"] => self.ir(&LotId::new(*lot), &SlotId::new(*slot), payload),
            ["lot", lot, "gate", gate, "piezo"] => self.piezo(&LotId::new(*lot), gate, payload),
            _ => self.ignore(format!("unknown topic {topic}")),
        }
    }

    fn ir(&mut self, lot_id: &LotId, slot_id: &SlotId, payload: &str) {
        let state = match self.require_slot(lot_id, slot_id) {
            Ok(s) => s,
            Err(e) => return self.ignore(e.to_string()),
        };
        let obstacle = match payload {
            "0" => true,
            "1" => false,
            other => return self.ignore(format!("malformed ir payload {other:?}")),
        };
        let ts = self.ts;
        if let Some(lot) = self.s.lots.get_mut(lot_id) {
            lot.last_reading.insert(slot_id.clone(), ts);
        }
        match (state, obstacle) {
            (SlotState::OutOfService, _) => {
                self.events.push(Event::Anomaly {
                    lot_id: lot_id.clone(),
                    slot_id: slot_id.clone(),
                    state,
                    payload: payload.to_owned(),
                });
                self.s.anomalies.push(Anomaly {
                    ts,
                    lot_id: lot_id.clone(),
                    slot_id: slot_id.clone(),
                    state,
                    payload: payload.to_owned(),
                });
            }
            (SlotState::Free | SlotState::Reserved, true) => {
                let due = self.s.due_booking(lot_id, slot_id, ts).map(|r| r.reservation_id.clone());
                if let Some(rid) = &due {
                    self.move_reservation(rid, ReservationEvent::CheckIn).expect("due booking accepts CheckIn");
                }
                self.set_slot(lot_id, slot_id, SlotEvent::SensorOccupied).expect("accepts SensorOccupied");
                self.open_session(lot_id, slot_id, due);
            }
            (SlotState::Occupied, false) => {
                if let Some(sid) = self.s.open_sessions.get(&slot_key(lot_id, slot_id)).cloned() {
                    self.close_session(&sid).expect("open session closes");
                }
                self.set_slot(lot_id, slot_id, SlotEvent::SensorVacated).expect("OCCUPIED accepts SensorVacated");
            }
            // Repeats and heartbeats that agree with the model.
            (SlotState::Occupied, true) | (SlotState::Free | SlotState::Reserved, false) => {}
        }
    }

    fn piezo(&mut self, lot_id: &LotId, gate: &str, payload: &str) {
        let Some(lot) = self.s.lots.get(lot_id) else {
            return self.ignore(format!("unknown lot {lot_id}"));
        };
        let Some(gate) = lot.config.gates.iter().find(|g| g.gate_id.as_str() == gate).cloned() else {
            return self.ignore(format!("unknown gate {lot_id}/{gate}"));
        };
        if payload != "1" {
            return self.ignore(format!("malformed piezo payload {payload:?}"));
        }
        let summary = spms_core::occupancy_summary(&lot.lot);
        let open = match gate.kind {
            GateKind::Entry => {
                let room = summary.free + summary.reserved > 0;
                let text = if room {
                    format!("WELCOME FREE {}/{}", summary.free, summary.total)
                } else {
                    "LOT FULL".to_owned()
                };
                self.events.push(Event::Display { lot_id: lot_id.clone(), text: fit_display(&text) });
                room
            }
            GateKind::Exit => true,
        };
        if open {
            self.events.push(Event::GateCommand {
                lot_id: lot_id.clone(),
                gate_id: gate.gate_id.clone(),
                pulse_us: GATE_OPEN_PULSE,
            });
            let close_at = self.ts + self.s.policy.gate_open_s();
            self.s.gate_close_at.insert(gate_key(lot_id, &gate.gate_id), close_at);
        }
    }

    fn tick(&mut self) {
        let ts = self.ts;
        let overdue: Vec<ReservationId> = self
            .s
            .live_reservations
            .iter()
            .filter_map(|id| self.s.reservations.get(id))
            .filter(|r| r.state == ReservationState::Active && ts > r.hold_deadline)
            .map(|r| r.reservation_id.clone())
            .collect();
        for id in overdue {
            let res = self.move_reservation(&id, ReservationEvent::Tick).expect("ACTIVE accepts Tick");
            self.release_if_unheld(&res.lot_id, &res.slot_id);
        }

        let closing: Vec<String> = self
            .s
            .gate_close_at
            .iter()
            .filter(|(_, &at)| at <= ts)
            .map(|(k, _)| k.clone())
            .collect();
        for key in closing {
            self.s.gate_close_at.remove(&key);
            let (lot, gate) = key.split_once('/').expect("gate keys are lot/gate");
            self.events.push(Event::GateCommand {
                lot_id: LotId::new(lot),
                gate_id: gate.into(),
                pulse_us: GATE_CLOSED_PULSE,
            });
        }
    }

    // ---- operator and sessions -------------------------------------------

    fn fault(&mut self, lot_id: &LotId, slot_id: &SlotId) -> Outcome {
        let state = self.require_slot(lot_id, slot_id)?;
        slot_transition(state, SlotEvent::Fault)?;
        if let Some(sid) = self.s.open_sessions.get(&slot_key(lot_id, slot_id)).cloned() {
            self.close_session(&sid)?;
        }
        self.set_slot(lot_id, slot_id, SlotEvent::Fault)?;
        Ok(Reply::Done)
    }

    fn add_extra(&mut self, user_id: &UserId, session_id: &SessionId, code: &str) -> Outcome {
        let session = self
            .s
            .sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))?;
        if self.s.session_owner(session) != Some(user_id) {
            return Err(ServiceError::NotOwner);
        }
        let extra = self
            .s
            .extras_for(&session.lot_id)
            .into_iter()
            .find(|e| e.code == code)
            .ok_or_else(|| ServiceError::UnknownExtra(code.to_owned()))?;
        let session = session.clone().add_extra(extra)?;
        self.s.sessions.insert(session_id.clone(), session.clone());
        Ok(Reply::Session { session })
    }

    fn operator_close(&mut self, session_id: &SessionId) -> Outcome {
        let session = self
            .s
            .sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))?;
        if !session.is_open() {
            return Err(DomainError::SessionClosed.into());
        }
        let (lot_id, slot_id) = (session.lot_id.clone(), session.slot_id.clone());
        let bill = self.close_session(session_id)?;
        if self.s.slot_state(&lot_id, &slot_id) == Some(SlotState::Occupied) {
            self.set_slot(&lot_id, &slot_id, SlotEvent::SensorVacated)?;
        }
        Ok(Reply::Bill { bill })
    }
}

/// Display text is cut to the panel's 32 characters.
pub fn fit_display(text: &str) -> String {
    text.chars().take(DISPLAY_MAX_CHARS).collect()
}
