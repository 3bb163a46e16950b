//! Commands, their replies and the domain events they produce.

use serde::{Deserialize, Serialize};
use spms_core::{
    BillId, BillingRecord, GateId, LotConfig, LotId, ParkingSession, Reservation, ReservationId,
    ReservationState, SessionId, SlotId, SlotState, UnixSeconds, UserId,
};

use crate::config::Policy;
use crate::error::ServiceError;
use crate::state::User;

/// Every state-changing request. Commands carry no timestamps of their
/// own; the log record's time is the only clock `apply` sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    SetPolicy {
        policy: Policy,
    },
    CreateLot {
        config: LotConfig,
    },
    RegisterUser {
        name: String,
        email: String,
        phone: String,
        /// Already hashed; clear passwords never reach the log.
        password_hash: String,
    },
    /// Issued after the caller has verified the password against
    /// `password_hash`; rejected if the stored hash changed since.
    Login {
        user_id: UserId,
        password_hash: String,
        token_digest: String,
    },
    /// Always accepted, so callers cannot probe which emails exist.
    ResetPassword {
        email: String,
        code: String,
    },
    RedeemReset {
        code: String,
        new_password_hash: String,
    },
    CreateReservation {
        user_id: UserId,
        lot_id: LotId,
        slot_id: Option<SlotId>,
        window_start: UnixSeconds,
        window_end: UnixSeconds,
        #[serde(default)]
        eta: Option<UnixSeconds>,
        #[serde(default)]
        idempotency_key: Option<String>,
    },
    CancelReservation {
        user_id: UserId,
        reservation_id: ReservationId,
    },
    SensorEvent {
        topic: String,
        payload: String,
    },
    TimerTick,
    OperatorFault {
        lot_id: LotId,
        slot_id: SlotId,
    },
    OperatorRestore {
        lot_id: LotId,
        slot_id: SlotId,
    },
    AddExtra {
        user_id: UserId,
        session_id: SessionId,
        code: String,
    },
    CloseSession {
        session_id: SessionId,
    },
}

impl Command {
    pub fn kind(&self) -> &'static str {
        match self {
            Command::SetPolicy { .. } => "set_policy",
            Command::CreateLot { .. } => "create_lot",
            Command::RegisterUser { .. } => "register_user",
            Command::Login { .. } => "login",
            Command::ResetPassword { .. } => "reset_password",
            Command::RedeemReset { .. } => "redeem_reset",
            Command::CreateReservation { .. } => "create_reservation",
            Command::CancelReservation { .. } => "cancel_reservation",
            Command::SensorEvent { .. } => "sensor_event",
            Command::TimerTick => "timer_tick",
            Command::OperatorFault { .. } => "operator_fault",
            Command::OperatorRestore { .. } => "operator_restore",
            Command::AddExtra { .. } => "add_extra",
            Command::CloseSession { .. } => "close_session",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reply", rename_all = "snake_case")]
pub enum Reply {
    Done,
    User { user: User },
    Token { user_id: UserId, expires_at: UnixSeconds },
    Reservation { reservation: Reservation, replayed: bool },
    Session { session: ParkingSession },
    Bill { bill: BillingRecord },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SlotChanged {
        lot_id: LotId,
        slot_id: SlotId,
        from: SlotState,
        to: SlotState,
    },
    ReservationChanged {
        reservation_id: ReservationId,
        from: Option<ReservationState>,
        to: ReservationState,
    },
    SessionOpened {
        session_id: SessionId,
        lot_id: LotId,
        slot_id: SlotId,
        reservation_id: Option<ReservationId>,
    },
    SessionClosed {
        session_id: SessionId,
        bill_id: BillId,
        total_minor: u64,
    },
    Notified {
        notif_id: String,
        user_id: UserId,
    },
    Anomaly {
        lot_id: LotId,
        slot_id: SlotId,
        state: SlotState,
        payload: String,
    },
    GateCommand {
        lot_id: LotId,
        gate_id: GateId,
        pulse_us: u32,
    },
    Display {
        lot_id: LotId,
        text: String,
    },
    Ignored {
        reason: String,
    },
}

impl Event {
    /// The MQTT publish this event asks for, if any.
    pub fn publish(&self) -> Option<(String, String)> {
        match self {
            Event::GateCommand { lot_id, gate_id, pulse_us } => {
                Some((format!("lot/{lot_id}/gate/{gate_id}/cmd"), pulse_us.to_string()))
            }
            Event::Display { lot_id, text } => Some((format!("lot/{lot_id}/display"), text.clone())),
            _ => None,
        }
    }
}

/// What applying one command did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Applied {
    pub outcome: Result<Reply, ServiceError>,
    pub events: Vec<Event>,
}

impl Applied {
    pub fn is_ok(&self) -> bool {
        self.outcome.is_ok()
    }
}
