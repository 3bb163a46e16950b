use serde::{Deserialize, Serialize};
use spms_core::DomainError;
use thiserror::Error;

/// Why a command was rejected. Rejections are logged like successes, so
/// this type round-trips through the event log.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "code", content = "detail", rename_all = "snake_case")]
pub enum ServiceError {
    #[error("email already registered")]
    DuplicateEmail,
    #[error("password must be at least 8 characters")]
    WeakPassword,
    #[error("email address is not valid")]
    InvalidEmail,
    #[error("invalid email or password")]
    InvalidCredentials,
    #[error("missing, unknown or expired token")]
    Unauthorized,
    #[error("reset code expired")]
    CodeExpired,
    #[error("reset code already used")]
    CodeAlreadyUsed,
    #[error("reset code not recognised")]
    InvalidResetCode,
    #[error("unknown lot {0}")]
    UnknownLot(String),
    #[error("unknown slot {0}")]
    UnknownSlot(String),
    #[error("unknown reservation {0}")]
    UnknownReservation(String),
    #[error("unknown parking session {0}")]
    UnknownSession(String),
    #[error("unknown bill {0}")]
    UnknownBill(String),
    #[error("lot has no extra service {0}")]
    UnknownExtra(String),
    #[error("lot {0} already exists")]
    LotExists(String),
    #[error("not your reservation")]
    NotOwner,
    #[error("requested slot is not available for that window")]
    SlotUnavailable,
    #[error("no slot is free for that window")]
    NoSlotFree,
    #[error("invalid lot configuration: {0}")]
    InvalidLot(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    /// Never logged; the command did not reach the log.
    #[error("service unavailable: {0}")]
    Internal(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl ServiceError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::DuplicateEmail => "duplicate_email",
            ServiceError::WeakPassword => "weak_password",
            ServiceError::InvalidEmail => "invalid_email",
            ServiceError::InvalidCredentials => "invalid_credentials",
            ServiceError::Unauthorized => "unauthorized",
            ServiceError::CodeExpired => "code_expired",
            ServiceError::CodeAlreadyUsed => "code_already_used",
            ServiceError::InvalidResetCode => "invalid_reset_code",
            ServiceError::UnknownLot(_) => "unknown_lot",
            ServiceError::UnknownSlot(_) => "unknown_slot",
            ServiceError::UnknownReservation(_) => "unknown_reservation",
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::UnknownBill(_) => "unknown_bill",
            ServiceError::UnknownExtra(_) => "unknown_extra",
            ServiceError::LotExists(_) => "lot_exists",
            ServiceError::NotOwner => "not_owner",
            ServiceError::SlotUnavailable => "slot_unavailable",
            ServiceError::NoSlotFree => "no_slot_free",
            ServiceError::InvalidLot(_) => "invalid_lot",
            ServiceError::InvalidQuery(_) => "invalid_query",
            ServiceError::Internal(_) => "internal",
            ServiceError::Domain(d) => match d {
                DomainError::BookingInPast => "booking_in_past",
                DomainError::BookingTooLong => "booking_too_long",
                DomainError::EmptyWindow => "empty_window",
                DomainError::SessionClosed => "session_closed",
                DomainError::IllegalSlotTransition { .. }
                | DomainError::IllegalReservationTransition { .. } => "illegal_transition",
                DomainError::NegativeDuration => "negative_duration",
                DomainError::InvalidLot(_) | DomainError::InvalidTariff(_) | DomainError::InvalidExtra(_) => {
                    "invalid_lot"
                }
            },
        }
    }
}
