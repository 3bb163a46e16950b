use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reservation::{ReservationEvent, ReservationState};
use crate::slot::{SlotEvent, SlotState};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum DomainError {
    #[error("illegal slot transition: {event:?} in state {state:?}")]
    IllegalSlotTransition { state: SlotState, event: SlotEvent },

    #[error("illegal reservation transition: {event:?} in state {state:?}")]
    IllegalReservationTransition {
        state: ReservationState,
        event: ReservationEvent,
    },

    #[error("booking window starts in the past")]
    BookingInPast,

    #[error("booking window longer than 24 hours")]
    BookingTooLong,

    #[error("booking window is empty")]
    EmptyWindow,

    #[error("exit time precedes entry time")]
    NegativeDuration,

    #[error("parking session already closed")]
    SessionClosed,

    #[error("invalid lot: {0}")]
    InvalidLot(String),

    #[error("invalid tariff: {0}")]
    InvalidTariff(String),

    #[error("invalid extra service: {0}")]
    InvalidExtra(String),
}
