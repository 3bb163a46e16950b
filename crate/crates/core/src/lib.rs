//! Domain model for the smart parking management system.
//!
//! Everything in this crate is pure: slot and reservation state machines,
//! booking validation, occupancy accounting and fee computation. The
//! service, the device simulator and the operator tooling all build on it.

pub mod billing;
pub mod config;
pub mod error;
pub mod ids;
pub mod label;
pub mod reservation;
pub mod slot;

pub use billing::{
    compute_fee, BillingRecord, ExtraService, FeeQuote, ParkingSession, Tariff,
};
pub use config::{GateConfig, GateKind, LotConfig};
pub use error::DomainError;
pub use label::natural_cmp;
pub use ids::{BillId, GateId, LotId, ReservationId, SessionId, SlotId, UserId};
pub use reservation::{
    reservation_transition, validate_booking_request, Reservation, ReservationEvent,
    ReservationState, MAX_BOOKING_SECONDS,
};
pub use slot::{
    occupancy_summary, slot_transition, GeoPoint, OccupancySummary, ParkingLot, Slot, SlotEvent,
    SlotState,
};

/// Seconds since the Unix epoch, UTC.
pub type UnixSeconds = i64;
