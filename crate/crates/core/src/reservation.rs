use serde::{Deserialize, Serialize};

use crate::error::DomainError;
use crate::ids::{LotId, ReservationId, SlotId, UserId};
use crate::UnixSeconds;

/// Longest bookable window; exactly 24 hours is accepted.
pub const MAX_BOOKING_SECONDS: i64 = 24 * 60 * 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReservationState {
    Active,
    CheckedIn,
    Completed,
    Cancelled,
    Expired,
}

impl ReservationState {
    pub const ALL: [ReservationState; 5] = [
        ReservationState::Active,
        ReservationState::CheckedIn,
        ReservationState::Completed,
        ReservationState::Cancelled,
        ReservationState::Expired,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            ReservationState::Completed | ReservationState::Cancelled | ReservationState::Expired
        )
    }

    /// Whether the booking still holds its slot for its window.
    pub fn is_live(self) -> bool {
        matches!(self, ReservationState::Active | ReservationState::CheckedIn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservationEvent {
    CheckIn,
    CheckOut,
    Cancel,
    Tick,
}

impl ReservationEvent {
    pub const ALL: [ReservationEvent; 4] = [
        ReservationEvent::CheckIn,
        ReservationEvent::CheckOut,
        ReservationEvent::Cancel,
        ReservationEvent::Tick,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub reservation_id: ReservationId,
    pub user_id: UserId,
    pub lot_id: LotId,
    pub slot_id: SlotId,
    pub window_start: UnixSeconds,
    pub window_end: UnixSeconds,
    pub state: ReservationState,
    pub created_at: UnixSeconds,
    /// No-show cutoff: the car must arrive at or before this instant.
    pub hold_deadline: UnixSeconds,
    /// Client-supplied estimated arrival, stored as given.
    #[serde(default)]
    pub eta: Option<UnixSeconds>,
}

impl Reservation {
    /// Does this booking's window intersect `[start, end)`?
    pub fn overlaps(&self, start: UnixSeconds, end: UnixSeconds) -> bool {
        self.window_start < end && start < self.window_end
    }

    /// The window has started and has not ended yet.
    pub fn is_current(&self, now: UnixSeconds) -> bool {
        self.window_start <= now && now < self.window_end
    }

    /// An ACTIVE booking whose car may check in right now.
    pub fn is_due(&self, now: UnixSeconds) -> bool {
        self.state == ReservationState::Active
            && self.window_start <= now
            && now <= self.hold_deadline
    }
}

/// Applies one lifecycle event. Terminal states reject everything; a `Tick`
/// before the hold deadline leaves an ACTIVE booking unchanged.
pub fn reservation_transition(
    res: &Reservation,
    event: ReservationEvent,
    now: UnixSeconds,
) -> Result<Reservation, DomainError> {
    use ReservationEvent as E;
    use ReservationState as S;

    let illegal = || DomainError::IllegalReservationTransition {
        state: res.state,
        event,
    };
    let next = match (res.state, event) {
        (S::Active, E::CheckIn) if now <= res.hold_deadline => S::CheckedIn,
        (S::Active, E::CheckIn) => return Err(illegal()),
        (S::Active, E::Cancel) => S::Cancelled,
        (S::Active, E::Tick) if now > res.hold_deadline => S::Expired,
        (S::Active, E::Tick) => S::Active,
        (S::Active, E::CheckOut) => return Err(illegal()),
        (S::CheckedIn, E::CheckOut) => S::Completed,
        (S::CheckedIn, E::Tick) => S::CheckedIn,
        (S::CheckedIn, E::CheckIn | E::Cancel) => return Err(illegal()),
        (S::Completed | S::Cancelled | S::Expired, _) => return Err(illegal()),
    };
    Ok(Reservation {
        state: next,
        ..res.clone()
    })
}

pub fn validate_booking_request(
    window_start: UnixSeconds,
    window_end: UnixSeconds,
    now: UnixSeconds,
) -> Result<(), DomainError> {
    if window_start < now {
        return Err(DomainError::BookingInPast);
    }
    if window_end <= window_start {
        return Err(DomainError::EmptyWindow);
    }
    if window_end - window_start > MAX_BOOKING_SECONDS {
        return Err(DomainError::BookingTooLong);
    }
    Ok(())
}
