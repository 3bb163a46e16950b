//! Slots, lots and the slot state machine.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::DomainError;
use crate::ids::{LotId, SlotId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SlotState {
    Free,
    Reserved,
    Occupied,
    OutOfService,
}

impl SlotState {
    pub const ALL: [SlotState; 4] = [
        SlotState::Free,
        SlotState::Reserved,
        SlotState::Occupied,
        SlotState::OutOfService,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SlotState::Free => "FREE",
            SlotState::Reserved => "RESERVED",
            SlotState::Occupied => "OCCUPIED",
            SlotState::OutOfService => "OUT_OF_SERVICE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotEvent {
    Reserve,
    ReleaseReservation,
    SensorOccupied,
    SensorVacated,
    Fault,
    Restore,
}

impl SlotEvent {
    pub const ALL: [SlotEvent; 6] = [
        SlotEvent::Reserve,
        SlotEvent::ReleaseReservation,
        SlotEvent::SensorOccupied,
        SlotEvent::SensorVacated,
        SlotEvent::Fault,
        SlotEvent::Restore,
    ];
}

/// The slot transition table.
///
/// Total over all 24 `(state, event)` pairs: every pair is either a next
/// state or `IllegalSlotTransition`. Sensor and booking events never enter
/// or leave `OutOfService`; only `Fault` and `Restore` do.
///
/// A few pairs are accepted as no-ops because the service can legitimately
/// produce them: a clear reading on a free or reserved slot (heartbeats
/// repeat readings), a repeated obstacle reading on an occupied slot, and a
/// released booking on a slot that someone else is parked in or that has
/// been taken out of service.
pub fn slot_transition(state: SlotState, event: SlotEvent) -> Result<SlotState, DomainError> {
    use SlotEvent as E;
    use SlotState as S;

    let next = match (state, event) {
        (S::Free, E::Reserve) => S::Reserved,
        (S::Free, E::SensorOccupied) => S::Occupied,
        (S::Free, E::SensorVacated) => S::Free,
        (S::Free, E::Fault) => S::OutOfService,

        (S::Reserved, E::ReleaseReservation) => S::Free,
        (S::Reserved, E::SensorOccupied) => S::Occupied,
        (S::Reserved, E::SensorVacated) => S::Reserved,
        (S::Reserved, E::Fault) => S::OutOfService,

        (S::Occupied, E::ReleaseReservation) => S::Occupied,
        (S::Occupied, E::SensorOccupied) => S::Occupied,
        (S::Occupied, E::SensorVacated) => S::Free,
        (S::Occupied, E::Fault) => S::OutOfService,

        (S::OutOfService, E::ReleaseReservation) => S::OutOfService,
        (S::OutOfService, E::Restore) => S::Free,

        (S::Free, E::ReleaseReservation | E::Restore)
        | (S::Reserved, E::Reserve | E::Restore)
        | (S::Occupied, E::Reserve | E::Restore)
        | (S::OutOfService, E::Reserve | E::SensorOccupied | E::SensorVacated | E::Fault) => {
            return Err(DomainError::IllegalSlotTransition { state, event })
        }
    };
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub slot_id: SlotId,
    pub lot_id: LotId,
    pub label: String,
    pub state: SlotState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    const EARTH_RADIUS_M: f64 = 6_371_000.0;

    pub fn new(lat: f64, lon: f64) -> Result<Self, DomainError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(DomainError::InvalidLot(format!("latitude {lat} out of range")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(DomainError::InvalidLot(format!("longitude {lon} out of range")));
        }
        Ok(Self { lat, lon })
    }

    /// Great-circle distance in metres (haversine, spherical earth).
    pub fn distance_m(&self, other: &GeoPoint) -> f64 {
        let (p1, p2) = (self.lat.to_radians(), other.lat.to_radians());
        let dp = p2 - p1;
        let dl = (other.lon - self.lon).to_radians();
        let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * Self::EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParkingLot {
    pub lot_id: LotId,
    pub name: String,
    pub location: GeoPoint,
    pub slots: Vec<Slot>,
}

impl ParkingLot {
    pub fn new(
        lot_id: LotId,
        name: impl Into<String>,
        location: GeoPoint,
        slots: Vec<Slot>,
    ) -> Result<Self, DomainError> {
        if slots.is_empty() {
            return Err(DomainError::InvalidLot(format!("lot {lot_id} has no slots")));
        }
        let mut seen = HashSet::new();
        for slot in &slots {
            if !seen.insert(&slot.slot_id) {
                return Err(DomainError::InvalidLot(format!(
                    "duplicate slot id {} in lot {lot_id}",
                    slot.slot_id
                )));
            }
        }
        Ok(Self {
            lot_id,
            name: name.into(),
            location,
            slots,
        })
    }

    pub fn slot(&self, slot_id: &SlotId) -> Option<&Slot> {
        self.slots.iter().find(|s| &s.slot_id == slot_id)
    }

    pub fn slot_mut(&mut self, slot_id: &SlotId) -> Option<&mut Slot> {
        self.slots.iter_mut().find(|s| &s.slot_id == slot_id)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancySummary {
    pub free: usize,
    pub reserved: usize,
    pub occupied: usize,
    pub out_of_service: usize,
    pub total: usize,
}

impl OccupancySummary {
    pub fn from_states(states: impl IntoIterator<Item = SlotState>) -> Self {
        let mut summary = Self::default();
        for state in states {
            match state {
                SlotState::Free => summary.free += 1,
                SlotState::Reserved => summary.reserved += 1,
                SlotState::Occupied => summary.occupied += 1,
                SlotState::OutOfService => summary.out_of_service += 1,
            }
            summary.total += 1;
        }
        summary
    }

    pub fn is_conserved(&self) -> bool {
        self.free + self.reserved + self.occupied + self.out_of_service == self.total
    }
}

pub fn occupancy_summary(lot: &ParkingLot) -> OccupancySummary {
    OccupancySummary::from_states(lot.slots.iter().map(|s| s.state))
}
