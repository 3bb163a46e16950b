//! Read-only queries over a state snapshot.

use serde::{Deserialize, Serialize};
use spms_core::{
    natural_cmp, BillId, BillingRecord, GeoPoint, LotId, OccupancySummary, Reservation,
    ReservationId, SlotId, SlotState, Tariff, UnixSeconds, UserId,
};

use crate::error::ServiceError;
use crate::state::ServiceState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotHit {
    pub lot_id: LotId,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub distance_m: f64,
    pub occupancy: OccupancySummary,
    pub tariff: Tariff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: UnixSeconds,
    pub end: UnixSeconds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotView {
    pub slot_id: SlotId,
    pub label: String,
    pub state: SlotState,
    pub next_reservation_window: Option<Window>,
    /// No sensor report for three heartbeat periods.
    pub stale: bool,
}

/// Lots within `radius_m`, nearest first, ties by id.
pub fn search_lots(state: &ServiceState, lat: f64, lon: f64, radius_m: f64) -> Result<Vec<LotHit>, ServiceError> {
    if !(radius_m > 0.0 && radius_m.is_finite()) {
        return Err(ServiceError::InvalidQuery("radius_m must be positive".into()));
    }
    let here = GeoPoint::new(lat, lon).map_err(|e| ServiceError::InvalidQuery(e.to_string()))?;
    let mut hits: Vec<LotHit> = state
        .lots
        .values()
        .map(|l| (l, here.distance_m(&l.lot.location)))
        .filter(|(_, d)| *d <= radius_m)
        .map(|(l, distance_m)| LotHit {
            lot_id: l.lot.lot_id.clone(),
            name: l.lot.name.clone(),
            lat: l.lot.location.lat,
            lon: l.lot.location.lon,
            distance_m,
            occupancy: spms_core::occupancy_summary(&l.lot),
            tariff: state.tariff_for(&l.lot.lot_id).cloned().expect("lot exists"),
        })
        .collect();
    hits.sort_by(|a, b| a.distance_m.total_cmp(&b.distance_m).then_with(|| a.lot_id.cmp(&b.lot_id)));
    Ok(hits)
}

pub fn list_slots(state: &ServiceState, lot_id: &LotId, now: UnixSeconds) -> Result<Vec<SlotView>, ServiceError> {
    let lot = state.lots.get(lot_id).ok_or_else(|| ServiceError::UnknownLot(lot_id.to_string()))?;
    let stale_after = state.policy.stale_after_s();
    Ok(lot
        .lot
        .slots
        .iter()
        .map(|s| SlotView {
            slot_id: s.slot_id.clone(),
            label: s.label.clone(),
            state: s.state,
            next_reservation_window: state
                .next_booking(lot_id, &s.slot_id, now)
                .map(|r| Window { start: r.window_start, end: r.window_end }),
            stale: lot.last_reading.get(&s.slot_id).is_none_or(|&t| now - t > stale_after),
        })
        .collect())
}

pub fn reservation_for(state: &ServiceState, user_id: &UserId, id: &ReservationId) -> Result<Reservation, ServiceError> {
    let r = state
        .reservations
        .get(id)
        .ok_or_else(|| ServiceError::UnknownReservation(id.to_string()))?;
    if &r.user_id != user_id {
        return Err(ServiceError::NotOwner);
    }
    Ok(r.clone())
}

/// The user's reservations, newest first.
pub fn reservations_of(state: &ServiceState, user_id: &UserId) -> Vec<Reservation> {
    let mut out: Vec<Reservation> = state.reservations.values().filter(|r| &r.user_id == user_id).cloned().collect();
    out.sort_by(|a, b| {
        b.created_at
            .cmp(&a.created_at)
            .then_with(|| natural_cmp(b.reservation_id.as_str(), a.reservation_id.as_str()))
    });
    out
}

/// A bill is visible to the owner of the reservation it came from.
pub fn bill_for(state: &ServiceState, user_id: &UserId, id: &BillId) -> Result<BillingRecord, ServiceError> {
    let bill = state.bills.get(id).ok_or_else(|| ServiceError::UnknownBill(id.to_string()))?;
    let session = state.sessions.get(&bill.session_id).expect("bill has a session");
    if state.session_owner(session) != Some(user_id) {
        return Err(ServiceError::NotOwner);
    }
    Ok(bill.clone())
}

/// The bill for a reservation's parking session, once there is one.
pub fn bill_of_reservation<'a>(state: &'a ServiceState, id: &ReservationId) -> Option<&'a BillingRecord> {
    state
        .sessions
        .values()
        .filter(|s| s.reservation_id.as_ref() == Some(id))
        .filter_map(|s| state.bill_by_session.get(&s.session_id))
        .filter_map(|b| state.bills.get(b))
        .next()
}

pub fn session_of_reservation<'a>(state: &'a ServiceState, id: &ReservationId) -> Option<&'a spms_core::ParkingSession> {
    state.sessions.values().find(|s| s.reservation_id.as_ref() == Some(id))
}
