//! Wire shapes. Timestamps are Unix seconds, money is minor units plus an
//! ISO currency code.

use serde::{Deserialize, Serialize};
use spms_core::{
    BillId, BillingRecord, ExtraService, LotId, OccupancySummary, ParkingSession, Reservation,
    ReservationId, ReservationState, SessionId, SlotId, Tariff, UnixSeconds, UserId,
};
use spms_service::query::{LotHit, SlotView};
use spms_service::state::User;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Money {
    pub amount_minor: u64,
    pub currency: String,
}

impl Money {
    pub fn new(amount_minor: u64, currency: &str) -> Self {
        Self { amount_minor, currency: currency.to_owned() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterBody {
    pub name: String,
    pub email: String,
    #[serde(default)]
    pub phone: String,
    pub password: String,
}

#[derive(Debug, Serialize)]
pub struct UserOut {
    pub user_id: UserId,
    pub name: String,
    pub email: String,
    pub phone: String,
    pub created_at: UnixSeconds,
}

impl From<User> for UserOut {
    fn from(u: User) -> Self {
        Self { user_id: u.user_id, name: u.name, email: u.email, phone: u.phone, created_at: u.created_at }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoginBody {
    pub email: String,
    pub password: String,
}

#[derive(Debug, Serialize)]
pub struct TokenOut {
    pub token: String,
    pub user_id: UserId,
    pub expires_at: UnixSeconds,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetBody {
    pub email: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedeemBody {
    pub code: String,
    pub new_password: String,
}

#[derive(Debug, Deserialize)]
pub struct SearchQuery {
    pub lat: f64,
    pub lon: f64,
    pub radius_m: f64,
}

#[derive(Debug, Serialize)]
pub struct TariffOut {
    pub rate: Money,
    pub quantum_minutes: u32,
}

impl From<&Tariff> for TariffOut {
    fn from(t: &Tariff) -> Self {
        Self { rate: Money::new(t.rate_minor_per_quantum, &t.currency_code), quantum_minutes: t.quantum_minutes }
    }
}

#[derive(Debug, Serialize)]
pub struct LotOut {
    pub lot_id: LotId,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub distance_m: f64,
    pub occupancy: OccupancySummary,
    pub tariff: TariffOut,
}

impl From<LotHit> for LotOut {
    fn from(h: LotHit) -> Self {
        Self {
            tariff: TariffOut::from(&h.tariff),
            lot_id: h.lot_id,
            name: h.name,
            lat: h.lat,
            lon: h.lon,
            distance_m: h.distance_m,
            occupancy: h.occupancy,
        }
    }
}

pub type SlotOut = SlotView;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservationBody {
    pub lot_id: LotId,
    #[serde(default)]
    pub slot_id: Option<SlotId>,
    pub window_start: UnixSeconds,
    pub window_end: UnixSeconds,
    #[serde(default)]
    pub eta: Option<UnixSeconds>,
}

#[derive(Debug, Serialize)]
pub struct ReservationOut {
    pub reservation_id: ReservationId,
    pub user_id: UserId,
    pub lot_id: LotId,
    pub slot_id: SlotId,
    pub window_start: UnixSeconds,
    pub window_end: UnixSeconds,
    pub state: ReservationState,
    pub created_at: UnixSeconds,
    pub hold_deadline: UnixSeconds,
    pub eta: Option<UnixSeconds>,
    /// The parking session, once the car has checked in.
    pub session_id: Option<SessionId>,
    pub bill_id: Option<BillId>,
}

impl ReservationOut {
    pub fn new(r: Reservation, session_id: Option<SessionId>, bill_id: Option<BillId>) -> Self {
        Self {
            reservation_id: r.reservation_id,
            user_id: r.user_id,
            lot_id: r.lot_id,
            slot_id: r.slot_id,
            window_start: r.window_start,
            window_end: r.window_end,
            state: r.state,
            created_at: r.created_at,
            hold_deadline: r.hold_deadline,
            eta: r.eta,
            session_id,
            bill_id,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtraBody {
    pub code: String,
}

#[derive(Debug, Serialize)]
pub struct ExtraOut {
    pub code: String,
    pub name: String,
    pub price: Money,
}

impl ExtraOut {
    fn new(e: ExtraService, currency: &str) -> Self {
        Self { price: Money::new(e.price_minor, currency), code: e.code, name: e.name }
    }
}

#[derive(Debug, Serialize)]
pub struct SessionOut {
    pub session_id: SessionId,
    pub lot_id: LotId,
    pub slot_id: SlotId,
    pub reservation_id: Option<ReservationId>,
    pub entry_ts: UnixSeconds,
    pub exit_ts: Option<UnixSeconds>,
    pub extras: Vec<ExtraOut>,
}

impl SessionOut {
    pub fn new(s: ParkingSession, currency: &str) -> Self {
        Self {
            session_id: s.session_id,
            lot_id: s.lot_id,
            slot_id: s.slot_id,
            reservation_id: s.reservation_id,
            entry_ts: s.entry_ts,
            exit_ts: s.exit_ts,
            extras: s.extras.into_iter().map(|e| ExtraOut::new(e, currency)).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct BillOut {
    pub bill_id: BillId,
    pub session_id: SessionId,
    pub duration_minutes: u64,
    pub base_fee: Money,
    pub extras_fee: Money,
    pub total: Money,
    pub issued_at: UnixSeconds,
}

impl From<BillingRecord> for BillOut {
    fn from(b: BillingRecord) -> Self {
        let cur = b.currency_code.as_str();
        Self {
            base_fee: Money::new(b.base_fee_minor, cur),
            extras_fee: Money::new(b.extras_fee_minor, cur),
            total: Money::new(b.total_minor, cur),
            bill_id: b.bill_id,
            session_id: b.session_id,
            duration_minutes: b.duration_minutes,
            issued_at: b.issued_at,
        }
    }
}
