//! Tariffs, parking sessions and bills.
//!
//! Money is always an integer count of minor currency units. A session is
//! billed by rounding its duration up to whole minutes and then up to whole
//! tariff quanta; a zero-length session costs nothing.

use serde::{Deserialize, Serialize};

use crate::error::DomainError;
use crate::ids::{BillId, LotId, ReservationId, SessionId, SlotId};
use crate::UnixSeconds;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tariff {
    pub rate_minor_per_quantum: u64,
    pub quantum_minutes: u32,
    pub currency_code: String,
}

impl Tariff {
    pub fn new(
        rate_minor_per_quantum: u64,
        quantum_minutes: u32,
        currency_code: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let tariff = Self {
            rate_minor_per_quantum,
            quantum_minutes,
            currency_code: currency_code.into(),
        };
        tariff.validate()?;
        Ok(tariff)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.quantum_minutes == 0 || 60 % self.quantum_minutes != 0 {
            return Err(DomainError::InvalidTariff(format!(
                "quantum of {} minutes does not divide an hour",
                self.quantum_minutes
            )));
        }
        let code = &self.currency_code;
        if code.len() != 3 || !code.bytes().all(|b| b.is_ascii_uppercase()) {
            return Err(DomainError::InvalidTariff(format!("bad currency code {code:?}")));
        }
        Ok(())
    }
}

impl Default for Tariff {
    fn default() -> Self {
        Self {
            rate_minor_per_quantum: 250,
            quantum_minutes: 15,
            currency_code: "EGP".to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeeQuote {
    pub duration_minutes: u64,
    pub base_fee_minor: u64,
}

pub fn compute_fee(
    entry_ts: UnixSeconds,
    exit_ts: UnixSeconds,
    tariff: &Tariff,
) -> Result<FeeQuote, DomainError> {
    if exit_ts < entry_ts {
        return Err(DomainError::NegativeDuration);
    }
    let seconds = (exit_ts - entry_ts) as u64;
    let duration_minutes = seconds.div_ceil(60);
    let quanta = duration_minutes.div_ceil(u64::from(tariff.quantum_minutes));
    Ok(FeeQuote {
        duration_minutes,
        base_fee_minor: quanta * tariff.rate_minor_per_quantum,
    })
}

/// A priced add-on from a lot's extras catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraService {
    pub code: String,
    pub name: String,
    pub price_minor: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParkingSession {
    pub session_id: SessionId,
    pub lot_id: LotId,
    pub slot_id: SlotId,
    pub reservation_id: Option<ReservationId>,
    pub entry_ts: UnixSeconds,
    pub exit_ts: Option<UnixSeconds>,
    pub extras: Vec<ExtraService>,
}

impl ParkingSession {
    pub fn open(
        session_id: SessionId,
        lot_id: LotId,
        slot_id: SlotId,
        reservation_id: Option<ReservationId>,
        entry_ts: UnixSeconds,
    ) -> Self {
        Self {
            session_id,
            lot_id,
            slot_id,
            reservation_id,
            entry_ts,
            exit_ts: None,
            extras: Vec::new(),
        }
    }

    pub fn is_open(&self) -> bool {
        self.exit_ts.is_none()
    }

    pub fn add_extra(mut self, extra: ExtraService) -> Result<Self, DomainError> {
        if !self.is_open() {
            return Err(DomainError::SessionClosed);
        }
        self.extras.push(extra);
        Ok(self)
    }

    pub fn extras_fee_minor(&self) -> u64 {
        self.extras.iter().map(|e| e.price_minor).sum()
    }

    /// Closes the session at `exit_ts` and issues its bill.
    pub fn close(
        mut self,
        exit_ts: UnixSeconds,
        tariff: &Tariff,
        bill_id: BillId,
    ) -> Result<(Self, BillingRecord), DomainError> {
        if !self.is_open() {
            return Err(DomainError::SessionClosed);
        }
        let quote = compute_fee(self.entry_ts, exit_ts, tariff)?;
        self.exit_ts = Some(exit_ts);
        let extras_fee_minor = self.extras_fee_minor();
        let bill = BillingRecord {
            bill_id,
            session_id: self.session_id.clone(),
            duration_minutes: quote.duration_minutes,
            base_fee_minor: quote.base_fee_minor,
            extras_fee_minor,
            total_minor: quote.base_fee_minor + extras_fee_minor,
            currency_code: tariff.currency_code.clone(),
            issued_at: exit_ts,
        };
        Ok((self, bill))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BillingRecord {
    pub bill_id: BillId,
    pub session_id: SessionId,
    pub duration_minutes: u64,
    pub base_fee_minor: u64,
    pub extras_fee_minor: u64,
    pub total_minor: u64,
    pub currency_code: String,
    pub issued_at: UnixSeconds,
}
