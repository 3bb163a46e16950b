//! Operator reports, as aligned text or CSV.

use std::collections::BTreeMap;

use serde::Serialize;
use spms_core::{natural_cmp, UnixSeconds};

use crate::state::ServiceState;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OccupancyRow {
    pub lot_id: String,
    pub free: usize,
    pub reserved: usize,
    pub occupied: usize,
    pub out_of_service: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BillingRow {
    pub bill_id: String,
    pub lot_id: String,
    pub slot_id: String,
    pub reservation_id: String,
    pub entry_ts: UnixSeconds,
    pub exit_ts: UnixSeconds,
    pub minutes: u64,
    pub base_minor: u64,
    pub extras_minor: u64,
    pub total_minor: u64,
    pub currency: String,
}

pub fn occupancy_rows(state: &ServiceState) -> Vec<OccupancyRow> {
    state
        .lots
        .values()
        .map(|l| {
            let s = spms_core::occupancy_summary(&l.lot);
            OccupancyRow {
                lot_id: l.lot.lot_id.to_string(),
                free: s.free,
                reserved: s.reserved,
                occupied: s.occupied,
                out_of_service: s.out_of_service,
                total: s.total,
            }
        })
        .collect()
}

/// Bills in issue order.
pub fn billing_rows(state: &ServiceState) -> Vec<BillingRow> {
    let mut bills: Vec<_> = state.bills.values().collect();
    bills.sort_by(|a, b| a.issued_at.cmp(&b.issued_at).then_with(|| natural_cmp(a.bill_id.as_str(), b.bill_id.as_str())));
    bills
        .into_iter()
        .map(|b| {
            let s = &state.sessions[&b.session_id];
            BillingRow {
                bill_id: b.bill_id.to_string(),
                lot_id: s.lot_id.to_string(),
                slot_id: s.slot_id.to_string(),
                reservation_id: s.reservation_id.as_ref().map_or_else(String::new, |r| r.to_string()),
                entry_ts: s.entry_ts,
                exit_ts: s.exit_ts.unwrap_or(b.issued_at),
                minutes: b.duration_minutes,
                base_minor: b.base_fee_minor,
                extras_minor: b.extras_fee_minor,
                total_minor: b.total_minor,
                currency: b.currency_code.clone(),
            }
        })
        .collect()
}

/// Sum of bill totals per currency.
pub fn billing_totals(state: &ServiceState) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for b in state.bills.values() {
        *out.entry(b.currency_code.clone()).or_insert(0) += b.total_minor;
    }
    out
}

pub const OCCUPANCY_HEADER: [&str; 6] = ["lot_id", "free", "reserved", "occupied", "out_of_service", "total"];
pub const BILLING_HEADER: [&str; 11] = [
    "bill_id",
    "lot_id",
    "slot_id",
    "reservation_id",
    "entry_ts",
    "exit_ts",
    "minutes",
    "base_minor",
    "extras_minor",
    "total_minor",
    "currency",
];

/// The header line is written even when there are no rows.
pub fn to_csv<T: Serialize>(header: &[&str], rows: &[T]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("header serializes");
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

pub fn occupancy_text(state: &ServiceState) -> String {
    let mut out = format!("{:<12} {:>5} {:>8} {:>8} {:>4} {:>5}\n", "LOT", "FREE", "RESERVED", "OCCUPIED", "OOS", "TOTAL");
    for r in occupancy_rows(state) {
        out.push_str(&format!(
            "{:<12} {:>5} {:>8} {:>8} {:>4} {:>5}\n",
            r.lot_id, r.free, r.reserved, r.occupied, r.out_of_service, r.total
        ));
    }
    out
}

pub fn billing_text(state: &ServiceState) -> String {
    let mut out = format!(
        "{:<8} {:<8} {:<8} {:<8} {:>7} {:>9} {:>9} {:>9} {}\n",
        "BILL", "LOT", "SLOT", "BOOKING", "MINUTES", "BASE", "EXTRAS", "TOTAL", "CUR"
    );
    for r in billing_rows(state) {
        out.push_str(&format!(
            "{:<8} {:<8} {:<8} {:<8} {:>7} {:>9} {:>9} {:>9} {}\n",
            r.bill_id,
            r.lot_id,
            r.slot_id,
            if r.reservation_id.is_empty() { "-" } else { &r.reservation_id },
            r.minutes,
            r.base_minor,
            r.extras_minor,
            r.total_minor,
            r.currency
        ));
    }
    for (cur, total) in billing_totals(state) {
        out.push_str(&format!("TOTAL {total} {cur}\n"));
    }
    out
}
