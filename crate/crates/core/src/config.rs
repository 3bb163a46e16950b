//! Lot configuration, read as line-delimited JSON (one lot per line).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::billing::{ExtraService, Tariff};
use crate::error::DomainError;
use crate::ids::{GateId, LotId, SlotId};
use crate::label::natural_cmp;
use crate::slot::{GeoPoint, ParkingLot, Slot, SlotState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Entry,
    Exit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateConfig {
    pub gate_id: GateId,
    pub kind: GateKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotConfig {
    pub lot_id: LotId,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    /// Slot labels; each label doubles as the slot id.
    pub slots: Vec<String>,
    #[serde(default)]
    pub gates: Vec<GateConfig>,
    #[serde(default)]
    pub tariff: Tariff,
    #[serde(default)]
    pub extras: Vec<ExtraService>,
}

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl LotConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        GeoPoint::new(self.lat, self.lon)?;
        if self.slots.is_empty() {
            return Err(DomainError::InvalidLot(format!("lot {} has no slots", self.lot_id)));
        }
        let mut labels = HashSet::new();
        for label in &self.slots {
            if label.is_empty() || label.contains(['/', '+', '#']) {
                return Err(DomainError::InvalidLot(format!("bad slot label {label:?}")));
            }
            if !labels.insert(label) {
                return Err(DomainError::InvalidLot(format!("duplicate slot label {label}")));
            }
        }
        let mut gates = HashSet::new();
        for gate in &self.gates {
            if !gates.insert(&gate.gate_id) {
                return Err(DomainError::InvalidLot(format!("duplicate gate {}", gate.gate_id)));
            }
        }
        self.tariff.validate()?;
        let mut codes = HashSet::new();
        for extra in &self.extras {
            if extra.code.is_empty() || !codes.insert(&extra.code) {
                return Err(DomainError::InvalidExtra(format!("bad or duplicate code {:?}", extra.code)));
            }
        }
        Ok(())
    }

    /// Builds the lot with every slot FREE, slots in natural label order.
    pub fn to_lot(&self) -> Result<ParkingLot, DomainError> {
        self.validate()?;
        let mut labels = self.slots.clone();
        labels.sort_by(|a, b| natural_cmp(a, b));
        let slots = labels
            .into_iter()
            .map(|label| Slot {
                slot_id: SlotId::new(label.clone()),
                lot_id: self.lot_id.clone(),
                label,
                state: SlotState::Free,
            })
            .collect();
        ParkingLot::new(
            self.lot_id.clone(),
            self.name.clone(),
            GeoPoint::new(self.lat, self.lon)?,
            slots,
        )
    }

    pub fn entry_gate(&self) -> Option<&GateConfig> {
        self.gates.iter().find(|g| g.kind == GateKind::Entry)
    }

    pub fn exit_gate(&self) -> Option<&GateConfig> {
        self.gates.iter().find(|g| g.kind == GateKind::Exit)
    }

    /// Parses line-delimited JSON. Blank lines and `//` comments are skipped.
    pub fn parse_lines(text: &str) -> Result<Vec<LotConfig>, ConfigError> {
        let mut lots = Vec::new();
        let mut ids = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let err = |message: String| ConfigError { line: idx + 1, message };
            let lot: LotConfig = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            lot.validate().map_err(|e| err(e.to_string()))?;
            if !ids.insert(lot.lot_id.clone()) {
                return Err(err(format!("duplicate lot id {}", lot.lot_id)));
            }
            lots.push(lot);
        }
        Ok(lots)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"{"lot_id":"L1","name":"Main","lat":31.04,"lon":31.38,"slots":["S1","S2","S10","S3"],"gates":[{"gate_id":"G1","kind":"entry"}]}"#;

    #[test]
    fn parses_and_orders_slots() {
        let lots = LotConfig::parse_lines(&format!("// lots\n\n{ONE}\n")).unwrap();
        assert_eq!(lots.len(), 1);
        assert_eq!(lots[0].tariff, Tariff::default());
        let lot = lots[0].to_lot().unwrap();
        let labels: Vec<_> = lot.slots.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["S1", "S2", "S3", "S10"]);
        assert_eq!(lots[0].entry_gate().unwrap().gate_id.as_str(), "G1");
        assert!(lots[0].exit_gate().is_none());
    }

    #[test]
    fn reports_line_numbers() {
        let text = format!("{ONE}\n{{\"lot_id\":\"L2\"}}\n");
        let err = LotConfig::parse_lines(&text).unwrap_err();
        assert_eq!(err.line, 2);
        let dup = format!("{ONE}\n{ONE}\n");
        assert_eq!(LotConfig::parse_lines(&dup).unwrap_err().line, 2);
    }

    #[test]
    fn rejects_duplicate_labels() {
        let bad = ONE.replace("\"S10\"", "\"S1\"");
        assert!(LotConfig::parse_lines(&bad).is_err());
    }
}
