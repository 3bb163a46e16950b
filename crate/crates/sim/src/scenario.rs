//! Scenario scripts: one JSON object per line, sorted by `at_ms`.
//!
//! ```text
//! {"at_ms":1000,"action":"car_arrives","plate":"ABC123","slot":"any"}
//! {"at_ms":5000,"action":"car_departs","plate":"ABC123"}
//! {"at_ms":6000,"action":"slot_fault","slot":"S2","stuck":"0"}
//! {"at_ms":9000,"action":"slot_restore","slot":"S2"}
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use spms_core::SlotId;
use thiserror::Error;

use crate::hardware::Reading;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotChoice {
    Any,
    Slot(SlotId),
}

impl Serialize for SlotChoice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SlotChoice::Any => s.serialize_str("any"),
            SlotChoice::Slot(id) => s.serialize_str(id.as_str()),
        }
    }
}

impl<'de> Deserialize<'de> for SlotChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(if raw == "any" { SlotChoice::Any } else { SlotChoice::Slot(SlotId::new(raw)) })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    CarArrives { plate: String, slot: SlotChoice },
    CarDeparts { plate: String },
    SlotFault { slot: SlotId, stuck: Reading },
    SlotRestore { slot: SlotId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scenario {
    pub events: Vec<ScenarioEvent>,
}

impl Scenario {
    pub fn last_event_ms(&self) -> u64 {
        self.events.last().map_or(0, |e| e.at_ms)
    }

    pub fn to_lines(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("scenario events serialize") + "\n")
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: event at {at_ms} ms is earlier than the previous event")]
    UnsortedEvents { line: usize, at_ms: u64 },
    #[error("line {line}: plate {plate} arrives while already parked")]
    DuplicatePlate { line: usize, plate: String },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Parses and validates a script. Blank lines are skipped.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut events = Vec::new();
    let mut parked: HashSet<String> = HashSet::new();
    let mut last_at = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let event: ScenarioEvent = serde_json::from_str(raw)
            .map_err(|e| ScenarioError::Parse { line, message: e.to_string() })?;
        if event.at_ms < last_at {
            return Err(ScenarioError::UnsortedEvents { line, at_ms: event.at_ms });
        }
        last_at = event.at_ms;
        match &event.action {
            Action::CarArrives { plate, .. } => {
                if !parked.insert(plate.clone()) {
                    return Err(ScenarioError::DuplicatePlate { line, plate: plate.clone() });
                }
            }
            Action::CarDeparts { plate } => {
                parked.remove(plate);
            }
            Action::SlotFault { .. } | Action::SlotRestore { .. } => {}
        }
        events.push(event);
    }
    Ok(Scenario { events })
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    load_scenario(&text)
}
