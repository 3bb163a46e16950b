use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::Serialize;
use spms_core::{natural_cmp, GateId, GateKind, LotConfig, SlotId};
use tracing::warn;

use crate::clock::SimClock;
use crate::hardware::{ir_reading, lcd_render, servo_set_angle, GateState, LcdFrame, Reading, SimSlot};
use crate::scenario::{Action, Scenario, ScenarioEvent, SlotChoice};
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    /// Full snapshot period. Zero turns heartbeats off.
    pub heartbeat_ms: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { heartbeat_ms: 2000 }
    }
}

/// One message the hardware put on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Telemetry {
    pub at_ms: u64,
    pub topic: String,
    pub payload: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    NoFreeSlot,
    UnknownPlate,
    PlateAlreadyParked,
    SlotOccupied,
    UnknownSlot,
    UnknownGate,
    MalformedGateCommand,
    DisplayRejected,
    UnknownTopic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimWarning {
    pub at_ms: u64,
    pub kind: WarningKind,
    pub detail: String,
}

impl fmt::Display for SimWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ms: {:?}: {}", self.at_ms, self.kind, self.detail)
    }
}

#[derive(Debug, Clone)]
enum Downlink {
    Gate { gate_id: GateId, payload: Vec<u8> },
    Display { payload: Vec<u8> },
}

pub struct Simulator {
    lot_id: String,
    clock: SimClock,
    config: SimConfig,
    slots: Vec<SimSlot>,
    gates: Vec<GateState>,
    entry_gate: Option<GateId>,
    exit_gate: Option<GateId>,
    lcd: LcdFrame,
    parked: BTreeMap<String, usize>,
    events: Vec<ScenarioEvent>,
    next_event: usize,
    next_heartbeat_ms: Option<u64>,
    downlink: VecDeque<Downlink>,
    warnings: Vec<SimWarning>,
    log: Vec<Telemetry>,
}

impl Simulator {
    pub fn new(lot: &LotConfig, scenario: Scenario, config: SimConfig) -> Self {
        let mut labels = lot.slots.clone();
        labels.sort_by(|a, b| natural_cmp(a, b));
        let slots = labels
            .into_iter()
            .map(|label| SimSlot { slot_id: SlotId::new(label), physically_occupied: false, fault: None })
            .collect();
        let gates = lot.gates.iter().map(|g| GateState::closed(g.gate_id.clone())).collect();
        let gate_of = |kind: GateKind| lot.gates.iter().find(|g| g.kind == kind).map(|g| g.gate_id.clone());
        Self {
            lot_id: lot.lot_id.as_str().to_owned(),
            clock: SimClock::new(),
            next_heartbeat_ms: (config.heartbeat_ms > 0).then_some(0),
            config,
            slots,
            gates,
            entry_gate: gate_of(GateKind::Entry),
            exit_gate: gate_of(GateKind::Exit),
            lcd: LcdFrame::blank(),
            parked: BTreeMap::new(),
            events: scenario.events,
            next_event: 0,
            downlink: VecDeque::new(),
            warnings: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn lot_id(&self) -> &str {
        &self.lot_id
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn slots(&self) -> &[SimSlot] {
        &self.slots
    }

    pub fn gates(&self) -> &[GateState] {
        &self.gates
    }

    pub fn gate(&self, gate_id: &GateId) -> Option<&GateState> {
        self.gates.iter().find(|g| &g.gate_id == gate_id)
    }

    pub fn lcd(&self) -> &LcdFrame {
        &self.lcd
    }

    pub fn warnings(&self) -> &[SimWarning] {
        &self.warnings
    }

    /// Everything published since construction, in order.
    pub fn publish_log(&self) -> &[Telemetry] {
        &self.log
    }

    /// The publish log as `at_ms<TAB>topic<TAB>payload` lines.
    pub fn publish_log_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in &self.log {
            out.extend_from_slice(format!("{}\t{}\t{}\n", t.at_ms, t.topic, t.payload).as_bytes());
        }
        out
    }

    pub fn where_parked(&self, plate: &str) -> Option<&SlotId> {
        self.parked.get(plate).map(|&i| &self.slots[i].slot_id)
    }

    pub fn last_event_ms(&self) -> u64 {
        self.events.last().map_or(0, |e| e.at_ms)
    }

    pub fn scenario_done(&self) -> bool {
        self.next_event >= self.events.len()
    }

    /// Time of the next scheduled scenario event or heartbeat.
    pub fn next_wake_ms(&self) -> Option<u64> {
        let ev = self.events.get(self.next_event).map(|e| e.at_ms);
        match (ev, self.next_heartbeat_ms) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn topic_ir(&self, slot_id: &SlotId) -> String {
        format!("lot/{}/slot/{}/ir", self.lot_id, slot_id)
    }

    pub fn topic_piezo(&self, gate_id: &GateId) -> String {
        format!("lot/{}/gate/{}/piezo", self.lot_id, gate_id)
    }

    /// Filters the network driver subscribes to.
    pub fn downlink_filters(&self) -> [String; 2] {
        [format!("lot/{}/gate/+/cmd", self.lot_id), format!("lot/{}/display", self.lot_id)]
    }

    /// Queues an incoming broker message. It takes effect at the start of
    /// the next step.
    pub fn queue_message(&mut self, topic: &str, payload: &[u8]) {
        let levels: Vec<&str> = topic.split('/').collect();
        match levels.as_slice() {
            ["lot", lot, "gate", gate, "cmd"] if *lot == self.lot_id => self.downlink.push_back(Downlink::Gate {
                gate_id: GateId::new(*gate),
                payload: payload.to_vec(),
            }),
            ["lot", lot, "display"] if *lot == self.lot_id => {
                self.downlink.push_back(Downlink::Display { payload: payload.to_vec() })
            }
            _ => self.warn(WarningKind::UnknownTopic, topic.to_owned()),
        }
    }

    pub fn queue_gate_command(&mut self, gate_id: GateId, payload: &[u8]) {
        self.downlink.push_back(Downlink::Gate { gate_id, payload: payload.to_vec() });
    }

    /// Moves a servo. Bad payloads and unknown gates leave everything as it
    /// was and are only recorded as warnings.
    pub fn apply_gate_command(&mut self, gate_id: &GateId, payload: &[u8]) -> Option<GateState> {
        let Some(idx) = self.gates.iter().position(|g| &g.gate_id == gate_id) else {
            self.warn(WarningKind::UnknownGate, gate_id.to_string());
            return None;
        };
        let pulse = std::str::from_utf8(payload)
            .ok()
            .and_then(|s| s.trim().parse::<u32>().ok())
            .filter(|p| servo_set_angle(*p).is_ok());
        match pulse {
            Some(p) => {
                let gate = &mut self.gates[idx];
                gate.servo_pulse_us = p;
                if gate.is_open() {
                    gate.vehicle_on_pad = false;
                }
            }
            None => self.warn(
                WarningKind::MalformedGateCommand,
                format!("{gate_id}: {:?}", String::from_utf8_lossy(payload)),
            ),
        }
        Some(self.gates[idx].clone())
    }

    pub fn apply_display(&mut self, payload: &[u8]) {
        let text = String::from_utf8_lossy(payload);
        match lcd_render(&text) {
            Ok(frame) => self.lcd = frame,
            Err(e) => self.warn(WarningKind::DisplayRejected, e.to_string()),
        }
    }

    /// Drains queued downlink traffic, then runs every scenario event and
    /// heartbeat due up to and including `until_ms`. At equal times a
    /// scenario event goes before the heartbeat.
    pub fn step(&mut self, until_ms: u64) -> Result<Vec<Telemetry>, SimError> {
        let now = self.clock.now_ms();
        if until_ms < now {
            return Err(SimError::ClockBackwards { now_ms: now, until_ms });
        }
        while let Some(d) = self.downlink.pop_front() {
            match d {
                Downlink::Gate { gate_id, payload } => {
                    self.apply_gate_command(&gate_id, &payload);
                }
                Downlink::Display { payload } => self.apply_display(&payload),
            }
        }

        let first_new = self.log.len();
        loop {
            let ev_at = self.events.get(self.next_event).map(|e| e.at_ms).filter(|&t| t <= until_ms);
            let hb_at = self.next_heartbeat_ms.filter(|&t| t <= until_ms);
            match (ev_at, hb_at) {
                (Some(e), h) if h.is_none_or(|h| e <= h) => {
                    self.clock.advance_to(e);
                    let event = self.events[self.next_event].clone();
                    self.next_event += 1;
                    self.apply_event(&event.action);
                }
                (_, Some(h)) => {
                    self.clock.advance_to(h);
                    self.heartbeat();
                    self.next_heartbeat_ms = Some(h + self.config.heartbeat_ms);
                }
                _ => break,
            }
        }
        self.clock.advance_to(until_ms);
        Ok(self.log[first_new..].to_vec())
    }

    fn warn(&mut self, kind: WarningKind, detail: String) {
        let w = SimWarning { at_ms: self.clock.now_ms(), kind, detail };
        warn!("simulator: {w}");
        self.warnings.push(w);
    }

    fn emit(&mut self, topic: String, payload: &str) {
        self.log.push(Telemetry { at_ms: self.clock.now_ms(), topic, payload: payload.to_owned() });
    }

    fn heartbeat(&mut self) {
        for i in 0..self.slots.len() {
            let topic = self.topic_ir(&self.slots[i].slot_id);
            self.emit(topic, ir_reading(&self.slots[i]).payload());
        }
    }

    /// Applies `change` to slot `idx` and publishes if the reading moved.
    fn mutate_slot(&mut self, idx: usize, change: impl FnOnce(&mut SimSlot)) {
        let before = ir_reading(&self.slots[idx]);
        change(&mut self.slots[idx]);
        let after = ir_reading(&self.slots[idx]);
        if before != after {
            let topic = self.topic_ir(&self.slots[idx].slot_id);
            self.emit(topic, after.payload());
        }
    }

    fn press_pad(&mut self, gate_id: Option<GateId>) {
        let Some(gate_id) = gate_id else { return };
        if let Some(g) = self.gates.iter_mut().find(|g| g.gate_id == gate_id) {
            g.vehicle_on_pad = true;
        }
        let topic = self.topic_piezo(&gate_id);
        self.emit(topic, Reading::Clear.payload());
    }

    fn slot_index(&self, slot_id: &SlotId) -> Option<usize> {
        self.slots.iter().position(|s| &s.slot_id == slot_id)
    }

    fn apply_event(&mut self, action: &Action) {
        match action {
            Action::CarArrives { plate, slot } => {
                if let Some(at) = self.where_parked(plate) {
                    let detail = format!("{plate} already in {at}");
                    self.warn(WarningKind::PlateAlreadyParked, detail);
                    return;
                }
                let idx = match slot {
                    SlotChoice::Any => match self.slots.iter().position(|s| !s.physically_occupied) {
                        Some(i) => i,
                        None => return self.warn(WarningKind::NoFreeSlot, plate.clone()),
                    },
                    SlotChoice::Slot(id) => match self.slot_index(id) {
                        None => return self.warn(WarningKind::UnknownSlot, id.to_string()),
                        Some(i) if self.slots[i].physically_occupied => {
                            return self.warn(WarningKind::SlotOccupied, format!("{plate} wanted {id}"))
                        }
                        Some(i) => i,
                    },
                };
                self.press_pad(self.entry_gate.clone());
                self.mutate_slot(idx, |s| s.physically_occupied = true);
                self.parked.insert(plate.clone(), idx);
            }
            Action::CarDeparts { plate } => {
                let Some(idx) = self.parked.remove(plate) else {
                    return self.warn(WarningKind::UnknownPlate, plate.clone());
                };
                self.mutate_slot(idx, |s| s.physically_occupied = false);
                self.press_pad(self.exit_gate.clone());
            }
            Action::SlotFault { slot, stuck } => match self.slot_index(slot) {
                Some(i) => self.mutate_slot(i, |s| s.fault = Some(*stuck)),
                None => self.warn(WarningKind::UnknownSlot, slot.to_string()),
            },
            Action::SlotRestore { slot } => match self.slot_index(slot) {
                Some(i) => self.mutate_slot(i, |s| s.fault = None),
                None => self.warn(WarningKind::UnknownSlot, slot.to_string()),
            },
        }
    }
}
