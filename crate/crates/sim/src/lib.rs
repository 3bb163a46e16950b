//! Simulated lot hardware.
//!
//! Infrared slot sensors (active-low: `"0"` means a car is present), gates
//! with a servo arm and a piezo pad, and the 16x2 character display. Time
//! is virtual and only advances through [`Simulator::step`], so a scenario
//! replays identically on every run.

pub mod clock;
pub mod hardware;
pub mod runner;
pub mod scenario;
pub mod simulator;

pub use clock::SimClock;
pub use hardware::{ir_reading, lcd_render, servo_set_angle, GateState, LcdFrame, Reading, SimSlot};
pub use scenario::{load_scenario, Action, Scenario, ScenarioError, ScenarioEvent, SlotChoice};
pub use simulator::{SimConfig, SimWarning, Simulator, Telemetry, WarningKind};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("servo pulse {0} us outside 1000..=2000")]
    PulseOutOfRange(u32),
    #[error("display text is {0} characters; the panel holds 32")]
    TextTooLong(usize),
    #[error("cannot step backwards from {now_ms} ms to {until_ms} ms")]
    ClockBackwards { now_ms: u64, until_ms: u64 },
}
