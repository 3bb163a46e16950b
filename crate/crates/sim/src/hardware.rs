//! Individual hardware parts: IR sensor, servo gate and character LCD.

use std::fmt;

use serde::{Deserialize, Serialize};
use spms_core::{GateId, SlotId};

use crate::SimError;

pub const PULSE_MIN_US: u32 = 1000;
pub const PULSE_MAX_US: u32 = 2000;
pub const LCD_COLS: usize = 16;
pub const LCD_ROWS: usize = 2;

/// An IR sensor output. The sensor is active-low.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reading {
    #[serde(rename = "0")]
    Obstacle,
    #[serde(rename = "1")]
    Clear,
}

impl Reading {
    pub fn payload(self) -> &'static str {
        match self {
            Reading::Obstacle => "0",
            Reading::Clear => "1",
        }
    }

    pub fn parse(payload: &[u8]) -> Option<Reading> {
        match payload {
            b"0" => Some(Reading::Obstacle),
            b"1" => Some(Reading::Clear),
            _ => None,
        }
    }
}

impl fmt::Display for Reading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.payload())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimSlot {
    pub slot_id: SlotId,
    pub physically_occupied: bool,
    /// Stuck-at value; while set it is the only thing the sensor reports.
    pub fault: Option<Reading>,
}

pub fn ir_reading(slot: &SimSlot) -> Reading {
    match slot.fault {
        Some(stuck) => stuck,
        None if slot.physically_occupied => Reading::Obstacle,
        None => Reading::Clear,
    }
}

/// Linear servo map: 1000 us is 0 degrees, 2000 us is 180 degrees.
pub fn servo_set_angle(pulse_us: u32) -> Result<f64, SimError> {
    if !(PULSE_MIN_US..=PULSE_MAX_US).contains(&pulse_us) {
        return Err(SimError::PulseOutOfRange(pulse_us));
    }
    Ok(f64::from(pulse_us - PULSE_MIN_US) * 180.0 / f64::from(PULSE_MAX_US - PULSE_MIN_US))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateState {
    pub gate_id: GateId,
    pub servo_pulse_us: u32,
    pub vehicle_on_pad: bool,
}

impl GateState {
    pub fn closed(gate_id: GateId) -> Self {
        Self { gate_id, servo_pulse_us: PULSE_MIN_US, vehicle_on_pad: false }
    }

    pub fn angle_deg(&self) -> f64 {
        servo_set_angle(self.servo_pulse_us).expect("pulse kept in range")
    }

    pub fn is_open(&self) -> bool {
        self.angle_deg() >= 90.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LcdFrame {
    pub rows: [String; LCD_ROWS],
}

impl LcdFrame {
    pub fn blank() -> Self {
        Self { rows: [" ".repeat(LCD_COLS), " ".repeat(LCD_COLS)] }
    }
}

/// Lays text out over the two rows, space padded. Control characters are
/// shown as spaces. Text longer than 32 characters is rejected, not cut.
pub fn lcd_render(text: &str) -> Result<LcdFrame, SimError> {
    let cells: Vec<char> = text
        .chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect();
    if cells.len() > LCD_COLS * LCD_ROWS {
        return Err(SimError::TextTooLong(cells.len()));
    }
    let row = |from: usize| -> String {
        let mut s: String = cells.iter().skip(from).take(LCD_COLS).collect();
        let used = cells.len().saturating_sub(from).min(LCD_COLS);
        s.extend(std::iter::repeat_n(' ', LCD_COLS - used));
        s
    };
    Ok(LcdFrame { rows: [row(0), row(LCD_COLS)] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slot(occupied: bool, fault: Option<Reading>) -> SimSlot {
        SimSlot { slot_id: SlotId::new("S1"), physically_occupied: occupied, fault }
    }

    #[test]
    fn active_low_reading() {
        assert_eq!(ir_reading(&slot(true, None)).payload(), "0");
        assert_eq!(ir_reading(&slot(false, None)).payload(), "1");
        assert_eq!(ir_reading(&slot(false, Some(Reading::Obstacle))).payload(), "0");
        assert_eq!(ir_reading(&slot(true, Some(Reading::Clear))).payload(), "1");
    }

    #[test]
    fn servo_map() {
        assert_eq!(servo_set_angle(1000), Ok(0.0));
        assert_eq!(servo_set_angle(2000), Ok(180.0));
        assert_eq!(servo_set_angle(1500), Ok(90.0));
        assert_eq!(servo_set_angle(999), Err(SimError::PulseOutOfRange(999)));
        assert_eq!(servo_set_angle(2001), Err(SimError::PulseOutOfRange(2001)));
        let mut g = GateState::closed(GateId::new("G1"));
        assert!(!g.is_open());
        g.servo_pulse_us = 1500;
        assert!(g.is_open());
        g.servo_pulse_us = 1499;
        assert!(!g.is_open());
    }

    #[test]
    fn lcd_layout() {
        let f = lcd_render("WELCOME").unwrap();
        assert_eq!(f.rows[0], "WELCOME         ");
        assert_eq!(f.rows[1], " ".repeat(16));

        let full = "ABCDEFGHIJKLMNOPQRSTUVWXYZ012345";
        assert_eq!(full.chars().count(), 32);
        let f = lcd_render(full).unwrap();
        assert_eq!(f.rows[0], "ABCDEFGHIJKLMNOP");
        assert_eq!(f.rows[1], "QRSTUVWXYZ012345");

        assert_eq!(lcd_render(&format!("{full}6")), Err(SimError::TextTooLong(33)));
        assert_eq!(lcd_render("").unwrap(), LcdFrame::blank());
        assert_eq!(lcd_render("a\nb").unwrap().rows[0], "a b             ");
        // multi-byte characters count as one cell each
        assert_eq!(lcd_render(&"é".repeat(32)).unwrap().rows[1].chars().count(), 16);
    }
}
