#![allow(dead_code)]

use spms_core::{ExtraService, GateConfig, GateKind, LotConfig, Tariff, UnixSeconds, UserId};
use spms_service::{apply, Applied, Command, Reply, ServiceState};

pub const T0: UnixSeconds = 1_700_000_000;

pub fn lot(id: &str, slots: &[&str]) -> LotConfig {
    LotConfig {
        lot_id: id.into(),
        name: format!("Lot {id}"),
        lat: 30.0444,
        lon: 31.2357,
        slots: slots.iter().map(|s| s.to_string()).collect(),
        gates: vec![
            GateConfig { gate_id: "G-IN".into(), kind: GateKind::Entry },
            GateConfig { gate_id: "G-OUT".into(), kind: GateKind::Exit },
        ],
        tariff: Tariff::default(),
        extras: vec![ExtraService { code: "wash".into(), name: "Car wash".into(), price_minor: 5000 }],
    }
}

/// Drives `apply` directly with an explicit clock.
pub struct Harness {
    pub s: ServiceState,
    pub t: UnixSeconds,
}

impl Harness {
    pub fn new() -> Self {
        let mut h = Self { s: ServiceState::default(), t: T0 };
        assert!(h.run(Command::CreateLot { config: lot("L1", &["S1", "S2", "S3", "S4"]) }).is_ok());
        h
    }

    pub fn run(&mut self, cmd: Command) -> Applied {
        apply(&mut self.s, &cmd, self.t)
    }

    pub fn at(&mut self, t: UnixSeconds, cmd: Command) -> Applied {
        self.t = t;
        self.run(cmd)
    }

    pub fn user(&mut self, email: &str) -> UserId {
        match self.run(Command::RegisterUser {
            name: "Test".into(),
            email: email.into(),
            phone: "+20100000000".into(),
            password_hash: format!("hash-of-{email}"),
        })
        .outcome
        {
            Ok(Reply::User { user }) => user.user_id,
            other => panic!("register failed: {other:?}"),
        }
    }

    pub fn book(&mut self, user: &UserId, slot: Option<&str>, start: UnixSeconds, end: UnixSeconds) -> Applied {
        self.run(Command::CreateReservation {
            user_id: user.clone(),
            lot_id: "L1".into(),
            slot_id: slot.map(Into::into),
            window_start: start,
            window_end: end,
            eta: None,
            idempotency_key: None,
        })
    }

    pub fn ir(&mut self, slot: &str, payload: &str) -> Applied {
        self.run(Command::SensorEvent { topic: format!("lot/L1/slot/{slot}/ir"), payload: payload.into() })
    }

    pub fn slot_state(&self, slot: &str) -> spms_core::SlotState {
        self.s.slot_state(&"L1".into(), &slot.into()).unwrap()
    }
}

pub fn reservation(a: &Applied) -> spms_core::Reservation {
    match &a.outcome {
        Ok(Reply::Reservation { reservation, .. }) => reservation.clone(),
        other => panic!("expected a reservation, got {other:?}"),
    }
}

pub fn err_code(a: &Applied) -> &'static str {
    match &a.outcome {
        Err(e) => e.code(),
        Ok(r) => panic!("expected an error, got {r:?}"),
    }
}
