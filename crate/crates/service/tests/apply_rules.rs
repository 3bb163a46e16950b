mod common;

use std::collections::HashSet;

use common::{err_code, lot, reservation, Harness, T0};
use spms_core::{occupancy_summary, ReservationState, SlotState, MAX_BOOKING_SECONDS};
use spms_service::apply::code_digest;
use spms_service::query::{list_slots, search_lots};
use spms_service::{Command, Event, Reply};

const HOUR: i64 = 3600;

#[test]
fn ten_thousand_registrations_get_distinct_ids() {
    let mut h = Harness::new();
    let ids: HashSet<_> = (0..10_000).map(|i| h.user(&format!("user{i}@example.com"))).collect();
    assert_eq!(ids.len(), 10_000);
    assert_eq!(h.s.users.len(), 10_000);
}

#[test]
fn duplicate_and_invalid_email() {
    let mut h = Harness::new();
    h.user("dup@example.com");
    let again = h.run(Command::RegisterUser {
        name: "x".into(),
        email: "  DUP@Example.com".into(),
        phone: "1".into(),
        password_hash: "h".into(),
    });
    assert_eq!(err_code(&again), "duplicate_email");
    let bad = h.run(Command::RegisterUser {
        name: "x".into(),
        email: "not-an-email".into(),
        phone: "1".into(),
        password_hash: "h".into(),
    });
    assert_eq!(err_code(&bad), "invalid_email");
}

#[test]
fn login_issues_day_long_token() {
    let mut h = Harness::new();
    let u = h.user("a@example.com");
    let ok = h.run(Command::Login {
        user_id: u.clone(),
        password_hash: "hash-of-a@example.com".into(),
        token_digest: "d1".into(),
    });
    assert_eq!(ok.outcome, Ok(Reply::Token { user_id: u.clone(), expires_at: T0 + 24 * HOUR }));
    let stale = h.run(Command::Login { user_id: u, password_hash: "old".into(), token_digest: "d2".into() });
    assert_eq!(err_code(&stale), "invalid_credentials");
    assert!(!h.s.tokens.contains_key("d2"));
}

#[test]
fn password_reset_lifecycle() {
    let mut h = Harness::new();
    let u = h.user("a@example.com");
    h.run(Command::Login { user_id: u.clone(), password_hash: "hash-of-a@example.com".into(), token_digest: "tok".into() });

    let before = h.s.notifications.len();
    assert!(h.run(Command::ResetPassword { email: "nobody@example.com".into(), code: "ZZZ".into() }).is_ok());
    assert_eq!(h.s.notifications.len(), before, "unknown email leaves no trace in the outbox");

    h.run(Command::ResetPassword { email: "A@example.com".into(), code: "CODE1".into() });
    let n = h.s.notifications.last().unwrap();
    assert_eq!(n.user_id, u);
    assert!(n.body.contains("CODE1"));

    // exactly at the 15 minute mark the code still works
    let redeemed = h.at(T0 + 15 * 60, Command::RedeemReset { code: "CODE1".into(), new_password_hash: "new".into() });
    assert!(redeemed.is_ok());
    assert_eq!(h.s.users[&u].password_hash, "new");
    assert!(h.s.tokens.is_empty(), "old sessions are revoked");
    let old = h.run(Command::Login { user_id: u.clone(), password_hash: "hash-of-a@example.com".into(), token_digest: "x".into() });
    assert_eq!(err_code(&old), "invalid_credentials");

    let twice = h.run(Command::RedeemReset { code: "CODE1".into(), new_password_hash: "again".into() });
    assert_eq!(err_code(&twice), "code_already_used");

    h.run(Command::ResetPassword { email: "a@example.com".into(), code: "CODE2".into() });
    let late = h.at(h.t + 16 * 60, Command::RedeemReset { code: "CODE2".into(), new_password_hash: "x".into() });
    assert_eq!(err_code(&late), "code_expired");
    assert!(!h.s.resets[&code_digest("CODE2")].used);

    let unknown = h.run(Command::RedeemReset { code: "NOPE".into(), new_password_hash: "x".into() });
    assert_eq!(err_code(&unknown), "invalid_reset_code");
}

/// Latitude offset of `metres` due north on the sphere used for search.
fn north(lat: f64, metres: f64) -> f64 {
    lat + (metres / 6_371_000.0).to_degrees()
}

#[test]
fn search_by_radius() {
    let mut h = Harness::new();
    let (lat, lon) = (30.0, 31.0);
    for (id, d) in [("FAR", 300.0), ("NEAR", 100.0), ("MID", 200.0)] {
        let mut cfg = lot(id, &["A1"]);
        cfg.lat = north(lat, d);
        cfg.lon = lon;
        assert!(h.run(Command::CreateLot { config: cfg }).is_ok());
    }
    let hits = search_lots(&h.s, lat, lon, 250.0).unwrap();
    let ids: Vec<_> = hits.iter().map(|x| x.lot_id.as_str()).collect();
    assert_eq!(ids, ["NEAR", "MID"]);
    assert!((hits[0].distance_m - 100.0).abs() < 0.01);
    assert!((hits[1].distance_m - 200.0).abs() < 0.01);

    let mut here = lot("HERE", &["A1"]);
    here.lat = lat;
    here.lon = lon;
    h.run(Command::CreateLot { config: here });
    let hits = search_lots(&h.s, lat, lon, 1.0).unwrap();
    assert_eq!(hits[0].lot_id.as_str(), "HERE");
    assert_eq!(hits[0].distance_m, 0.0);
    assert_eq!(err_code_of(search_lots(&h.s, lat, lon, 0.0)), "invalid_query");
}

fn err_code_of<T: std::fmt::Debug>(r: Result<T, spms_service::ServiceError>) -> &'static str {
    r.unwrap_err().code()
}

#[test]
fn booking_notifies_once_and_reserves_current_slot() {
    let mut h = Harness::new();
    let u = h.user("a@example.com");
    let before = h.s.notifications.len();
    let a = h.book(&u, None, T0, T0 + 2 * HOUR);
    let r = reservation(&a);
    assert_eq!(r.state, ReservationState::Active);
    assert_eq!(r.slot_id.as_str(), "S1");
    assert_eq!(r.hold_deadline, T0 + 30 * 60);
    assert_eq!(h.s.notifications.len(), before + 1);
    assert_eq!(h.slot_state("S1"), SlotState::Reserved);

    let view = list_slots(&h.s, &"L1".into(), h.t).unwrap();
    let reserved = view.iter().filter(|v| v.state == SlotState::Reserved).count();
    assert_eq!(reserved, 1);
    let summary = occupancy_summary(&h.s.lots[&"L1".into()].lot);
    assert_eq!(summary.reserved, reserved);
    assert_eq!(summary.free, view.iter().filter(|v| v.state == SlotState::Free).count());
    assert_eq!(view[0].next_reservation_window.unwrap().start, T0);

    // a future booking does not touch the slot yet
    let later = reservation(&h.book(&u, Some("S2"), T0 + 5 * HOUR, T0 + 6 * HOUR));
    assert_eq!(h.slot_state("S2"), SlotState::Free);
    // ... until its window starts
    h.at(T0 + 5 * HOUR, Command::TimerTick);
    assert_eq!(h.slot_state("S2"), SlotState::Reserved);
    assert_eq!(later.slot_id.as_str(), "S2");
}

#[test]
fn window_validation_at_the_boundary() {
    let mut h = Harness::new();
    let u = h.user("a@example.com");
    let start = T0 + HOUR;
    let too_long = h.book(&u, None, start, start + MAX_BOOKING_SECONDS + 1);
    assert_eq!(err_code(&too_long), "booking_too_long");
    let exact = h.book(&u, None, start, start + MAX_BOOKING_SECONDS);
    assert!(exact.is_ok());
    assert_eq!(err_code(&h.book(&u, None, T0 - HOUR, T0)), "booking_in_past");
    assert_eq!(err_code(&h.book(&u, None, start, start)), "empty_window");
    // a start a few seconds behind the applied time is accepted
    assert!(h.book(&u, Some("S4"), T0 - 30, T0 + 60).is_ok());
}

#[test]
fn race_for_the_last_slot_both_orders() {
    for first_is_a in [true, false] {
        let mut h = Harness::new();
        let hold = h.user("hold@example.com");
        for s in ["S1", "S2", "S3"] {
            assert!(h.book(&hold, Some(s), T0, T0 + HOUR).is_ok());
        }
        let a = h.user("a@example.com");
        let b = h.user("b@example.com");
        let (x, y) = if first_is_a { (a, b) } else { (b, a) };
        let first = h.book(&x, None, T0, T0 + HOUR);
        let second = h.book(&y, None, T0, T0 + HOUR);
        assert_eq!(reservation(&first).slot_id.as_str(), "S4");
        assert_eq!(reservation(&first).user_id, x);
        assert_eq!(err_code(&second), "no_slot_free");
        let explicit = h.book(&y, Some("S4"), T0, T0 + HOUR);
        assert_eq!(err_code(&explicit), "slot_unavailable");
    }
}

#[test]
fn idempotency_key_dedupes() {
    let mut h = Harness::new();
    let u = h.user("a@example.com");
    let cmd = Command::CreateReservation {
        user_id: u.clone(),
        lot_id: "L1".into(),
        slot_id: None,
        window_start: T0,
        window_end: T0 + HOUR,
        eta: Some(T0 + 600),
        idempotency_key: Some("k-1".into()),
    };
    let first = h.run(cmd.clone());
    let notes = h.s.notifications.len();
    let second = h.run(cmd);
    assert_eq!(reservation(&first).reservation_id, reservation(&second).reservation_id);
    assert!(matches!(second.outcome, Ok(Reply::Reservation { replayed: true, .. })));
    assert_eq!(h.s.reservations.len(), 1);
    assert_eq!(h.s.notifications.len(), notes);
    assert_eq!(reservation(&first).eta, Some(T0 + 600));
}

#[test]
fn cancel_rules() {
    let mut h = Harness::new();
    let a = h.user("a@example.com");
    let b = h.user("b@example.com");
    let r = reservation(&h.book(&a, Some("S1"), T0, T0 + HOUR));
    assert_eq!(h.slot_state("S1"), SlotState::Reserved);

    let wrong = h.run(Command::CancelReservation { user_id: b, reservation_id: r.reservation_id.clone() });
    assert_eq!(err_code(&wrong), "not_owner");
    let ok = h.run(Command::CancelReservation { user_id: a.clone(), reservation_id: r.reservation_id.clone() });
    assert_eq!(reservation(&ok).state, ReservationState::Cancelled);
    assert_eq!(h.slot_state("S1"), SlotState::Free);
    let again = h.run(Command::CancelReservation { user_id: a.clone(), reservation_id: r.reservation_id });
    assert_eq!(err_code(&again), "illegal_transition");

    let r2 = reservation(&h.book(&a, Some("S2"), T0, T0 + HOUR));
    h.ir("S2", "0");
    assert_eq!(h.s.reservations[&r2.reservation_id].state, ReservationState::CheckedIn);
    let parked = h.run(Command::CancelReservation { user_id: a, reservation_id: r2.reservation_id });
    assert_eq!(err_code(&parked), "illegal_transition");
}

#[test]
fn walk_in_is_billed_by_the_quarter_hour() {
    let mut h = Harness::new();
    let a = h.ir("S1", "0");
    assert_eq!(h.slot_state("S1"), SlotState::Occupied);
    assert!(a.events.iter().any(|e| matches!(e, Event::SessionOpened { reservation_id: None, .. })));
    let sessions = h.s.sessions.len();

    h.t += 30;
    let repeat = h.ir("S1", "0");
    assert!(repeat.events.is_empty());
    assert_eq!(h.s.sessions.len(), sessions);

    // 61 minutes after entry: 5 quanta of 15 minutes at 250 = 1250
    h.t = T0 + 61 * 60;
    h.ir("S1", "1");
    assert_eq!(h.slot_state("S1"), SlotState::Free);
    let bill = h.s.bills.values().next().unwrap();
    assert_eq!(bill.duration_minutes, 61);
    assert_eq!(bill.total_minor, 1250);
    assert!(h.s.open_sessions.is_empty());

    // heartbeat "1" on a free slot changes nothing
    let hb = h.ir("S1", "1");
    assert!(hb.events.is_empty());
    assert!(h.s.anomalies.is_empty());
}

#[test]
fn reserved_car_checks_in_and_out() {
    let mut h = Harness::new();
    let u = h.user("a@example.com");
    let r = reservation(&h.book(&u, Some("S2"), T0, T0 + 2 * HOUR));
    h.at(T0 + 300, Command::SensorEvent { topic: "lot/L1/slot/S2/ir".into(), payload: "0".into() });
    assert_eq!(h.s.reservations[&r.reservation_id].state, ReservationState::CheckedIn);
    assert_eq!(h.slot_state("S2"), SlotState::Occupied);
    let sid = h.s.open_session_at(&"L1".into(), &"S2".into()).unwrap().session_id.clone();

    assert!(h.run(Command::AddExtra { user_id: u.clone(), session_id: sid.clone(), code: "wash".into() }).is_ok());
    let unknown = h.run(Command::AddExtra { user_id: u.clone(), session_id: sid.clone(), code: "valet".into() });
    assert_eq!(err_code(&unknown), "unknown_extra");

    h.t = T0 + 300 + 60 * 60;
    h.ir("S2", "1");
    assert_eq!(h.s.reservations[&r.reservation_id].state, ReservationState::Completed);
    let bill = h.s.bills.values().next().unwrap();
    assert_eq!((bill.base_fee_minor, bill.extras_fee_minor, bill.total_minor), (1000, 5000, 6000));
    let late = h.run(Command::AddExtra { user_id: u, session_id: sid, code: "wash".into() });
    assert_eq!(err_code(&late), "session_closed");
}

#[test]
fn departure_hands_slot_to_current_booking() {
    let mut h = Harness::new();
    let u = h.user("a@example.com");
    h.ir("S1", "0");
    let r = reservation(&h.book(&u, Some("S1"), T0 + HOUR, T0 + 2 * HOUR));
    h.at(T0 + HOUR + 60, Command::TimerTick);
    assert_eq!(h.slot_state("S1"), SlotState::Occupied, "walk-in overstays into the booking");
    h.ir("S1", "1");
    assert_eq!(h.slot_state("S1"), SlotState::Reserved);
    h.ir("S1", "0");
    assert_eq!(h.s.reservations[&r.reservation_id].state, ReservationState::CheckedIn);
}

#[test]
fn walk_in_extras_and_bills_are_not_anyones() {
    let mut h = Harness::new();
    let u = h.user("a@example.com");
    h.ir("S3", "0");
    let sid = h.s.open_session_at(&"L1".into(), &"S3".into()).unwrap().session_id.clone();
    let extra = h.run(Command::AddExtra { user_id: u.clone(), session_id: sid, code: "wash".into() });
    assert_eq!(err_code(&extra), "not_owner");
    h.t += 600;
    h.ir("S3", "1");
    let bill_id = h.s.bills.keys().next().unwrap().clone();
    assert_eq!(spms_service::query::bill_for(&h.s, &u, &bill_id).unwrap_err().code(), "not_owner");
}

#[test]
fn hold_deadline_is_strict() {
    let mut h = Harness::new();
    let u = h.user("a@example.com");
    let r = reservation(&h.book(&u, Some("S1"), T0, T0 + 2 * HOUR));
    let deadline = r.hold_deadline;

    let none = h.at(deadline, Command::TimerTick);
    assert!(none.events.is_empty());
    assert_eq!(h.s.reservations[&r.reservation_id].state, ReservationState::Active);

    let due = h.at(deadline + 1, Command::TimerTick);
    assert!(due.events.contains(&Event::ReservationChanged {
        reservation_id: r.reservation_id.clone(),
        from: Some(ReservationState::Active),
        to: ReservationState::Expired,
    }));
    assert_eq!(h.slot_state("S1"), SlotState::Free);
    assert!(h.s.bills.is_empty(), "no-shows are not billed");
}

#[test]
fn arrival_after_hold_is_a_walk_in() {
    let mut h = Harness::new();
    let u = h.user("a@example.com");
    let r = reservation(&h.book(&u, Some("S1"), T0, T0 + 2 * HOUR));
    h.t = r.hold_deadline + 5;
    h.ir("S1", "0");
    let s = h.s.open_session_at(&"L1".into(), &"S1".into()).unwrap();
    assert_eq!(s.reservation_id, None);
    h.at(h.t + 10, Command::TimerTick);
    assert_eq!(h.s.reservations[&r.reservation_id].state, ReservationState::Expired);
    assert_eq!(h.slot_state("S1"), SlotState::Occupied);
}

#[test]
fn faults_and_ghost_readings() {
    let mut h = Harness::new();
    h.ir("S1", "0");
    h.t += 20 * 60;
    assert!(h.run(Command::OperatorFault { lot_id: "L1".into(), slot_id: "S1".into() }).is_ok());
    assert_eq!(h.slot_state("S1"), SlotState::OutOfService);
    assert_eq!(h.s.bills.len(), 1, "fault closes and bills the open session");
    assert_eq!(h.s.bills.values().next().unwrap().total_minor, 500);

    let again = h.run(Command::OperatorFault { lot_id: "L1".into(), slot_id: "S1".into() });
    assert_eq!(err_code(&again), "illegal_transition");
    let ghost = h.ir("S1", "0");
    assert!(matches!(ghost.events[..], [Event::Anomaly { .. }]));
    assert_eq!(h.s.anomalies.len(), 1);

    let u = h.user("a@example.com");
    assert_eq!(err_code(&h.book(&u, Some("S1"), h.t + HOUR, h.t + 2 * HOUR)), "slot_unavailable");

    assert!(h.run(Command::OperatorRestore { lot_id: "L1".into(), slot_id: "S1".into() }).is_ok());
    assert_eq!(h.slot_state("S1"), SlotState::Free);
    let restore_free = h.run(Command::OperatorRestore { lot_id: "L1".into(), slot_id: "S1".into() });
    assert_eq!(err_code(&restore_free), "illegal_transition");
}

#[test]
fn unknown_topics_and_payloads_are_ignored() {
    let mut h = Harness::new();
    for (topic, payload) in [
        ("lot/L1/slot/S1/temperature", "20"),
        ("lot/L9/slot/S1/ir", "0"),
        ("lot/L1/slot/S9/ir", "0"),
        ("lot/L1/slot/S1/ir", "maybe"),
        ("lot/L1/gate/G-X/piezo", "1"),
    ] {
        let a = h.run(Command::SensorEvent { topic: topic.into(), payload: payload.into() });
        assert!(a.is_ok());
        assert!(matches!(a.events[..], [Event::Ignored { .. }]), "{topic}");
    }
    assert_eq!(h.slot_state("S1"), SlotState::Free);
}

#[test]
fn entry_gate_opens_then_closes() {
    let mut h = Harness::new();
    let piezo = |h: &mut Harness, gate: &str| {
        h.run(Command::SensorEvent { topic: format!("lot/L1/gate/{gate}/piezo"), payload: "1".into() })
    };
    let opened = piezo(&mut h, "G-IN");
    let publishes: Vec<_> = opened.events.iter().filter_map(Event::publish).collect();
    assert_eq!(
        publishes,
        [
            ("lot/L1/display".to_owned(), "WELCOME FREE 4/4".to_owned()),
            ("lot/L1/gate/G-IN/cmd".to_owned(), "2000".to_owned()),
        ]
    );
    assert!(h.at(T0 + 14, Command::TimerTick).events.is_empty());
    let closed = h.at(T0 + 15, Command::TimerTick);
    let publishes: Vec<_> = closed.events.iter().filter_map(Event::publish).collect();
    assert_eq!(publishes, [("lot/L1/gate/G-IN/cmd".to_owned(), "1000".to_owned())]);

    for s in ["S1", "S2", "S3", "S4"] {
        h.ir(s, "0");
    }
    let full = piezo(&mut h, "G-IN");
    let publishes: Vec<_> = full.events.iter().filter_map(Event::publish).collect();
    assert_eq!(publishes, [("lot/L1/display".to_owned(), "LOT FULL".to_owned())]);

    let exit = piezo(&mut h, "G-OUT");
    assert!(exit.events.iter().filter_map(Event::publish).any(|(t, p)| t == "lot/L1/gate/G-OUT/cmd" && p == "2000"));
}

#[test]
fn operator_close_bills_and_frees() {
    let mut h = Harness::new();
    h.ir("S4", "0");
    let sid = h.s.open_session_at(&"L1".into(), &"S4".into()).unwrap().session_id.clone();
    h.t += 45 * 60;
    let a = h.run(Command::CloseSession { session_id: sid.clone() });
    assert!(matches!(a.outcome, Ok(Reply::Bill { ref bill }) if bill.total_minor == 750));
    assert_eq!(h.slot_state("S4"), SlotState::Free);
    assert_eq!(err_code(&h.run(Command::CloseSession { session_id: sid })), "session_closed");
}

#[test]
fn lots_are_validated() {
    let mut h = Harness::new();
    assert_eq!(err_code(&h.run(Command::CreateLot { config: lot("L1", &["X"]) })), "lot_exists");
    assert_eq!(err_code(&h.run(Command::CreateLot { config: lot("L2", &[]) })), "invalid_lot");
    assert_eq!(err_code(&h.run(Command::CreateLot { config: lot("L3", &["A", "A"]) })), "invalid_lot");
}
