mod common;

use common::{Harness, T0};
use proptest::prelude::*;
use spms_core::{ReservationState, SlotState, UserId};
use spms_service::{Command, Event, Reply};

const SLOTS: [&str; 4] = ["S1", "S2", "S3", "S4"];

#[derive(Debug, Clone)]
enum Op {
    Book { user: usize, slot: Option<usize>, start_min: i64, len_min: i64, key: Option<u8> },
    Cancel { user: usize, pick: usize },
    Ir { slot: usize, obstacle: bool },
    Advance { secs: i64 },
    Fault { slot: usize },
    Restore { slot: usize },
    Piezo { exit: bool },
    Close { pick: usize },
    Extra { user: usize, pick: usize },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0..3usize, prop::option::of(0..4usize), -5i64..240, -10i64..200, prop::option::of(0..3u8))
            .prop_map(|(user, slot, start_min, len_min, key)| Op::Book { user, slot, start_min, len_min, key }),
        1 => (0..3usize, any::<usize>()).prop_map(|(user, pick)| Op::Cancel { user, pick }),
        4 => (0..4usize, any::<bool>()).prop_map(|(slot, obstacle)| Op::Ir { slot, obstacle }),
        2 => (1i64..3600).prop_map(|secs| Op::Advance { secs }),
        1 => (0..4usize).prop_map(|slot| Op::Fault { slot }),
        1 => (0..4usize).prop_map(|slot| Op::Restore { slot }),
        1 => any::<bool>().prop_map(|exit| Op::Piezo { exit }),
        1 => any::<usize>().prop_map(|pick| Op::Close { pick }),
        1 => (0..3usize, any::<usize>()).prop_map(|(user, pick)| Op::Extra { user, pick }),
    ]
}

fn to_command(h: &Harness, users: &[UserId], op: &Op) -> Command {
    let nth_reservation = |pick: usize| {
        let ids: Vec<_> = h.s.reservations.keys().cloned().collect();
        if ids.is_empty() { "r-none".into() } else { ids[pick % ids.len()].clone() }
    };
    let nth_session = |pick: usize| {
        let ids: Vec<_> = h.s.sessions.keys().cloned().collect();
        if ids.is_empty() { "s-none".into() } else { ids[pick % ids.len()].clone() }
    };
    match op {
        Op::Book { user, slot, start_min, len_min, key } => Command::CreateReservation {
            user_id: users[*user].clone(),
            lot_id: "L1".into(),
            slot_id: slot.map(|s| SLOTS[s].into()),
            window_start: h.t + start_min * 60,
            window_end: h.t + (start_min + len_min) * 60,
            eta: None,
            idempotency_key: key.map(|k| format!("k{k}")),
        },
        Op::Cancel { user, pick } => {
            Command::CancelReservation { user_id: users[*user].clone(), reservation_id: nth_reservation(*pick) }
        }
        Op::Ir { slot, obstacle } => Command::SensorEvent {
            topic: format!("lot/L1/slot/{}/ir", SLOTS[*slot]),
            payload: if *obstacle { "0" } else { "1" }.into(),
        },
        Op::Advance { .. } => Command::TimerTick,
        Op::Fault { slot } => Command::OperatorFault { lot_id: "L1".into(), slot_id: SLOTS[*slot].into() },
        Op::Restore { slot } => Command::OperatorRestore { lot_id: "L1".into(), slot_id: SLOTS[*slot].into() },
        Op::Piezo { exit } => Command::SensorEvent {
            topic: format!("lot/L1/gate/{}/piezo", if *exit { "G-OUT" } else { "G-IN" }),
            payload: "1".into(),
        },
        Op::Close { pick } => Command::CloseSession { session_id: nth_session(*pick) },
        Op::Extra { user, pick } => {
            Command::AddExtra { user_id: users[*user].clone(), session_id: nth_session(*pick), code: "wash".into() }
        }
    }
}

fn check_invariants(h: &Harness) -> Result<(), TestCaseError> {
    let lot = &h.s.lots[&"L1".into()].lot;

    // no two live bookings on one slot overlap
    let live: Vec<_> = h
        .s
        .reservations
        .values()
        .filter(|r| matches!(r.state, ReservationState::Active | ReservationState::CheckedIn))
        .collect();
    for (i, a) in live.iter().enumerate() {
        for b in &live[i + 1..] {
            if a.slot_id == b.slot_id {
                prop_assert!(
                    a.window_end <= b.window_start || b.window_end <= a.window_start,
                    "{} and {} overlap on {}",
                    a.reservation_id,
                    b.reservation_id,
                    a.slot_id
                );
            }
        }
    }
    let live_set: std::collections::BTreeSet<_> = live.iter().map(|r| r.reservation_id.clone()).collect();
    prop_assert_eq!(&live_set, &h.s.live_reservations);

    // conservation: each slot is in exactly one state and OCCUPIED means
    // exactly one open session
    let mut counts = [0usize; 4];
    for s in &lot.slots {
        let i = match s.state {
            SlotState::Free => 0,
            SlotState::Reserved => 1,
            SlotState::Occupied => 2,
            SlotState::OutOfService => 3,
        };
        counts[i] += 1;
        let open = h.s.open_session_at(&lot.lot_id, &s.slot_id);
        prop_assert_eq!(s.state == SlotState::Occupied, open.is_some(), "slot {}", s.slot_id);
        if s.state == SlotState::Reserved {
            // held for a booking that has started and not yet been expired
            let now = h.s.last_ts;
            let held = h
                .s
                .live_reservations_for_slot(&lot.lot_id, &s.slot_id)
                .any(|r| r.state == ReservationState::Active && r.window_start <= now);
            prop_assert!(held, "slot {} reserved for nobody", s.slot_id);
        }
    }
    prop_assert_eq!(counts.iter().sum::<usize>(), SLOTS.len());
    let summary = spms_core::occupancy_summary(lot);
    prop_assert_eq!(
        (summary.free, summary.reserved, summary.occupied, summary.out_of_service),
        (counts[0], counts[1], counts[2], counts[3])
    );

    // at most one CHECKED_IN reservation per slot, and it owns the open session
    for r in live.iter().filter(|r| r.state == ReservationState::CheckedIn) {
        let open = h.s.open_session_at(&r.lot_id, &r.slot_id);
        prop_assert_eq!(open.and_then(|s| s.reservation_id.clone()), Some(r.reservation_id.clone()));
    }

    // every closed session has exactly one bill
    for s in h.s.sessions.values() {
        prop_assert_eq!(s.exit_ts.is_some(), h.s.bill_by_session.contains_key(&s.session_id));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn invariants_hold_under_random_traffic(ops in prop::collection::vec(op(), 1..120)) {
        let mut h = Harness::new();
        let users: Vec<UserId> = (0..3).map(|i| h.user(&format!("u{i}@example.com"))).collect();
        for op in &ops {
            if let Op::Advance { secs } = op {
                h.t += secs;
            }
            let cmd = to_command(&h, &users, op);

            // what the state would be if the command did nothing at all
            let mut baseline = h.s.clone();
            spms_service::apply(
                &mut baseline,
                &Command::SensorEvent { topic: "noise".into(), payload: String::new() },
                h.t,
            );
            let notes_before = h.s.notifications.len();

            let applied = h.run(cmd.clone());

            match &applied.outcome {
                Err(_) => {
                    prop_assert_eq!(&h.s, &baseline, "rejected {:?} changed state", cmd);
                }
                Ok(Reply::Reservation { replayed: false, reservation })
                    if matches!(cmd, Command::CreateReservation { .. }) =>
                {
                    let mine: Vec<_> = h.s.notifications[notes_before..]
                        .iter()
                        .filter(|n| n.user_id == reservation.user_id && n.body.contains(reservation.reservation_id.as_str()))
                        .collect();
                    prop_assert_eq!(mine.len(), 1, "one confirmation per booking");
                }
                Ok(Reply::Reservation { replayed: true, .. }) => {
                    prop_assert_eq!(h.s.notifications.len(), notes_before);
                }
                Ok(_) => {}
            }
            let notified = applied.events.iter().filter(|e| matches!(e, Event::Notified { .. })).count();
            prop_assert_eq!(h.s.notifications.len(), notes_before + notified);
            check_invariants(&h)?;
        }
    }

    #[test]
    fn same_commands_same_state(ops in prop::collection::vec(op(), 1..60)) {
        let run = || {
            let mut h = Harness::new();
            let users: Vec<UserId> = (0..3).map(|i| h.user(&format!("u{i}@example.com"))).collect();
            let mut trace = Vec::new();
            for op in &ops {
                if let Op::Advance { secs } = op {
                    h.t += secs;
                }
                let cmd = to_command(&h, &users, op);
                trace.push(h.run(cmd));
            }
            (h.s.digest(), trace)
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn conservation_over_ten_thousand_commands() {
    use rand::{rngs::StdRng, Rng, SeedableRng};
    let mut rng = StdRng::seed_from_u64(7);
    let mut h = Harness::new();
    let users: Vec<UserId> = (0..3).map(|i| h.user(&format!("u{i}@example.com"))).collect();
    let start = T0;
    for _ in 0..10_000 {
        let op = match rng.random_range(0..10) {
            0..=2 => Op::Book {
                user: rng.random_range(0..3),
                slot: if rng.random_bool(0.5) { Some(rng.random_range(0..4)) } else { None },
                start_min: rng.random_range(-5..240),
                len_min: rng.random_range(1..200),
                key: None,
            },
            3..=5 => Op::Ir { slot: rng.random_range(0..4), obstacle: rng.random_bool(0.5) },
            6 => Op::Advance { secs: rng.random_range(1..1800) },
            7 => Op::Cancel { user: rng.random_range(0..3), pick: rng.random::<u32>() as usize },
            8 => Op::Piezo { exit: rng.random_bool(0.5) },
            _ => Op::Close { pick: rng.random::<u32>() as usize },
        };
        if let Op::Advance { secs } = op {
            h.t += secs;
        }
        let cmd = to_command(&h, &users, &op);
        h.run(cmd);
        if let Err(e) = check_invariants(&h) {
            panic!("{e}");
        }
    }
    assert!(h.t > start);
}
