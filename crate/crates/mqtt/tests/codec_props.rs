use proptest::prelude::*;
use spms_mqtt::codec::SUBACK_FAILURE;
use spms_mqtt::{
    decode_remaining_length, encode_remaining_length, parse_packet, serialize_packet,
    topic_matches, DecodeError, Packet, QoS,
};

fn text(allow_wildcards: bool) -> impl Strategy<Value = String> {
    let pattern = if allow_wildcards { "[a-zA-Z0-9/+#é ]{1,24}" } else { "[a-zA-Z0-9/é_ ]{1,24}" };
    proptest::string::string_regex(pattern).unwrap()
}

fn packet_id() -> impl Strategy<Value = u16> {
    1u16..=u16::MAX
}

fn arb_packet() -> impl Strategy<Value = Packet> {
    prop_oneof![
        (proptest::string::string_regex("[a-zA-Z0-9_-]{0,23}").unwrap(), any::<u16>())
            .prop_map(|(client_id, keep_alive_s)| Packet::Connect { client_id, keep_alive_s }),
        (0u8..=5).prop_map(|return_code| Packet::ConnAck { return_code }),
        (text(false), prop::collection::vec(any::<u8>(), 0..64), any::<bool>(), packet_id(), any::<bool>())
            .prop_map(|(topic, payload, qos1, id, dup)| {
                if qos1 {
                    Packet::Publish { topic, payload, qos: QoS::AtLeastOnce, packet_id: Some(id), dup }
                } else {
                    Packet::Publish { topic, payload, qos: QoS::AtMostOnce, packet_id: None, dup: false }
                }
            }),
        packet_id().prop_map(|packet_id| Packet::PubAck { packet_id }),
        (packet_id(), prop::collection::vec((text(true), 0u8..=2), 1..5))
            .prop_map(|(packet_id, filters)| Packet::Subscribe { packet_id, filters }),
        (packet_id(), prop::collection::vec(prop::sample::select(vec![0u8, 1, 2, SUBACK_FAILURE]), 1..5))
            .prop_map(|(packet_id, granted)| Packet::SubAck { packet_id, granted }),
        (packet_id(), prop::collection::vec(text(true), 1..5))
            .prop_map(|(packet_id, filters)| Packet::Unsubscribe { packet_id, filters }),
        packet_id().prop_map(|packet_id| Packet::UnsubAck { packet_id }),
        Just(Packet::PingReq),
        Just(Packet::PingResp),
        Just(Packet::Disconnect),
    ]
}

/// Recursive reference matcher over explicit level lists.
fn oracle(filter: &[&str], topic: &[&str]) -> bool {
    match (filter.split_first(), topic.split_first()) {
        (Some((&"#", _)), _) => true,
        (Some((&"+", f_rest)), Some((_, t_rest))) => oracle(f_rest, t_rest),
        (Some((f, f_rest)), Some((t, t_rest))) => f == t && oracle(f_rest, t_rest),
        (None, None) => true,
        _ => false,
    }
}

fn oracle_matches(filter: &str, topic: &str) -> bool {
    let f: Vec<&str> = filter.split('/').collect();
    let t: Vec<&str> = topic.split('/').collect();
    if topic.starts_with('$') && (f[0] == "+" || f[0] == "#") {
        return false;
    }
    oracle(&f, &t)
}

fn level(wild: bool) -> BoxedStrategy<String> {
    let mut options = vec!["lot", "L1", "L2", "slot", "S1", "ir", "", "$SYS"];
    if wild {
        options.push("+");
    }
    prop::sample::select(options).prop_map(str::to_owned).boxed()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn round_trip(p in arb_packet()) {
        let bytes = serialize_packet(&p).unwrap();
        let (back, used) = parse_packet(&bytes).unwrap();
        prop_assert_eq!(back, p);
        prop_assert_eq!(used, bytes.len());
    }

    #[test]
    fn round_trip_with_trailing_garbage(p in arb_packet(), tail in prop::collection::vec(any::<u8>(), 0..8)) {
        let mut bytes = serialize_packet(&p).unwrap();
        let len = bytes.len();
        bytes.extend(tail);
        let (back, used) = parse_packet(&bytes).unwrap();
        prop_assert_eq!(back, p);
        prop_assert_eq!(used, len);
    }

    #[test]
    fn prefixes_are_incomplete(p in arb_packet()) {
        let bytes = serialize_packet(&p).unwrap();
        for cut in 0..bytes.len() {
            prop_assert_eq!(parse_packet(&bytes[..cut]), Err(DecodeError::Incomplete));
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        match parse_packet(&bytes) {
            Ok((_, used)) => prop_assert!(used <= bytes.len()),
            Err(DecodeError::Incomplete | DecodeError::Malformed(_)) => {}
        }
    }

    #[test]
    fn remaining_length_inverse(n in 0u32..=268_435_455) {
        let enc = encode_remaining_length(n).unwrap();
        prop_assert!(!enc.is_empty() && enc.len() <= 4);
        prop_assert_eq!(decode_remaining_length(&enc), Ok((n, enc.len())));
    }

    #[test]
    fn matching_agrees_with_oracle(
        f in (prop::collection::vec(level(true), 1..5), any::<bool>()).prop_map(|(mut l, h)| { if h { l.push("#".into()); } l.join("/") }),
        t in prop::collection::vec(level(false), 1..6).prop_map(|l| l.join("/")),
    ) {
        prop_assert_eq!(topic_matches(&f, &t), oracle_matches(&f, &t), "{} vs {}", f, t);
    }
}

#[test]
fn remaining_length_exhaustive_small() {
    for n in 0..=16_383u32 {
        let enc = encode_remaining_length(n).unwrap();
        assert_eq!(enc.len(), if n < 128 { 1 } else { 2 });
        assert_eq!(decode_remaining_length(&enc).unwrap(), (n, enc.len()));
    }
}
