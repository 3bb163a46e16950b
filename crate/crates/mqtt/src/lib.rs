//! A minimal MQTT 3.1.1 subset.
//!
//! QoS 0 and 1 only, clean sessions only, no retained messages, no wills and
//! no authentication. The codec is bit-exact for the eleven supported
//! control packets; everything else is rejected as malformed.

pub mod broker;
pub mod client;
pub mod codec;
mod framed;
pub mod registry;
pub mod topic;

pub use broker::{Broker, BrokerConfig, BrokerHandle};
pub use client::{ClientOptions, Message, MqttClient};
pub use codec::{
    decode_remaining_length, encode_remaining_length, parse_packet, serialize_packet,
    DecodeError, EncodeError, Packet, QoS, MAX_PACKET_SIZE, MAX_REMAINING_LENGTH,
};
pub use registry::SubscriptionTree;
pub use topic::{topic_matches, validate_topic_filter, validate_topic_name, TopicError};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MqttError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
    #[error("encode: {0}")]
    Encode(#[from] EncodeError),
    #[error("connection refused with return code {0}")]
    Refused(u8),
    #[error("protocol violation: {0}")]
    Protocol(&'static str),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("connection closed")]
    Closed,
}
