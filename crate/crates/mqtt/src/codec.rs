//! Packet codec.
//!
//! Fixed header: one byte of `type << 4 | flags`, then the remaining length
//! as a 1-4 byte base-128 varint, then the body. Supported type nibbles are
//! 1 (CONNECT), 2, 3, 4, 8, 9, 10, 11, 12, 13 and 14 (DISCONNECT).

use std::fmt;

use thiserror::Error;

pub const MAX_REMAINING_LENGTH: u32 = 268_435_455;

/// Largest body the decoder will buffer.
pub const MAX_PACKET_SIZE: usize = 256 * 1024;

/// Return code for a rejected topic filter in SUBACK.
pub const SUBACK_FAILURE: u8 = 0x80;

const PROTOCOL_NAME: &str = "MQTT";
const PROTOCOL_LEVEL: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum QoS {
    #[default]
    AtMostOnce = 0,
    AtLeastOnce = 1,
}

impl QoS {
    pub fn from_u8(v: u8) -> Option<QoS> {
        match v {
            0 => Some(QoS::AtMostOnce),
            1 => Some(QoS::AtLeastOnce),
            _ => None,
        }
    }

    /// Grant for a SUBSCRIBE request: anything above 1 is downgraded.
    pub fn granted(requested: u8) -> QoS {
        if requested == 0 {
            QoS::AtMostOnce
        } else {
            QoS::AtLeastOnce
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect {
        client_id: String,
        keep_alive_s: u16,
    },
    ConnAck {
        return_code: u8,
    },
    Publish {
        topic: String,
        payload: Vec<u8>,
        qos: QoS,
        packet_id: Option<u16>,
        /// Set on redelivery of a QoS 1 message.
        dup: bool,
    },
    PubAck {
        packet_id: u16,
    },
    Subscribe {
        packet_id: u16,
        filters: Vec<(String, u8)>,
    },
    SubAck {
        packet_id: u16,
        granted: Vec<u8>,
    },
    Unsubscribe {
        packet_id: u16,
        filters: Vec<String>,
    },
    UnsubAck {
        packet_id: u16,
    },
    PingReq,
    PingResp,
    Disconnect,
}

impl Packet {
    pub fn publish(topic: impl Into<String>, payload: impl Into<Vec<u8>>) -> Packet {
        Packet::Publish {
            topic: topic.into(),
            payload: payload.into(),
            qos: QoS::AtMostOnce,
            packet_id: None,
            dup: false,
        }
    }

    pub fn type_nibble(&self) -> u8 {
        match self {
            Packet::Connect { .. } => 1,
            Packet::ConnAck { .. } => 2,
            Packet::Publish { .. } => 3,
            Packet::PubAck { .. } => 4,
            Packet::Subscribe { .. } => 8,
            Packet::SubAck { .. } => 9,
            Packet::Unsubscribe { .. } => 10,
            Packet::UnsubAck { .. } => 11,
            Packet::PingReq => 12,
            Packet::PingResp => 13,
            Packet::Disconnect => 14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    /// More bytes are needed; the caller keeps buffering.
    #[error("incomplete packet")]
    Incomplete,
    #[error("malformed packet: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("remaining length {0} out of range")]
    OutOfRange(u64),
    #[error("packet violates an invariant: {0}")]
    InvariantViolation(&'static str),
}

pub fn encode_remaining_length(n: u32) -> Result<Vec<u8>, EncodeError> {
    if n > MAX_REMAINING_LENGTH {
        return Err(EncodeError::OutOfRange(u64::from(n)));
    }
    let mut out = Vec::with_capacity(4);
    let mut x = n;
    loop {
        let mut byte = (x % 128) as u8;
        x /= 128;
        if x > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if x == 0 {
            return Ok(out);
        }
    }
}

/// Returns `(value, bytes consumed)`.
pub fn decode_remaining_length(bytes: &[u8]) -> Result<(u32, usize), DecodeError> {
    let mut value: u32 = 0;
    for (i, &byte) in bytes.iter().take(4).enumerate() {
        value |= u32::from(byte & 0x7F) << (7 * i);
        if byte & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    if bytes.len() >= 4 {
        Err(DecodeError::Malformed("remaining length exceeds four bytes"))
    } else {
        Err(DecodeError::Incomplete)
    }
}

/// Parses one packet from the front of `bytes`.
///
/// On success returns the packet and the number of bytes it occupied. Never
/// reads past the declared remaining length.
pub fn parse_packet(bytes: &[u8]) -> Result<(Packet, usize), DecodeError> {
    let Some(&first) = bytes.first() else {
        return Err(DecodeError::Incomplete);
    };
    let kind = first >> 4;
    let flags = first & 0x0F;
    let expected_flags = match kind {
        3 => flags,
        8 | 10 => 0b0010,
        1 | 2 | 4 | 9 | 11..=14 => 0,
        _ => return Err(DecodeError::Malformed("unsupported packet type")),
    };
    if flags != expected_flags {
        return Err(DecodeError::Malformed("reserved header flags"));
    }
    let (len, len_bytes) = decode_remaining_length(&bytes[1..])?;
    let len = len as usize;
    if len > MAX_PACKET_SIZE {
        return Err(DecodeError::Malformed("packet exceeds maximum size"));
    }
    let start = 1 + len_bytes;
    let end = start + len;
    if bytes.len() < end {
        return Err(DecodeError::Incomplete);
    }
    let mut body = Reader::new(&bytes[start..end]);
    let packet = match kind {
        1 => parse_connect(&mut body)?,
        2 => {
            if body.u8()? != 0 {
                return Err(DecodeError::Malformed("connack flags"));
            }
            let return_code = body.u8()?;
            if return_code > 5 {
                return Err(DecodeError::Malformed("connack return code"));
            }
            Packet::ConnAck { return_code }
        }
        3 => parse_publish(flags, &mut body)?,
        4 => Packet::PubAck { packet_id: body.packet_id()? },
        8 => {
            let packet_id = body.packet_id()?;
            let mut filters = Vec::new();
            while !body.is_empty() {
                let filter = body.string()?;
                if filter.is_empty() {
                    return Err(DecodeError::Malformed("empty topic filter"));
                }
                let qos = body.u8()?;
                if qos > 2 {
                    return Err(DecodeError::Malformed("requested qos"));
                }
                filters.push((filter, qos));
            }
            if filters.is_empty() {
                return Err(DecodeError::Malformed("subscribe without filters"));
            }
            Packet::Subscribe { packet_id, filters }
        }
        9 => {
            let packet_id = body.packet_id()?;
            let granted = body.rest().to_vec();
            if granted.is_empty() {
                return Err(DecodeError::Malformed("suback without return codes"));
            }
            if granted.iter().any(|&c| c > 2 && c != SUBACK_FAILURE) {
                return Err(DecodeError::Malformed("suback return code"));
            }
            Packet::SubAck { packet_id, granted }
        }
        10 => {
            let packet_id = body.packet_id()?;
            let mut filters = Vec::new();
            while !body.is_empty() {
                let filter = body.string()?;
                if filter.is_empty() {
                    return Err(DecodeError::Malformed("empty topic filter"));
                }
                filters.push(filter);
            }
            if filters.is_empty() {
                return Err(DecodeError::Malformed("unsubscribe without filters"));
            }
            Packet::Unsubscribe { packet_id, filters }
        }
        11 => Packet::UnsubAck { packet_id: body.packet_id()? },
        12 => Packet::PingReq,
        13 => Packet::PingResp,
        14 => Packet::Disconnect,
        _ => unreachable!("type nibble checked above"),
    };
    if !body.is_empty() {
        return Err(DecodeError::Malformed("trailing bytes in packet"));
    }
    Ok((packet, end))
}

fn parse_connect(body: &mut Reader<'_>) -> Result<Packet, DecodeError> {
    if body.string()? != PROTOCOL_NAME {
        return Err(DecodeError::Malformed("protocol name"));
    }
    if body.u8()? != PROTOCOL_LEVEL {
        return Err(DecodeError::Malformed("protocol level"));
    }
    let flags = body.u8()?;
    if flags & 0x01 != 0 {
        return Err(DecodeError::Malformed("connect reserved flag"));
    }
    if flags & 0b0011_1100 != 0 {
        return Err(DecodeError::Malformed("will messages unsupported"));
    }
    let has_username = flags & 0x80 != 0;
    let has_password = flags & 0x40 != 0;
    if has_password && !has_username {
        return Err(DecodeError::Malformed("password without username"));
    }
    let keep_alive_s = body.u16()?;
    let client_id = body.string()?;
    // Credentials are accepted on the wire and ignored.
    if has_username {
        body.string()?;
    }
    if has_password {
        body.binary()?;
    }
    Ok(Packet::Connect { client_id, keep_alive_s })
}

fn parse_publish(flags: u8, body: &mut Reader<'_>) -> Result<Packet, DecodeError> {
    let dup = flags & 0b1000 != 0;
    let retain = flags & 0b0001 != 0;
    let qos = match (flags >> 1) & 0b11 {
        0 => QoS::AtMostOnce,
        1 => QoS::AtLeastOnce,
        2 => return Err(DecodeError::Malformed("qos 2 unsupported")),
        _ => return Err(DecodeError::Malformed("qos 3 is invalid")),
    };
    if retain {
        return Err(DecodeError::Malformed("retained messages unsupported"));
    }
    if dup && qos == QoS::AtMostOnce {
        return Err(DecodeError::Malformed("dup flag on qos 0"));
    }
    let topic = body.string()?;
    if topic.is_empty() || topic.contains(['+', '#']) {
        return Err(DecodeError::Malformed("invalid topic name"));
    }
    let packet_id = match qos {
        QoS::AtMostOnce => None,
        QoS::AtLeastOnce => Some(body.packet_id()?),
    };
    let payload = body.rest().to_vec();
    Ok(Packet::Publish { topic, payload, qos, packet_id, dup })
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Malformed("field truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn packet_id(&mut self) -> Result<u16, DecodeError> {
        match self.u16()? {
            0 => Err(DecodeError::Malformed("zero packet identifier")),
            id => Ok(id),
        }
    }

    fn binary(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u16()? as usize;
        self.take(len)
    }

    fn string(&mut self) -> Result<String, DecodeError> {
        let raw = self.binary()?;
        let s = std::str::from_utf8(raw).map_err(|_| DecodeError::Malformed("invalid utf-8"))?;
        if s.contains('\0') {
            return Err(DecodeError::Malformed("nul character in string"));
        }
        Ok(s.to_owned())
    }

    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }
}

/// Serializes a packet, checking the invariants the decoder enforces.
pub fn serialize_packet(p: &Packet) -> Result<Vec<u8>, EncodeError> {
    let mut body = Vec::new();
    let mut flags = 0u8;
    match p {
        Packet::Connect { client_id, keep_alive_s } => {
            put_string(&mut body, PROTOCOL_NAME)?;
            body.push(PROTOCOL_LEVEL);
            body.push(0x02); // clean session
            body.extend_from_slice(&keep_alive_s.to_be_bytes());
            put_string(&mut body, client_id)?;
        }
        Packet::ConnAck { return_code } => {
            if *return_code > 5 {
                return Err(EncodeError::InvariantViolation("connack return code above 5"));
            }
            body.extend_from_slice(&[0, *return_code]);
        }
        Packet::Publish { topic, payload, qos, packet_id, dup } => {
            if topic.is_empty() || topic.contains(['+', '#']) {
                return Err(EncodeError::InvariantViolation("publish topic must be a non-empty name without wildcards"));
            }
            match (qos, packet_id) {
                (QoS::AtMostOnce, Some(_)) => {
                    return Err(EncodeError::InvariantViolation("qos 0 publish carries a packet id"))
                }
                (QoS::AtLeastOnce, None) => {
                    return Err(EncodeError::InvariantViolation("qos 1 publish without packet id"))
                }
                (QoS::AtMostOnce, None) if *dup => {
                    return Err(EncodeError::InvariantViolation("dup flag on qos 0"))
                }
                _ => {}
            }
            flags = (u8::from(*dup) << 3) | ((*qos as u8) << 1);
            put_string(&mut body, topic)?;
            if let Some(id) = packet_id {
                put_packet_id(&mut body, *id)?;
            }
            body.extend_from_slice(payload);
        }
        Packet::PubAck { packet_id } | Packet::UnsubAck { packet_id } => {
            put_packet_id(&mut body, *packet_id)?;
        }
        Packet::Subscribe { packet_id, filters } => {
            flags = 0b0010;
            put_packet_id(&mut body, *packet_id)?;
            if filters.is_empty() {
                return Err(EncodeError::InvariantViolation("subscribe without filters"));
            }
            for (filter, qos) in filters {
                if filter.is_empty() {
                    return Err(EncodeError::InvariantViolation("empty topic filter"));
                }
                if *qos > 2 {
                    return Err(EncodeError::InvariantViolation("requested qos above 2"));
                }
                put_string(&mut body, filter)?;
                body.push(*qos);
            }
        }
        Packet::SubAck { packet_id, granted } => {
            put_packet_id(&mut body, *packet_id)?;
            if granted.is_empty() {
                return Err(EncodeError::InvariantViolation("suback without return codes"));
            }
            if granted.iter().any(|&c| c > 2 && c != SUBACK_FAILURE) {
                return Err(EncodeError::InvariantViolation("invalid suback return code"));
            }
            body.extend_from_slice(granted);
        }
        Packet::Unsubscribe { packet_id, filters } => {
            flags = 0b0010;
            put_packet_id(&mut body, *packet_id)?;
            if filters.is_empty() {
                return Err(EncodeError::InvariantViolation("unsubscribe without filters"));
            }
            for filter in filters {
                if filter.is_empty() {
                    return Err(EncodeError::InvariantViolation("empty topic filter"));
                }
                put_string(&mut body, filter)?;
            }
        }
        Packet::PingReq | Packet::PingResp | Packet::Disconnect => {}
    }
    if body.len() > MAX_PACKET_SIZE {
        return Err(EncodeError::OutOfRange(body.len() as u64));
    }
    let len = encode_remaining_length(body.len() as u32)?;
    let mut out = Vec::with_capacity(1 + len.len() + body.len());
    out.push((p.type_nibble() << 4) | flags);
    out.extend_from_slice(&len);
    out.extend_from_slice(&body);
    Ok(out)
}

fn put_string(out: &mut Vec<u8>, s: &str) -> Result<(), EncodeError> {
    if s.contains('\0') {
        return Err(EncodeError::InvariantViolation("nul character in string"));
    }
    let len = u16::try_from(s.len())
        .map_err(|_| EncodeError::InvariantViolation("string longer than 65535 bytes"))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_packet_id(out: &mut Vec<u8>, id: u16) -> Result<(), EncodeError> {
    if id == 0 {
        return Err(EncodeError::InvariantViolation("zero packet identifier"));
    }
    out.extend_from_slice(&id.to_be_bytes());
    Ok(())
}

impl fmt::Display for QoS {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}
