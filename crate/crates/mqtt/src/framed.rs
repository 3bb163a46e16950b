use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use crate::codec::{parse_packet, serialize_packet, DecodeError, Packet};
use crate::MqttError;

/// Buffers a byte stream and yields whole packets.
pub(crate) struct FrameReader<R> {
    inner: R,
    buf: Vec<u8>,
}

impl<R: AsyncRead + Unpin> FrameReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner, buf: Vec::with_capacity(4096) }
    }

    /// Next packet, or `None` on a clean end of stream between packets.
    pub(crate) async fn next(&mut self) -> Result<Option<Packet>, MqttError> {
        loop {
            match parse_packet(&self.buf) {
                Ok((packet, used)) => {
                    self.buf.drain(..used);
                    return Ok(Some(packet));
                }
                Err(DecodeError::Incomplete) => {}
                Err(e) => return Err(e.into()),
            }
            let mut chunk = [0u8; 4096];
            let n = self.inner.read(&mut chunk).await?;
            if n == 0 {
                return if self.buf.is_empty() { Ok(None) } else { Err(MqttError::Closed) };
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }
}

pub(crate) async fn write_packet<W: AsyncWrite + Unpin>(
    writer: &mut W,
    packet: &Packet,
) -> Result<(), MqttError> {
    let bytes = serialize_packet(packet)?;
    writer.write_all(&bytes).await?;
    writer.flush().await?;
    Ok(())
}
