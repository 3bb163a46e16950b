//! Async client for the broker, used by the simulator and the service.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU16, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::net::{TcpStream, ToSocketAddrs};
use tokio::sync::{mpsc, oneshot};
use tokio::time::timeout;
use tracing::debug;

use crate::codec::{Packet, QoS};
use crate::framed::{write_packet, FrameReader};
use crate::MqttError;

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub client_id: String,
    pub keep_alive_s: u16,
    pub ack_timeout: Duration,
}

impl ClientOptions {
    pub fn new(client_id: impl Into<String>) -> Self {
        Self {
            client_id: client_id.into(),
            keep_alive_s: 30,
            ack_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub topic: String,
    pub payload: Vec<u8>,
    pub qos: QoS,
}

type Pending = Arc<Mutex<HashMap<u16, oneshot::Sender<Packet>>>>;

#[derive(Clone)]
pub struct MqttClient {
    out: mpsc::UnboundedSender<Packet>,
    pending: Pending,
    next_id: Arc<AtomicU16>,
    ack_timeout: Duration,
}

impl MqttClient {
    /// Connects and waits for CONNACK. Incoming publishes arrive on the
    /// returned receiver, which closes when the connection drops.
    pub async fn connect(
        addr: impl ToSocketAddrs,
        opts: ClientOptions,
    ) -> Result<(MqttClient, mpsc::UnboundedReceiver<Message>), MqttError> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (rd, mut wr) = stream.into_split();
        let mut frames = FrameReader::new(rd);

        let connect = Packet::Connect {
            client_id: opts.client_id.clone(),
            keep_alive_s: opts.keep_alive_s,
        };
        write_packet(&mut wr, &connect).await?;
        match timeout(opts.ack_timeout, frames.next()).await {
            Ok(Ok(Some(Packet::ConnAck { return_code: 0 }))) => {}
            Ok(Ok(Some(Packet::ConnAck { return_code }))) => return Err(MqttError::Refused(return_code)),
            Ok(Ok(Some(_))) => return Err(MqttError::Protocol("expected CONNACK")),
            Ok(Ok(None)) => return Err(MqttError::Closed),
            Ok(Err(e)) => return Err(e),
            Err(_) => return Err(MqttError::Timeout("CONNACK")),
        }

        let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Packet>();
        let (msg_tx, msg_rx) = mpsc::unbounded_channel();
        let pending: Pending = Arc::default();

        let ping_every = (opts.keep_alive_s > 0)
            .then(|| Duration::from_millis(u64::from(opts.keep_alive_s) * 500));
        tokio::spawn(async move {
            let mut ping = tokio::time::interval(ping_every.unwrap_or(Duration::from_secs(3600)));
            ping.tick().await;
            loop {
                let packet = tokio::select! {
                    p = out_rx.recv() => match p {
                        Some(p) => p,
                        None => break,
                    },
                    _ = ping.tick(), if ping_every.is_some() => Packet::PingReq,
                };
                let last = packet == Packet::Disconnect;
                if let Err(e) = write_packet(&mut wr, &packet).await {
                    debug!("client writer stopped: {e}");
                    break;
                }
                if last {
                    break;
                }
            }
        });

        let reader_pending = pending.clone();
        let ack_tx = out_tx.clone();
        tokio::spawn(async move {
            loop {
                let packet = match frames.next().await {
                    Ok(Some(p)) => p,
                    Ok(None) => break,
                    Err(e) => {
                        debug!("client reader stopped: {e}");
                        break;
                    }
                };
                match packet {
                    Packet::Publish { topic, payload, qos, packet_id, .. } => {
                        if let Some(packet_id) = packet_id {
                            let _ = ack_tx.send(Packet::PubAck { packet_id });
                        }
                        if msg_tx.send(Message { topic, payload, qos }).is_err() {
                            debug!("message receiver dropped");
                        }
                    }
                    Packet::PubAck { packet_id }
                    | Packet::SubAck { packet_id, .. }
                    | Packet::UnsubAck { packet_id } => {
                        let waiter = reader_pending.lock().expect("pending lock").remove(&packet_id);
                        if let Some(waiter) = waiter {
                            let _ = waiter.send(packet);
                        }
                    }
                    Packet::PingResp => {}
                    other => debug!("unexpected packet from broker: {other:?}"),
                }
            }
            reader_pending.lock().expect("pending lock").clear();
        });

        Ok((
            MqttClient {
                out: out_tx,
                pending,
                next_id: Arc::new(AtomicU16::new(0)),
                ack_timeout: opts.ack_timeout,
            },
            msg_rx,
        ))
    }

    fn packet_id(&self) -> u16 {
        loop {
            let id = self.next_id.fetch_add(1, Ordering::Relaxed).wrapping_add(1);
            if id != 0 {
                return id;
            }
        }
    }

    fn send(&self, packet: Packet) -> Result<(), MqttError> {
        self.out.send(packet).map_err(|_| MqttError::Closed)
    }

    fn expect_ack(&self, id: u16) -> oneshot::Receiver<Packet> {
        let (tx, rx) = oneshot::channel();
        self.pending.lock().expect("pending lock").insert(id, tx);
        rx
    }

    async fn await_ack(&self, rx: oneshot::Receiver<Packet>, what: &'static str) -> Result<Packet, MqttError> {
        match timeout(self.ack_timeout, rx).await {
            Ok(Ok(p)) => Ok(p),
            Ok(Err(_)) => Err(MqttError::Closed),
            Err(_) => Err(MqttError::Timeout(what)),
        }
    }

    /// Returns the broker's granted codes, one per filter.
    pub async fn subscribe(&self, filters: &[(&str, QoS)]) -> Result<Vec<u8>, MqttError> {
        let packet_id = self.packet_id();
        let rx = self.expect_ack(packet_id);
        self.send(Packet::Subscribe {
            packet_id,
            filters: filters.iter().map(|(f, q)| ((*f).to_owned(), *q as u8)).collect(),
        })?;
        match self.await_ack(rx, "SUBACK").await? {
            Packet::SubAck { granted, .. } => Ok(granted),
            _ => Err(MqttError::Protocol("expected SUBACK")),
        }
    }

    pub async fn unsubscribe(&self, filters: &[&str]) -> Result<(), MqttError> {
        let packet_id = self.packet_id();
        let rx = self.expect_ack(packet_id);
        self.send(Packet::Unsubscribe {
            packet_id,
            filters: filters.iter().map(|f| (*f).to_owned()).collect(),
        })?;
        self.await_ack(rx, "UNSUBACK").await.map(|_| ())
    }

    /// QoS 0 returns once queued; QoS 1 waits for PUBACK, resending once
    /// with the DUP flag if the first wait times out.
    pub async fn publish(&self, topic: &str, payload: impl Into<Vec<u8>>, qos: QoS) -> Result<(), MqttError> {
        let payload = payload.into();
        match qos {
            QoS::AtMostOnce => self.send(Packet::publish(topic, payload)),
            QoS::AtLeastOnce => {
                let packet_id = self.packet_id();
                for dup in [false, true] {
                    let rx = self.expect_ack(packet_id);
                    self.send(Packet::Publish {
                        topic: topic.to_owned(),
                        payload: payload.clone(),
                        qos,
                        packet_id: Some(packet_id),
                        dup,
                    })?;
                    match self.await_ack(rx, "PUBACK").await {
                        Ok(_) => return Ok(()),
                        Err(MqttError::Timeout(_)) if !dup => continue,
                        Err(e) => return Err(e),
                    }
                }
                Err(MqttError::Timeout("PUBACK"))
            }
        }
    }

    pub fn disconnect(&self) -> Result<(), MqttError> {
        self.send(Packet::Disconnect)
    }
}
