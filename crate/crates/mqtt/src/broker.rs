//! TCP broker.
//!
//! Each connection runs a reader task (framing, keep-alive) and a writer
//! task (outbound packets, QoS 1 in-flight tracking). All subscription and
//! routing state lives in one router task, so messages from one publisher
//! on one topic reach every subscriber in publish order.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot, watch, Notify};
use tokio::task::JoinHandle;
use tokio::time::{timeout, Instant};
use tracing::{debug, info, warn};

use crate::codec::{Packet, QoS, SUBACK_FAILURE};
use crate::framed::{write_packet, FrameReader};
use crate::registry::SubscriptionTree;
use crate::topic::validate_topic_filter;
use crate::MqttError;

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub bind: SocketAddr,
    /// How long a QoS 1 delivery waits for PUBACK before its single retry.
    pub ack_timeout: Duration,
    /// Deadline for the first packet (CONNECT) on a new connection.
    pub connect_timeout: Duration,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([0, 0, 0, 0], 1883)),
            ack_timeout: Duration::from_secs(5),
            connect_timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BrokerStats {
    pub sessions: usize,
    pub subscriptions: usize,
    pub routed: u64,
    pub delivered: u64,
}

enum Outbound {
    Packet(Packet),
    Deliver {
        topic: Arc<str>,
        payload: Arc<[u8]>,
        qos: QoS,
    },
    Acked(u16),
    Close,
}

type OutboundTx = mpsc::UnboundedSender<Outbound>;

enum RouterMsg {
    Connect {
        client_id: String,
        conn_id: u64,
        tx: OutboundTx,
    },
    Subscribe {
        client_id: String,
        conn_id: u64,
        packet_id: u16,
        filters: Vec<(String, u8)>,
    },
    Unsubscribe {
        client_id: String,
        conn_id: u64,
        packet_id: u16,
        filters: Vec<String>,
    },
    Publish {
        client_id: String,
        conn_id: u64,
        topic: String,
        payload: Vec<u8>,
        qos: QoS,
        packet_id: Option<u16>,
    },
    Disconnect {
        client_id: String,
        conn_id: u64,
    },
    Stats(oneshot::Sender<BrokerStats>),
}

struct SessionEntry {
    conn_id: u64,
    tx: OutboundTx,
    filters: BTreeMap<String, QoS>,
}

#[derive(Default)]
struct Router {
    sessions: HashMap<String, SessionEntry>,
    tree: SubscriptionTree,
    routed: u64,
    delivered: u64,
}

impl Router {
    fn current(&mut self, client_id: &str, conn_id: u64) -> Option<&mut SessionEntry> {
        self.sessions
            .get_mut(client_id)
            .filter(|s| s.conn_id == conn_id)
    }

    fn drop_session(&mut self, client_id: &str) {
        if let Some(old) = self.sessions.remove(client_id) {
            for filter in old.filters.keys() {
                self.tree.remove(filter, client_id);
            }
            let _ = old.tx.send(Outbound::Close);
        }
    }

    fn handle(&mut self, msg: RouterMsg) {
        match msg {
            RouterMsg::Connect { client_id, conn_id, tx } => {
                if self.sessions.contains_key(&client_id) {
                    info!(%client_id, "superseding existing session");
                    self.drop_session(&client_id);
                }
                let _ = tx.send(Outbound::Packet(Packet::ConnAck { return_code: 0 }));
                self.sessions.insert(
                    client_id,
                    SessionEntry { conn_id, tx, filters: BTreeMap::new() },
                );
            }
            RouterMsg::Subscribe { client_id, conn_id, packet_id, filters } => {
                let Some(session) = self.sessions.get_mut(&client_id).filter(|s| s.conn_id == conn_id) else {
                    return;
                };
                let mut granted = Vec::with_capacity(filters.len());
                for (filter, requested) in filters {
                    if validate_topic_filter(&filter).is_err() {
                        granted.push(SUBACK_FAILURE);
                        continue;
                    }
                    let qos = QoS::granted(requested);
                    self.tree.insert(&filter, &client_id, qos);
                    session.filters.insert(filter, qos);
                    granted.push(qos as u8);
                }
                let _ = session.tx.send(Outbound::Packet(Packet::SubAck { packet_id, granted }));
            }
            RouterMsg::Unsubscribe { client_id, conn_id, packet_id, filters } => {
                let Some(session) = self.sessions.get_mut(&client_id).filter(|s| s.conn_id == conn_id) else {
                    return;
                };
                for filter in filters {
                    if session.filters.remove(&filter).is_some() {
                        self.tree.remove(&filter, &client_id);
                    }
                }
                let _ = session.tx.send(Outbound::Packet(Packet::UnsubAck { packet_id }));
            }
            RouterMsg::Publish { client_id, conn_id, topic, payload, qos, packet_id } => {
                if self.current(&client_id, conn_id).is_none() {
                    return;
                }
                self.routed += 1;
                let topic: Arc<str> = topic.into();
                let payload: Arc<[u8]> = payload.into();
                for (subscriber, granted) in self.tree.matches(&topic) {
                    if let Some(session) = self.sessions.get(&subscriber) {
                        self.delivered += 1;
                        let _ = session.tx.send(Outbound::Deliver {
                            topic: topic.clone(),
                            payload: payload.clone(),
                            qos: qos.min(granted),
                        });
                    }
                }
                if let (QoS::AtLeastOnce, Some(packet_id)) = (qos, packet_id) {
                    if let Some(session) = self.sessions.get(&client_id) {
                        let _ = session.tx.send(Outbound::Packet(Packet::PubAck { packet_id }));
                    }
                }
            }
            RouterMsg::Disconnect { client_id, conn_id } => {
                if self.current(&client_id, conn_id).is_some() {
                    debug!(%client_id, "session closed");
                    self.drop_session(&client_id);
                }
            }
            RouterMsg::Stats(reply) => {
                let _ = reply.send(BrokerStats {
                    sessions: self.sessions.len(),
                    subscriptions: self.tree.len(),
                    routed: self.routed,
                    delivered: self.delivered,
                });
            }
        }
    }
}

pub struct Broker;

impl Broker {
    /// Binds the listener and starts serving in the background.
    pub async fn start(config: BrokerConfig) -> std::io::Result<BrokerHandle> {
        let listener = TcpListener::bind(config.bind).await?;
        let local_addr = listener.local_addr()?;
        let (router_tx, mut router_rx) = mpsc::unbounded_channel::<RouterMsg>();
        let (shutdown_tx, shutdown_rx) = watch::channel(false);

        let router_task = tokio::spawn(async move {
            let mut router = Router::default();
            while let Some(msg) = router_rx.recv().await {
                router.handle(msg);
            }
        });

        let accept_router = router_tx.clone();
        let mut accept_shutdown = shutdown_rx.clone();
        let accept_task = tokio::spawn(async move {
            let mut next_conn = 0u64;
            loop {
                tokio::select! {
                    accepted = listener.accept() => match accepted {
                        Ok((stream, peer)) => {
                            next_conn += 1;
                            debug!(%peer, conn = next_conn, "accepted");
                            let _ = stream.set_nodelay(true);
                            tokio::spawn(serve_connection(
                                stream,
                                next_conn,
                                accept_router.clone(),
                                config.clone(),
                                accept_shutdown.clone(),
                            ));
                        }
                        Err(e) => warn!("accept failed: {e}"),
                    },
                    _ = accept_shutdown.changed() => break,
                }
            }
        });

        info!(%local_addr, "broker listening");
        Ok(BrokerHandle {
            local_addr,
            shutdown: shutdown_tx,
            router: router_tx,
            accept_task,
            router_task,
        })
    }
}

pub struct BrokerHandle {
    local_addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    router: mpsc::UnboundedSender<RouterMsg>,
    accept_task: JoinHandle<()>,
    router_task: JoinHandle<()>,
}

impl BrokerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub async fn stats(&self) -> BrokerStats {
        let (tx, rx) = oneshot::channel();
        let _ = self.router.send(RouterMsg::Stats(tx));
        rx.await.unwrap_or_default()
    }

    /// Stops accepting, closes every connection and waits for the listener.
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        let _ = self.accept_task.await;
        drop(self.router);
        // connections hold router senders; the router ends once they are gone
        let _ = timeout(Duration::from_secs(2), self.router_task).await;
    }
}

async fn serve_connection(
    stream: TcpStream,
    conn_id: u64,
    router: mpsc::UnboundedSender<RouterMsg>,
    config: BrokerConfig,
    mut shutdown: watch::Receiver<bool>,
) {
    let (rd, wr) = stream.into_split();
    let mut frames = FrameReader::new(rd);

    let (client_id, keep_alive_s) = match timeout(config.connect_timeout, frames.next()).await {
        Ok(Ok(Some(Packet::Connect { client_id, keep_alive_s }))) => (client_id, keep_alive_s),
        Ok(Ok(Some(_))) => {
            warn!(conn_id, "first packet was not CONNECT");
            return;
        }
        Ok(Ok(None)) => return,
        Ok(Err(e)) => {
            warn!(conn_id, "bad CONNECT: {e}");
            return;
        }
        Err(_) => {
            warn!(conn_id, "no CONNECT before timeout");
            return;
        }
    };
    let client_id = if client_id.is_empty() { format!("auto-{conn_id}") } else { client_id };

    let (tx, rx) = mpsc::unbounded_channel();
    let killed = Arc::new(Notify::new());
    tokio::spawn(run_writer(wr, rx, config.ack_timeout, killed.clone()));
    let _ = router.send(RouterMsg::Connect { client_id: client_id.clone(), conn_id, tx: tx.clone() });

    // keep-alive is enforced at one and a half times the declared interval
    let idle_limit = (keep_alive_s > 0).then(|| Duration::from_millis(u64::from(keep_alive_s) * 1500));

    let result = read_loop(&mut frames, idle_limit, &killed, &mut shutdown, |packet| {
        route_inbound(packet, &client_id, conn_id, &router, &tx)
    })
    .await;
    if let Err(e) = result {
        debug!(%client_id, "connection ended: {e}");
    }
    let _ = router.send(RouterMsg::Disconnect { client_id, conn_id });
    let _ = tx.send(Outbound::Close);
}

async fn read_loop<F>(
    frames: &mut FrameReader<OwnedReadHalf>,
    idle_limit: Option<Duration>,
    killed: &Notify,
    shutdown: &mut watch::Receiver<bool>,
    mut on_packet: F,
) -> Result<(), MqttError>
where
    F: FnMut(Packet) -> Result<bool, MqttError>,
{
    loop {
        let next = async {
            match idle_limit {
                Some(limit) => timeout(limit, frames.next())
                    .await
                    .map_err(|_| MqttError::Timeout("keep-alive"))?,
                None => frames.next().await,
            }
        };
        let packet = tokio::select! {
            p = next => p?,
            _ = killed.notified() => return Ok(()),
            _ = shutdown.changed() => return Ok(()),
        };
        let Some(packet) = packet else {
            return Ok(());
        };
        if !on_packet(packet)? {
            return Ok(());
        }
    }
}

/// Returns `Ok(false)` on a clean DISCONNECT.
fn route_inbound(
    packet: Packet,
    client_id: &str,
    conn_id: u64,
    router: &mpsc::UnboundedSender<RouterMsg>,
    tx: &OutboundTx,
) -> Result<bool, MqttError> {
    let client_id = client_id.to_owned();
    match packet {
        Packet::Publish { topic, payload, qos, packet_id, .. } => {
            let _ = router.send(RouterMsg::Publish { client_id, conn_id, topic, payload, qos, packet_id });
        }
        Packet::PubAck { packet_id } => {
            let _ = tx.send(Outbound::Acked(packet_id));
        }
        Packet::Subscribe { packet_id, filters } => {
            let _ = router.send(RouterMsg::Subscribe { client_id, conn_id, packet_id, filters });
        }
        Packet::Unsubscribe { packet_id, filters } => {
            let _ = router.send(RouterMsg::Unsubscribe { client_id, conn_id, packet_id, filters });
        }
        Packet::PingReq => {
            let _ = tx.send(Outbound::Packet(Packet::PingResp));
        }
        Packet::Disconnect => return Ok(false),
        Packet::Connect { .. } => return Err(MqttError::Protocol("second CONNECT")),
        Packet::ConnAck { .. } | Packet::SubAck { .. } | Packet::UnsubAck { .. } | Packet::PingResp => {
            return Err(MqttError::Protocol("server-only packet from client"))
        }
    }
    Ok(true)
}

struct InFlight {
    packet: Packet,
    deadline: Instant,
    retried: bool,
}

async fn run_writer(
    mut wr: OwnedWriteHalf,
    mut rx: mpsc::UnboundedReceiver<Outbound>,
    ack_timeout: Duration,
    killed: Arc<Notify>,
) {
    let mut inflight: BTreeMap<u16, InFlight> = BTreeMap::new();
    let mut last_id: u16 = 0;
    let result: Result<(), MqttError> = async {
        loop {
            let next_deadline = inflight.values().map(|f| f.deadline).min();
            let msg = tokio::select! {
                msg = rx.recv() => msg,
                _ = tokio::time::sleep_until(next_deadline.unwrap_or_else(Instant::now)), if next_deadline.is_some() => {
                    let now = Instant::now();
                    let expired: Vec<u16> = inflight.iter().filter(|(_, f)| f.deadline <= now).map(|(id, _)| *id).collect();
                    for id in expired {
                        let entry = inflight.get_mut(&id).expect("expired id present");
                        if entry.retried {
                            warn!(packet_id = id, "no PUBACK after retry; dropping");
                            inflight.remove(&id);
                        } else {
                            if let Packet::Publish { dup, .. } = &mut entry.packet {
                                *dup = true;
                            }
                            entry.retried = true;
                            entry.deadline = now + ack_timeout;
                            write_packet(&mut wr, &entry.packet).await?;
                        }
                    }
                    continue;
                }
            };
            match msg {
                None | Some(Outbound::Close) => return Ok(()),
                Some(Outbound::Packet(p)) => write_packet(&mut wr, &p).await?,
                Some(Outbound::Acked(id)) => {
                    inflight.remove(&id);
                }
                Some(Outbound::Deliver { topic, payload, qos }) => {
                    let packet_id = match qos {
                        QoS::AtMostOnce => None,
                        QoS::AtLeastOnce => {
                            let id = next_packet_id(&mut last_id, &inflight);
                            Some(id)
                        }
                    };
                    let packet = Packet::Publish {
                        topic: topic.to_string(),
                        payload: payload.to_vec(),
                        qos,
                        packet_id,
                        dup: false,
                    };
                    write_packet(&mut wr, &packet).await?;
                    if let Some(id) = packet_id {
                        inflight.insert(id, InFlight { packet, deadline: Instant::now() + ack_timeout, retried: false });
                    }
                }
            }
        }
    }
    .await;
    if let Err(e) = result {
        debug!("writer stopped: {e}");
    }
    use tokio::io::AsyncWriteExt;
    let _ = wr.shutdown().await;
    killed.notify_one();
}

fn next_packet_id(last: &mut u16, inflight: &BTreeMap<u16, InFlight>) -> u16 {
    loop {
        *last = last.wrapping_add(1);
        if *last != 0 && !inflight.contains_key(last) {
            return *last;
        }
    }
}
