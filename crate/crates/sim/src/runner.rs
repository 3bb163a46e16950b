//! Drives a [`Simulator`] against a live broker.

use std::time::Duration;

use spms_mqtt::{ClientOptions, Message, MqttClient, MqttError, QoS};
use thiserror::Error;
use tokio::net::ToSocketAddrs;
use tokio::sync::mpsc::UnboundedReceiver;
use tokio::time::Instant;
use tracing::info;

use crate::simulator::Simulator;
use crate::SimError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Virtual milliseconds per wall millisecond. 0 runs as fast as possible.
    pub rate: f64,
    /// How long to keep running after the last scenario event.
    pub linger_ms: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { rate: 1.0, linger_ms: 0 }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Mqtt(#[from] MqttError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub end_ms: u64,
    pub published: usize,
    pub warnings: usize,
}

/// Connects as `sim-{lot_id}`, subscribes to the lot's downlink topics and
/// plays the scenario.
pub async fn connect_and_run(
    broker: impl ToSocketAddrs,
    sim: &mut Simulator,
    opts: &RunOptions,
) -> Result<RunSummary, RunError> {
    let (client, incoming) = MqttClient::connect(broker, ClientOptions::new(format!("sim-{}", sim.lot_id()))).await?;
    let filters = sim.downlink_filters();
    client
        .subscribe(&[(filters[0].as_str(), QoS::AtLeastOnce), (filters[1].as_str(), QoS::AtLeastOnce)])
        .await?;
    let summary = run(sim, &client, incoming, opts).await;
    let _ = client.disconnect();
    summary
}

pub async fn run(
    sim: &mut Simulator,
    client: &MqttClient,
    mut incoming: UnboundedReceiver<Message>,
    opts: &RunOptions,
) -> Result<RunSummary, RunError> {
    let end_ms = sim.last_event_ms().max(sim.now_ms()) + opts.linger_ms;
    let started = Instant::now();
    let mut published = 0;
    loop {
        let target = sim.next_wake_ms().unwrap_or(end_ms).min(end_ms).max(sim.now_ms());
        if opts.rate > 0.0 {
            let deadline = started + Duration::from_secs_f64(target as f64 / opts.rate / 1000.0);
            loop {
                tokio::select! {
                    _ = tokio::time::sleep_until(deadline) => break,
                    m = incoming.recv() => match m {
                        Some(m) => sim.queue_message(&m.topic, &m.payload),
                        None => return Err(MqttError::Closed.into()),
                    },
                }
            }
        }
        while let Ok(m) = incoming.try_recv() {
            sim.queue_message(&m.topic, &m.payload);
        }
        for t in sim.step(target)? {
            client.publish(&t.topic, t.payload.into_bytes(), QoS::AtLeastOnce).await?;
            published += 1;
        }
        if target >= end_ms {
            break;
        }
    }
    info!(end_ms, published, "scenario finished");
    Ok(RunSummary { end_ms, published, warnings: sim.warnings().len() })
}
