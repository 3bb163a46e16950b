//! Broker link and timer: the background tasks that feed the queue.

use std::time::Duration;

use spms_mqtt::{ClientOptions, MqttClient, QoS};
use tokio::sync::{broadcast, watch};
use tracing::{debug, info, warn};

use crate::command::Command;
use crate::handle::ServiceHandle;

pub const CLIENT_ID: &str = "svc";
pub const TELEMETRY_FILTERS: [&str; 2] = ["lot/+/slot/+/ir", "lot/+/gate/+/piezo"];

/// Keeps a broker session up until `stop` flips, reconnecting with
/// exponential backoff. Telemetry becomes `SensorEvent` commands; effects
/// of committed commands are published.
pub async fn run_mqtt_bridge(handle: ServiceHandle, broker: String, mut stop: watch::Receiver<bool>) {
    let mut backoff = Duration::from_millis(100);
    let mut effects = handle.subscribe_effects();
    while !*stop.borrow() {
        let connected = tokio::select! {
            r = MqttClient::connect(broker.as_str(), ClientOptions::new(CLIENT_ID)) => r,
            _ = stop.changed() => break,
        };
        let (client, mut incoming) = match connected {
            Ok(c) => c,
            Err(e) => {
                warn!("broker {broker} unreachable: {e}; retrying in {backoff:?}");
                tokio::select! {
                    _ = tokio::time::sleep(backoff) => {}
                    _ = stop.changed() => break,
                }
                backoff = (backoff * 2).min(Duration::from_secs(5));
                continue;
            }
        };
        let filters: Vec<(&str, QoS)> = TELEMETRY_FILTERS.iter().map(|f| (*f, QoS::AtLeastOnce)).collect();
        if let Err(e) = client.subscribe(&filters).await {
            warn!("subscribe failed: {e}");
            continue;
        }
        info!("connected to broker {broker}");
        backoff = Duration::from_millis(100);
        loop {
            tokio::select! {
                m = incoming.recv() => match m {
                    Some(m) => {
                        let cmd = Command::SensorEvent {
                            topic: m.topic,
                            payload: String::from_utf8_lossy(&m.payload).into_owned(),
                        };
                        if let Err(e) = handle.submit(cmd).await {
                            warn!("sensor event not committed: {e}");
                        }
                    }
                    None => {
                        warn!("broker connection lost");
                        break;
                    }
                },
                e = effects.recv() => match e {
                    Ok(effect) => {
                        if let Err(err) = client.publish(&effect.topic, effect.payload.into_bytes(), QoS::AtLeastOnce).await {
                            warn!("publish to {} failed: {err}", effect.topic);
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(n)) => warn!("dropped {n} device commands"),
                    Err(broadcast::error::RecvError::Closed) => return,
                },
                _ = stop.changed() => {
                    let _ = client.disconnect();
                    return;
                }
            }
        }
    }
    debug!("bridge stopped");
}

/// Submits a `TimerTick` every `every` until `stop` flips.
pub async fn run_ticker(handle: ServiceHandle, every: Duration, mut stop: watch::Receiver<bool>) {
    let mut interval = tokio::time::interval(every);
    interval.tick().await;
    loop {
        tokio::select! {
            _ = interval.tick() => {
                if let Err(e) = handle.submit(Command::TimerTick).await {
                    warn!("tick not committed: {e}");
                }
            }
            _ = stop.changed() => return,
        }
    }
}
