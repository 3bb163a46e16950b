//! In-process end-to-end runs: simulator, service and HTTP API wired
//! together on one virtual clock, with no sockets and no wall time.
//!
//! A script is a simulator scenario that may also contain booking lines,
//! which are sent through the HTTP API:
//!
//! ```text
//! {"at_ms":0,"action":"reserve","user":"driver@example.com","slot":"S2","from_s":0,"to_s":7200}
//! {"at_ms":60000,"action":"car_arrives","plate":"W-1","slot":"S1"}
//! ```
//!
//! `from_s`/`to_s` are offsets from the run's epoch.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use spms_core::{LotConfig, LotId, SlotId, UnixSeconds};
use spms_service::{report, Command, Engine, EngineOptions, ManualClock, Policy, ServiceHandle, ServiceState};
use spms_sim::{load_scenario, Scenario, SimConfig, SimWarning, Simulator};
use tokio::sync::broadcast;
use tower::ServiceExt;

use crate::error::OpError;
use crate::files::SeedUser;

pub const DEFAULT_EPOCH: UnixSeconds = 1_700_000_000;
pub const SCRIPT_PASSWORD: &str = "scenario-password";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Booking {
    pub at_ms: u64,
    pub action: String,
    pub user: String,
    #[serde(default)]
    pub lot: Option<LotId>,
    #[serde(default)]
    pub slot: Option<SlotId>,
    pub from_s: i64,
    pub to_s: i64,
    #[serde(default)]
    pub key: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub bookings: Vec<Booking>,
    pub scenario: Scenario,
}

/// Splits booking lines from hardware lines; both must be time-ordered.
pub fn parse_script(text: &str) -> Result<Script, OpError> {
    let mut sim_lines = Vec::new();
    let mut bookings: Vec<Booking> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let is_booking = !line.is_empty()
            && serde_json::from_str::<Value>(line).is_ok_and(|v| v.get("action") == Some(&json!("reserve")));
        if is_booking {
            let b: Booking = serde_json::from_str(line).map_err(|e| OpError::Config(format!("line {}: {e}", idx + 1)))?;
            if bookings.last().is_some_and(|prev| prev.at_ms > b.at_ms) {
                return Err(OpError::Config(format!("line {}: bookings out of order", idx + 1)));
            }
            bookings.push(b);
            // keep line numbers aligned for the simulator's errors
            sim_lines.push("");
        } else {
            sim_lines.push(line);
        }
    }
    let scenario = load_scenario(&sim_lines.join("\n")).map_err(OpError::config)?;
    Ok(Script { bookings, scenario })
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub epoch: UnixSeconds,
    pub heartbeat_ms: u64,
    pub tick_interval_ms: u64,
    pub linger_ms: u64,
    pub snapshot_every: u64,
    pub password_rounds: u32,
    pub policy: Policy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epoch: DEFAULT_EPOCH,
            heartbeat_ms: 2000,
            tick_interval_ms: 10_000,
            linger_ms: 0,
            snapshot_every: 1000,
            password_rounds: 1000,
            policy: Policy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BookingResult {
    pub at_ms: u64,
    pub user: String,
    pub status: u16,
    pub body: Value,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub publish_log: Vec<u8>,
    pub bookings: Vec<BookingResult>,
    pub warnings: Vec<SimWarning>,
    pub state: ServiceState,
    pub digest: String,
    pub last_seq: u64,
    pub end_ms: u64,
}

impl RunOutcome {
    pub fn billing_text(&self) -> String {
        report::billing_text(&self.state)
    }

    pub fn occupancy_text(&self) -> String {
        report::occupancy_text(&self.state)
    }
}

struct Api {
    app: axum::Router,
}

impl Api {
    async fn call(&self, path: &str, token: Option<&str>, key: Option<&str>, body: Value) -> Result<(u16, Value), OpError> {
        let mut req = Request::builder().method("POST").uri(path).header("content-type", "application/json");
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        if let Some(k) = key {
            req = req.header(spms_api::IDEMPOTENCY_HEADER, k);
        }
        let req = req.body(Body::from(body.to_string())).map_err(OpError::runtime)?;
        let resp = self.app.clone().oneshot(req).await.map_err(OpError::runtime)?;
        let status = resp.status().as_u16();
        let bytes = resp.into_body().collect().await.map_err(OpError::runtime)?.to_bytes();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).map_err(OpError::runtime)? };
        Ok((status, value))
    }
}

/// Runs `script` against a fresh service in `data_dir` simulating
/// `lot_id` (default: the first lot).
pub async fn run_in_process(
    lots: &[LotConfig],
    lot_id: Option<&str>,
    users: &[SeedUser],
    script: &Script,
    cfg: &RunConfig,
    data_dir: &Path,
) -> Result<RunOutcome, OpError> {
    let lot = crate::files::pick_lot(lots, lot_id)?;
    let clock = ManualClock::new(cfg.epoch);
    let opts = EngineOptions {
        snapshot_every: cfg.snapshot_every,
        sync_writes: false,
        use_snapshots: true,
        policy: cfg.policy.clone(),
    };
    let engine = Engine::open(data_dir, opts, Arc::new(clock.clone())).map_err(OpError::runtime)?;
    if engine.seq() > u64::from(engine.state().read().policy != Policy::default()) {
        return Err(OpError::RefuseOverwrite(data_dir.to_owned()));
    }
    let service = ServiceHandle::start(engine, cfg.password_rounds);
    let mut effects = service.subscribe_effects();
    let api = Api { app: spms_api::router(service.clone(), None) };

    for l in lots {
        let c = service.submit(Command::CreateLot { config: l.clone() }).await.map_err(OpError::runtime)?;
        c.applied.outcome.map_err(|e| OpError::Config(format!("lot {}: {e}", l.lot_id)))?;
    }

    // Everyone named in the script gets an account; listed users keep
    // their own details.
    let mut accounts: BTreeMap<String, (String, String)> = BTreeMap::new();
    for u in users {
        accounts.insert(u.email.clone(), (u.name.clone(), u.password.clone()));
    }
    for b in &script.bookings {
        accounts.entry(b.user.clone()).or_insert_with(|| (b.user.clone(), SCRIPT_PASSWORD.to_owned()));
    }
    let mut tokens = BTreeMap::new();
    for (email, (name, password)) in &accounts {
        let phone = users.iter().find(|u| &u.email == email).map_or("", |u| u.phone.as_str());
        let (status, body) = api
            .call("/api/v1/users", None, None, json!({"name": name, "email": email, "phone": phone, "password": password}))
            .await?;
        if status != 201 {
            return Err(OpError::Config(format!("registering {email}: {body}")));
        }
        let (status, body) = api
            .call("/api/v1/sessions", None, None, json!({"email": email, "password": password}))
            .await?;
        if status != 201 {
            return Err(OpError::Runtime(format!("login {email}: {body}")));
        }
        tokens.insert(email.clone(), body["token"].as_str().unwrap_or_default().to_owned());
    }

    let mut sim = Simulator::new(lot, script.scenario.clone(), SimConfig { heartbeat_ms: cfg.heartbeat_ms });
    let end_ms = sim.last_event_ms().max(script.bookings.last().map_or(0, |b| b.at_ms)) + cfg.linger_ms;
    let tick_every = cfg.tick_interval_ms.max(1);
    let mut next_tick = tick_every;
    let mut next_booking = 0;
    let mut results = Vec::new();

    loop {
        let candidates = [
            script.bookings.get(next_booking).map(|b| b.at_ms),
            sim.next_wake_ms(),
            Some(next_tick),
        ];
        let Some(now_ms) = candidates.into_iter().flatten().min().filter(|&t| t <= end_ms) else {
            break;
        };
        clock.set(cfg.epoch + (now_ms / 1000) as i64);

        while let Some(b) = script.bookings.get(next_booking).filter(|b| b.at_ms <= now_ms) {
            next_booking += 1;
            let body = json!({
                "lot_id": b.lot.clone().unwrap_or_else(|| lot.lot_id.clone()),
                "slot_id": b.slot,
                "window_start": cfg.epoch + b.from_s,
                "window_end": cfg.epoch + b.to_s,
            });
            let (status, body) = api.call("/api/v1/reservations", tokens.get(&b.user).map(String::as_str), b.key.as_deref(), body).await?;
            results.push(BookingResult { at_ms: now_ms, user: b.user.clone(), status, body });
        }

        for t in sim.step(now_ms).map_err(OpError::runtime)? {
            service
                .submit(Command::SensorEvent { topic: t.topic, payload: t.payload })
                .await
                .map_err(OpError::runtime)?;
            forward_effects(&mut effects, &mut sim);
        }
        if now_ms == next_tick {
            service.tick().await.map_err(OpError::runtime)?;
            forward_effects(&mut effects, &mut sim);
            next_tick += tick_every;
        }
    }
    sim.step(end_ms.max(sim.now_ms())).map_err(OpError::runtime)?;

    let (state, digest) = service.read(|s| (s.clone(), s.digest()));
    let last_seq = spms_service::log::read_log(&data_dir.join(spms_service::log::LOG_FILE))
        .map_err(OpError::runtime)?
        .records
        .last()
        .map_or(0, |r| r.seq);
    Ok(RunOutcome {
        publish_log: sim.publish_log_bytes(),
        bookings: results,
        warnings: sim.warnings().to_vec(),
        state,
        digest,
        last_seq,
        end_ms,
    })
}

/// Hands device commands to the simulator; they take effect at its next step.
fn forward_effects(effects: &mut broadcast::Receiver<spms_service::Effect>, sim: &mut Simulator) {
    while let Ok(e) = effects.try_recv() {
        if e.topic.starts_with(&format!("lot/{}/", sim.lot_id())) {
            sim.queue_message(&e.topic, e.payload.as_bytes());
        }
    }
}
