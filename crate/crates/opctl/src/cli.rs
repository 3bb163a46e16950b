//! Command-line surface. `execute` does the work; `main` only maps
//! results to exit codes.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spms_mqtt::{Broker, BrokerConfig};
use spms_service::bridge::{run_mqtt_bridge, run_ticker};
use spms_service::{Engine, EngineOptions, ServiceConfig, ServiceHandle, SystemClock};
use spms_sim::runner::{connect_and_run, RunOptions};
use spms_sim::{load_scenario, SimConfig, Simulator};
use tokio::sync::watch;
use tracing::info;

use crate::error::OpError;
use crate::files::{load_lots, load_users, pick_lot, read_text};
use crate::scenario::{parse_script, run_in_process, RunConfig};
use crate::store::{self, ReportKind};

pub const DATA_ENV: &str = "SPMS_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "opctl", version, about = "Smart parking operator tool")]
pub struct Cli {
    /// Log filter, e.g. `info` or `spms_service=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run the MQTT broker until interrupted.
    Broker(BrokerArgs),
    /// Run the parking service and its HTTP API until interrupted.
    Service(ServiceArgs),
    /// Play a scenario against a running broker.
    Sim(SimArgs),
    /// Load lots and users into an empty data directory.
    Seed(SeedArgs),
    /// Print an occupancy or billing report from a data directory.
    Report(ReportArgs),
    /// Replay the event log and print the final seq and state digest.
    Replay(ReplayArgs),
    /// Run a script end to end in one process on a virtual clock.
    Scenario(ScenarioArgs),
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Data directory holding the event log and snapshots. The
    /// SPMS_DATA_DIR environment variable takes precedence.
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
}

impl DataArg {
    pub fn resolve(&self) -> PathBuf {
        data_dir(&self.data)
    }
}

/// `SPMS_DATA_DIR`, when set and non-empty, wins over the flag.
pub fn data_dir(flag: &Path) -> PathBuf {
    match std::env::var_os(DATA_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.to_owned(),
    }
}

#[derive(Debug, Args)]
pub struct BrokerArgs {
    #[arg(long, default_value = "0.0.0.0:1883")]
    pub bind: String,
    /// Seconds a QoS 1 delivery waits for its acknowledgement.
    #[arg(long, default_value_t = 5)]
    pub ack_timeout_s: u64,
}

#[derive(Debug, Args)]
pub struct ServiceArgs {
    /// TOML configuration file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = spms_api::DEFAULT_LISTEN)]
    pub listen: String,
    /// Broker host:port. Without one the service runs with no MQTT link.
    #[arg(long)]
    pub broker: Option<String>,
    /// Directory served under /app.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value = "127.0.0.1:1883")]
    pub broker: String,
    #[arg(long)]
    pub lot_config: PathBuf,
    /// Lot to simulate; defaults to the first one in the file.
    #[arg(long)]
    pub lot: Option<String>,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub heartbeat_ms: u64,
    /// Virtual milliseconds per wall millisecond; 0 runs as fast as possible.
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub linger_ms: u64,
    /// Write the ordered publish log here when done.
    #[arg(long)]
    pub publish_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lot_config: PathBuf,
    #[arg(long)]
    pub users: Option<PathBuf>,
    /// Clear an existing log first.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Occupancy,
    Billing,
}

impl From<KindArg> for ReportKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Occupancy => ReportKind::Occupancy,
            KindArg::Billing => ReportKind::Billing,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(value_enum)]
    pub kind: KindArg,
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub csv: bool,
    /// Rebuild from the log alone, ignoring snapshots.
    #[arg(long)]
    pub no_snapshots: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Snapshot file to check the replay against.
    #[arg(long)]
    pub against: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub lot_config: PathBuf,
    #[arg(long)]
    pub script: PathBuf,
    #[arg(long)]
    pub lot: Option<String>,
    #[arg(long)]
    pub users: Option<PathBuf>,
    /// Keep the service data here instead of a temporary directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub heartbeat_ms: u64,
    #[arg(long, default_value_t = 10_000)]
    pub tick_interval_ms: u64,
    #[arg(long, default_value_t = 0)]
    pub linger_ms: u64,
    #[arg(long, value_enum, default_value = "billing")]
    pub report: KindArg,
    #[arg(long)]
    pub publish_log: Option<PathBuf>,
}

pub async fn execute(cli: Cli, out: &mut (dyn Write + Send)) -> Result<(), OpError> {
    match cli.command {
        Cmd::Broker(a) => broker(a, out).await,
        Cmd::Service(a) => service(a, out).await,
        Cmd::Sim(a) => sim(a, out).await,
        Cmd::Seed(a) => seed(a, out),
        Cmd::Report(a) => {
            let (state, _) = store::load_state(&a.data.resolve(), !a.no_snapshots)?;
            write_out(out, &store::report_text(&state, a.kind.into(), a.csv))
        }
        Cmd::Replay(a) => {
            let r = store::replay(&a.data.resolve(), a.against.as_deref())?;
            write_out(out, &format!("seq {}\ndigest {}\n", r.seq, r.digest))
        }
        Cmd::Scenario(a) => scenario(a, out).await,
    }
}

fn write_out(out: &mut (dyn Write + Send), text: &str) -> Result<(), OpError> {
    out.write_all(text.as_bytes()).and_then(|()| out.flush()).map_err(OpError::runtime)
}

fn parse_addr(what: &str, s: &str) -> Result<SocketAddr, OpError> {
    s.parse().map_err(|e| OpError::Config(format!("{what} {s}: {e}")))
}

async fn interrupted() {
    let _ = tokio::signal::ctrl_c().await;
}

async fn broker(a: BrokerArgs, out: &mut (dyn Write + Send)) -> Result<(), OpError> {
    let cfg = BrokerConfig {
        bind: parse_addr("--bind", &a.bind)?,
        ack_timeout: Duration::from_secs(a.ack_timeout_s),
        ..Default::default()
    };
    let handle = Broker::start(cfg).await.map_err(|e| OpError::Config(format!("binding {}: {e}", a.bind)))?;
    write_out(out, &format!("broker listening on {}\n", handle.local_addr()))?;
    interrupted().await;
    handle.shutdown().await;
    Ok(())
}

fn service_config(a: &ServiceArgs) -> Result<ServiceConfig, OpError> {
    let mut cfg = match &a.config {
        Some(p) => ServiceConfig::load(p).map_err(OpError::config)?,
        None => ServiceConfig::default(),
    };
    if let Some(d) = &a.data {
        cfg.data_dir = d.clone();
    }
    cfg.data_dir = data_dir(&cfg.data_dir);
    if a.broker.is_some() {
        cfg.broker = a.broker.clone();
    }
    Ok(cfg)
}

async fn service(a: ServiceArgs, out: &mut (dyn Write + Send)) -> Result<(), OpError> {
    let cfg = service_config(&a)?;
    let listener = tokio::net::TcpListener::bind(&a.listen)
        .await
        .map_err(|e| OpError::Config(format!("binding {}: {e}", a.listen)))?;
    std::fs::create_dir_all(&cfg.data_dir).map_err(|e| OpError::Config(format!("{}: {e}", cfg.data_dir.display())))?;
    let engine = Engine::open(&cfg.data_dir, EngineOptions::from(&cfg), Arc::new(SystemClock)).map_err(OpError::runtime)?;
    info!(seq = engine.seq(), "recovered");
    let handle = ServiceHandle::start(engine, cfg.password_rounds);

    let (stop_tx, stop_rx) = watch::channel(false);
    let mut tasks = Vec::new();
    if let Some(b) = cfg.broker.clone() {
        tasks.push(tokio::spawn(run_mqtt_bridge(handle.clone(), b, stop_rx.clone())));
    }
    tasks.push(tokio::spawn(run_ticker(handle.clone(), Duration::from_secs(cfg.tick_interval_s), stop_rx.clone())));

    let addr = listener.local_addr().map_err(OpError::runtime)?;
    write_out(out, &format!("service listening on {addr}, data in {}\n", cfg.data_dir.display()))?;
    let app = spms_api::router(handle.clone(), a.static_dir.clone());
    let served = spms_api::serve(listener, app, interrupted()).await;
    let _ = stop_tx.send(true);
    for t in tasks {
        let _ = t.await;
    }
    served.map_err(OpError::runtime)
}

async fn sim(a: SimArgs, out: &mut (dyn Write + Send)) -> Result<(), OpError> {
    let lots = load_lots(&a.lot_config)?;
    let lot = pick_lot(&lots, a.lot.as_deref())?;
    let scenario = load_scenario(&read_text(&a.scenario)?)
        .map_err(|e| OpError::Config(format!("{}: {e}", a.scenario.display())))?;
    if !(a.rate >= 0.0 && a.rate.is_finite()) {
        return Err(OpError::Usage(format!("--rate must be a non-negative number, got {}", a.rate)));
    }
    let mut sim = Simulator::new(lot, scenario, SimConfig { heartbeat_ms: a.heartbeat_ms });
    let opts = RunOptions { rate: a.rate, linger_ms: a.linger_ms };
    let summary = tokio::select! {
        r = connect_and_run(a.broker.as_str(), &mut sim, &opts) => Some(r.map_err(OpError::runtime)?),
        _ = interrupted() => None,
    };
    if let Some(p) = &a.publish_log {
        std::fs::write(p, sim.publish_log_bytes()).map_err(OpError::runtime)?;
    }
    match summary {
        Some(s) => write_out(out, &format!("published {} messages up to {} ms, {} warnings\n", s.published, s.end_ms, s.warnings)),
        None => write_out(out, &format!("interrupted at {} ms\n", sim.now_ms())),
    }
}

fn seed(a: SeedArgs, out: &mut (dyn Write + Send)) -> Result<(), OpError> {
    let mut cfg = match &a.config {
        Some(p) => ServiceConfig::load(p).map_err(OpError::config)?,
        None => ServiceConfig::default(),
    };
    cfg.data_dir = a.data.resolve();
    let lots = load_lots(&a.lot_config)?;
    let users = match &a.users {
        Some(p) => load_users(p)?,
        None => Vec::new(),
    };
    std::fs::create_dir_all(&cfg.data_dir).map_err(|e| OpError::Config(format!("{}: {e}", cfg.data_dir.display())))?;
    let s = store::seed(&cfg.data_dir, &cfg, &lots, &users, a.force)?;
    write_out(
        out,
        &format!("seeded {} lots, {} slots, {} users into {} (seq {})\n", s.lots, s.slots, s.users, cfg.data_dir.display(), s.last_seq),
    )
}

async fn scenario(a: ScenarioArgs, out: &mut (dyn Write + Send)) -> Result<(), OpError> {
    let lots = load_lots(&a.lot_config)?;
    let script = parse_script(&read_text(&a.script)?).map_err(|e| match e {
        OpError::Config(m) => OpError::Config(format!("{}: {m}", a.script.display())),
        other => other,
    })?;
    let users = match &a.users {
        Some(p) => load_users(p)?,
        None => Vec::new(),
    };
    let cfg = RunConfig {
        heartbeat_ms: a.heartbeat_ms,
        tick_interval_ms: a.tick_interval_ms,
        linger_ms: a.linger_ms,
        ..RunConfig::default()
    };
    let tmp;
    let dir = match &a.data {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| OpError::Config(format!("{}: {e}", d.display())))?;
            d.clone()
        }
        None => {
            tmp = tempfile::tempdir().map_err(OpError::runtime)?;
            tmp.path().to_owned()
        }
    };
    let r = run_in_process(&lots, a.lot.as_deref(), &users, &script, &cfg, &dir).await?;
    if let Some(p) = &a.publish_log {
        std::fs::write(p, &r.publish_log).map_err(OpError::runtime)?;
    }
    let mut text = String::new();
    for b in &r.bookings {
        text.push_str(&format!("booking at {} ms by {}: {} {}\n", b.at_ms, b.user, b.status, b.body));
    }
    for w in &r.warnings {
        text.push_str(&format!("warning: {w:?}\n"));
    }
    text.push_str(&store::report_text(&r.state, a.report.into(), false));
    text.push_str(&format!("seq {}\ndigest {}\n", r.last_seq, r.digest));
    write_out(out, &text)
}
