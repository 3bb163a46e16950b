//! Service configuration, read once at start-up from TOML.
//!
//! ```toml
//! data_dir = "data"
//! broker = "127.0.0.1:1883"
//! tick_interval_s = 10
//! snapshot_every = 1000
//! password_rounds = 100000
//!
//! [policy]
//! hold_window_minutes = 30
//! gate_open_ms = 15000
//! heartbeat_ms = 2000
//! tariff = { rate_minor_per_quantum = 250, quantum_minutes = 15, currency_code = "EGP" }
//! extras = [{ code = "wash", name = "Car wash", price_minor = 5000 }]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spms_core::{ExtraService, Tariff};
use thiserror::Error;

/// The part of the configuration that changes outcomes. It is written to
/// the event log whenever it differs from the logged one, so replaying the
/// log never depends on the config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Policy {
    pub hold_window_minutes: u32,
    pub gate_open_ms: u64,
    /// Expected sensor heartbeat; a slot silent for three periods is stale.
    pub heartbeat_ms: u64,
    pub token_ttl_hours: u32,
    pub reset_ttl_minutes: u32,
    /// How far before the applied time a booking window may start.
    pub booking_grace_s: i64,
    /// Overrides every lot's own tariff when set.
    pub tariff: Option<Tariff>,
    /// Offered in every lot in addition to the lot's own catalog.
    pub extras: Vec<ExtraService>,
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            hold_window_minutes: 30,
            gate_open_ms: 15_000,
            heartbeat_ms: 2_000,
            token_ttl_hours: 24,
            reset_ttl_minutes: 15,
            booking_grace_s: 60,
            tariff: None,
            extras: Vec::new(),
        }
    }
}

impl Policy {
    pub fn hold_window_s(&self) -> i64 {
        i64::from(self.hold_window_minutes) * 60
    }

    pub fn token_ttl_s(&self) -> i64 {
        i64::from(self.token_ttl_hours) * 3600
    }

    pub fn reset_ttl_s(&self) -> i64 {
        i64::from(self.reset_ttl_minutes) * 60
    }

    /// Gate hold-open time, rounded up to whole seconds.
    pub fn gate_open_s(&self) -> i64 {
        self.gate_open_ms.div_ceil(1000) as i64
    }

    pub fn stale_after_s(&self) -> i64 {
        (self.heartbeat_ms * 3).div_ceil(1000) as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Broker address; the service runs without MQTT when absent.
    pub broker: Option<String>,
    pub tick_interval_s: u64,
    pub snapshot_every: u64,
    pub password_rounds: u32,
    /// fsync after every append.
    pub sync_writes: bool,
    pub policy: Policy,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            broker: None,
            tick_interval_s: 10,
            snapshot_every: 1000,
            password_rounds: 100_000,
            sync_writes: true,
            policy: Policy::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let cfg = Self::from_toml(&text)
            .map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.snapshot_every == 0 {
            return Err(ConfigError::Invalid("snapshot_every must be positive".into()));
        }
        if self.password_rounds == 0 {
            return Err(ConfigError::Invalid("password_rounds must be positive".into()));
        }
        if self.tick_interval_s == 0 {
            return Err(ConfigError::Invalid("tick_interval_s must be positive".into()));
        }
        if let Some(t) = &self.policy.tariff {
            t.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}
