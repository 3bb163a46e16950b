//! The parking service.
//!
//! State is a pure fold over an append-only command log: [`apply`] is the
//! only function that changes it, [`Engine`] is the single writer that
//! logs before anything becomes visible, and [`ServiceHandle`] is the
//! async queue in front of it. Sensor telemetry, HTTP requests and the
//! timer all arrive as [`Command`]s.

pub mod apply;
pub mod auth;
pub mod bridge;
pub mod clock;
pub mod command;
pub mod config;
pub mod engine;
pub mod error;
pub mod handle;
pub mod log;
pub mod query;
pub mod report;
pub mod state;

pub use apply::apply;
pub use clock::{Clock, ManualClock, SystemClock};
pub use command::{Applied, Command, Event, Reply};
pub use config::{Policy, ServiceConfig};
pub use engine::{Committed, Engine, EngineError, EngineOptions};
pub use error::ServiceError;
pub use handle::{BookingRequest, Effect, ServiceHandle};
pub use log::{load, recover, LogError, LogRecord};
pub use state::ServiceState;
