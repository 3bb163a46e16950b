//! Operator tool for the parking system: runs the broker, the service and
//! the simulator, seeds data directories, replays logs and prints reports.

pub mod cli;
pub mod error;
pub mod files;
pub mod scenario;
pub mod store;

pub use error::OpError;
