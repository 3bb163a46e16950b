//! Seed files. Both are line-delimited JSON, like the event log.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spms_core::LotConfig;

use crate::error::OpError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedUser {
    pub name: String,
    pub email: String,
    #[serde(default)]
    pub phone: String,
    pub password: String,
}

pub fn read_text(path: &Path) -> Result<String, OpError> {
    std::fs::read_to_string(path).map_err(|e| OpError::Config(format!("{}: {e}", path.display())))
}

pub fn load_lots(path: &Path) -> Result<Vec<LotConfig>, OpError> {
    let lots = LotConfig::parse_lines(&read_text(path)?)
        .map_err(|e| OpError::Config(format!("{}: {e}", path.display())))?;
    if lots.is_empty() {
        return Err(OpError::Config(format!("{}: no lots", path.display())));
    }
    Ok(lots)
}

pub fn parse_users(text: &str) -> Result<Vec<SeedUser>, String> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| format!("line {}: {e}", idx + 1))?);
    }
    Ok(out)
}

pub fn load_users(path: &Path) -> Result<Vec<SeedUser>, OpError> {
    parse_users(&read_text(path)?).map_err(|e| OpError::Config(format!("{}: {e}", path.display())))
}

/// Picks the lot to simulate: the one named, or the only/first one.
pub fn pick_lot<'a>(lots: &'a [LotConfig], lot_id: Option<&str>) -> Result<&'a LotConfig, OpError> {
    match lot_id {
        Some(id) => lots
            .iter()
            .find(|l| l.lot_id.as_str() == id)
            .ok_or_else(|| OpError::Config(format!("no lot {id} in the lot file"))),
        None => Ok(&lots[0]),
    }
}
