//! On-disk engine snapshots.
//!
//! A store file is a header line followed by the canonical JSON form of the
//! engine state:
//!
//! ```text
//! TRCONSENT-STORE v1 sha256=<hex digest of the body>
//! {...}
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::EngineState;

pub const MAGIC: &str = "TRCONSENT-STORE";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not a consent store file")]
    NotAStore,
    #[error("unsupported store version {found} (expected {VERSION})")]
    Version { found: String },
    #[error("store is corrupt: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn digest(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

pub fn encode(state: &EngineState) -> String {
    let body = serde_json::to_string(state).expect("engine state always serializes");
    format!("{MAGIC} v{VERSION} sha256={}\n{body}\n", digest(&body))
}

pub fn decode(text: &str) -> Result<EngineState, StoreError> {
    let (header, rest) = text.split_once('\n').ok_or(StoreError::NotAStore)?;
    let mut parts = header.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(StoreError::NotAStore);
    }
    let version = parts.next().unwrap_or_default();
    if version != format!("v{VERSION}") {
        return Err(StoreError::Version {
            found: version.trim_start_matches('v').to_owned(),
        });
    }
    let expected = parts
        .next()
        .and_then(|p| p.strip_prefix("sha256="))
        .ok_or_else(|| StoreError::Corrupt("missing checksum".into()))?;
    let body = rest.strip_suffix('\n').unwrap_or(rest);
    if digest(body) != expected {
        return Err(StoreError::Corrupt("checksum mismatch".into()));
    }
    serde_json::from_str(body).map_err(|e| StoreError::Corrupt(e.to_string()))
}

/// Writes atomically through a temporary sibling file.
pub fn save_store(path: &Path, state: &EngineState) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(state))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_store(path: &Path) -> Result<EngineState, StoreError> {
    decode(&std::fs::read_to_string(path)?)
}
