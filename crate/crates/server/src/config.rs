use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use trconsent_core::scenario::Fixtures;

/// Who a bearer token speaks for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "camelCase")]
pub enum Principal {
    /// The patient's own device: sees and steers only that patient.
    Patient { id: String },
    /// Submits consent requests and collects responses.
    HealthcareSystem { name: String },
    /// Full access, including raw engine commands.
    Admin,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "camelCase")]
pub enum ClockConfig {
    /// Time only moves through `advanceClock` commands.
    Simulated { start: NaiveDateTime },
    /// Follows the host's local time.
    #[default]
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ServiceConfig {
    pub fixtures: Fixtures,
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default)]
    pub locations: BTreeMap<String, String>,
    /// Bearer token to principal.
    pub tokens: BTreeMap<String, Principal>,
    /// Snapshot file, rewritten after every successful command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store: Option<PathBuf>,
    /// Consent responses are POSTed here as they are issued.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub callback_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listen: Option<String>,
}

impl ServiceConfig {
    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: ServiceConfig = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let f = &mut self.fixtures;
        for p in f
            .tr_policies
            .iter_mut()
            .chain(f.templates.iter_mut())
            .chain(f.info_point.iter_mut())
        {
            *p = base.join(&*p);
        }
        if let Some(s) = &mut self.store {
            *s = base.join(&*s);
        }
    }
}
