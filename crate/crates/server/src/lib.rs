//! HTTP front end for the consent engine.
//!
//! One [`Service`] owns the engine behind a mutex. Every mutating endpoint
//! becomes an engine [`Command`]; its log entries are published on a
//! broadcast channel that feeds `/events/stream`, and the engine state is
//! written to the configured store before the call returns.

mod auth;
pub mod config;
mod error;
mod routes;
mod stream;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use chrono::{NaiveDateTime, Timelike};
use tokio::sync::broadcast;
use trconsent_core::scenario::load_fixtures;
use trconsent_core::store::{load_store, save_store};
use trconsent_core::{Command, CommandOutput, ConsentResponse, Engine, LogEntry};

pub use config::{ClockConfig, Principal, ServiceConfig};
pub use error::ApiError;
pub use routes::router;

pub type Shared = Arc<Service>;

const EVENT_BUFFER: usize = 1024;

pub struct Service {
    engine: Mutex<Engine>,
    events: broadcast::Sender<LogEntry>,
    tokens: BTreeMap<String, Principal>,
    store: Option<PathBuf>,
    wall_clock: bool,
    callback: Option<(reqwest::Client, String)>,
}

fn wall_now() -> NaiveDateTime {
    let now = chrono::Local::now().naive_local();
    now.with_nanosecond(0).unwrap_or(now)
}

impl Service {
    /// Builds the service, resuming from the store file when it exists.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, String> {
        let (library, info) = load_fixtures(&cfg.fixtures, std::path::Path::new("")).map_err(|e| e.to_string())?;
        let (library, info) = (Arc::new(library), Arc::new(info));
        let start = match &cfg.clock {
            ClockConfig::Simulated { start } => *start,
            ClockConfig::Wall => wall_now(),
        };
        let mut engine = match &cfg.store {
            Some(path) if path.exists() => {
                let state = load_store(path).map_err(|e| format!("{}: {e}", path.display()))?;
                Engine::from_state(library, info, state)
            }
            _ => Engine::new(library, info, start),
        };
        for (party, location) in &cfg.locations {
            engine
                .execute(Command::SetLocation {
                    party: party.clone(),
                    location: location.clone(),
                })
                .map_err(|e| e.to_string())?;
        }
        let callback = cfg.callback_url.clone().map(|url| (reqwest::Client::new(), url));
        Ok(Self {
            engine: Mutex::new(engine),
            events: broadcast::channel(EVENT_BUFFER).0,
            tokens: cfg.tokens.clone(),
            store: cfg.store.clone(),
            wall_clock: matches!(cfg.clock, ClockConfig::Wall),
            callback,
        })
    }

    pub fn engine(&self) -> MutexGuard<'_, Engine> {
        self.engine.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<LogEntry> {
        self.events.subscribe()
    }

    /// Runs one command. Log entries are broadcast while the engine lock is
    /// held, so subscribers see them in log order.
    pub fn execute(&self, cmd: Command) -> Result<CommandOutput, ApiError> {
        let mut engine = self.engine();
        let mut out = CommandOutput::default();
        if self.wall_clock {
            let now = wall_now();
            if now > engine.now() {
                let tick = engine.execute(Command::AdvanceClock {
                    to: Some(now),
                    by: None,
                })?;
                self.publish(&tick);
                out.entries.extend(tick.entries);
                out.responses.extend(tick.responses);
                out.audit.extend(tick.audit);
            }
        }
        let result = engine.execute(cmd);
        let own = match result {
            Ok(o) => o,
            Err(e) => {
                self.persist(&engine)?;
                return Err(e.into());
            }
        };
        self.publish(&own);
        out.entries.extend(own.entries);
        out.responses.extend(own.responses);
        out.audit.extend(own.audit);
        out.policy_state = own.policy_state;
        self.persist(&engine)?;
        drop(engine);
        self.deliver(&out.responses);
        Ok(out)
    }

    /// Fires due timers when following the wall clock.
    pub fn tick(&self) {
        if self.wall_clock {
            let to = wall_now();
            if to > self.engine().now() {
                if let Err(e) = self.execute(Command::AdvanceClock { to: Some(to), by: None }) {
                    tracing::warn!("clock tick failed: {}", e.message);
                }
            }
        }
    }

    fn publish(&self, out: &CommandOutput) {
        for entry in &out.entries {
            // No subscribers is not an error.
            let _ = self.events.send(entry.clone());
        }
    }

    fn persist(&self, engine: &Engine) -> Result<(), ApiError> {
        let Some(path) = &self.store else { return Ok(()) };
        save_store(path, engine.state()).map_err(|e| {
            tracing::error!("cannot write store {}: {e}", path.display());
            ApiError::new(
                axum::http::StatusCode::INTERNAL_SERVER_ERROR,
                format!("state not persisted: {e}"),
            )
        })
    }

    fn deliver(&self, responses: &[ConsentResponse]) {
        let Some((client, url)) = &self.callback else { return };
        for r in responses {
            let req = client.post(url).json(r);
            let id = r.request_id.clone();
            tokio::spawn(async move {
                match req.send().await.and_then(|resp| resp.error_for_status()) {
                    Ok(_) => tracing::debug!("delivered response for {id}"),
                    Err(e) => tracing::warn!("callback for {id} failed: {e}"),
                }
            });
        }
    }
}

/// Serves until the process is stopped. With a wall clock, timers are
/// checked every second.
pub async fn serve(svc: Shared, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    if svc.wall_clock {
        let ticker = svc.clone();
        tokio::spawn(async move {
            let mut every = tokio::time::interval(Duration::from_secs(1));
            loop {
                every.tick().await;
                ticker.tick();
            }
        });
    }
    axum::serve(listener, router(svc)).await
}
