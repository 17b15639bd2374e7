//! Command bus over all consent sessions. The HTTP service and the scenario
//! runner both drive the engine exclusively through [`Engine::execute`].

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authz::{AuthorizationPolicy, PolicyId, PolicyState};
use crate::context::{ContextError, ContextHub, InfoProvider};
use crate::library::Library;
use crate::lifecycle::{AuditRecord, ConsentResponse, ConsentSession, Effects, EngineEvent, Env, LifecycleError, Verb};
use crate::request::ConsentRequest;
use crate::time::Span;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LogEntry {
    pub seq: u64,
    pub at: NaiveDateTime,
    pub patient: String,
    pub event: EngineEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", rename_all_fields = "camelCase")]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Moves the clock to `to` or by `by`, then fires due timers.
    AdvanceClock {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<NaiveDateTime>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        by: Option<Span>,
    },
    SetLocation {
        party: String,
        location: String,
    },
    SetEmergency {
        patient: String,
        active: bool,
    },
    ConsentRequest(ConsentRequest),
    PatientDecision {
        patient: String,
        request_id: String,
        grant: bool,
        #[serde(default)]
        save_preferences: bool,
    },
    PatientCommand {
        policy_id: PolicyId,
        verb: Verb,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("{0}")]
    Lifecycle(#[from] LifecycleError),
    #[error("{0}")]
    Context(#[from] ContextError),
    #[error("unknown patient `{0}`")]
    UnknownPatient(String),
    #[error("advanceClock needs exactly one of `to` and `by`")]
    ClockArgs,
}

impl EngineError {
    /// Whether the error stems from the caller (bad or stale input) rather
    /// than from the engine configuration.
    pub fn is_client_error(&self) -> bool {
        !matches!(
            self,
            EngineError::Lifecycle(
                LifecycleError::Configuration(_) | LifecycleError::CascadeLimit(_) | LifecycleError::Eval(_)
            )
        )
    }
}

/// What a successful command produced.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CommandOutput {
    pub entries: Vec<LogEntry>,
    pub responses: Vec<ConsentResponse>,
    pub audit: Vec<AuditRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_state: Option<PolicyState>,
}

/// Persistent engine state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EngineState {
    pub hub: ContextHub,
    pub sessions: BTreeMap<String, ConsentSession>,
    pub log: Vec<LogEntry>,
    pub audit: Vec<AuditRecord>,
    pub responses: Vec<ConsentResponse>,
}

impl EngineState {
    pub fn new(start: NaiveDateTime) -> Self {
        Self {
            hub: ContextHub::new(start),
            sessions: BTreeMap::new(),
            log: Vec::new(),
            audit: Vec::new(),
            responses: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PolicyView {
    pub patient: String,
    pub policy: AuthorizationPolicy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expires_at: Option<NaiveDateTime>,
}

#[derive(Clone)]
pub struct Engine {
    state: EngineState,
    library: Arc<Library>,
    info: Arc<dyn InfoProvider>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(library: Arc<Library>, info: Arc<dyn InfoProvider>, start: NaiveDateTime) -> Self {
        Self::from_state(library, info, EngineState::new(start))
    }

    pub fn from_state(library: Arc<Library>, info: Arc<dyn InfoProvider>, state: EngineState) -> Self {
        Self { state, library, info }
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn library(&self) -> &Library {
        &self.library
    }

    pub fn now(&self) -> NaiveDateTime {
        self.state.hub.now()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.state.log
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.state.audit
    }

    pub fn responses(&self) -> &[ConsentResponse] {
        &self.state.responses
    }

    pub fn session(&self, patient: &str) -> Option<&ConsentSession> {
        self.state.sessions.get(patient)
    }

    pub fn pending(&self, patient: &str) -> Vec<ConsentRequest> {
        self.session(patient)
            .map(|s| s.pending().cloned().collect())
            .unwrap_or_default()
    }

    /// Saved policies of every patient, deleted ones excluded.
    pub fn policies(&self) -> Vec<PolicyView> {
        self.state
            .sessions
            .values()
            .flat_map(|s| {
                s.policies.values().map(|p| PolicyView {
                    patient: s.patient_id.clone(),
                    policy: p.clone(),
                    expires_at: s.timers.get(&p.id).copied(),
                })
            })
            .collect()
    }

    pub fn policy_state(&self, id: &str) -> Option<PolicyState> {
        self.state.sessions.values().find_map(|s| s.policy_state(id))
    }

    /// Patient owning `policy_id`, if any.
    pub fn patient_of(&self, policy_id: &str) -> Option<String> {
        self.state
            .sessions
            .values()
            .find(|s| s.policy_state(policy_id).is_some())
            .map(|s| s.patient_id.clone())
    }

    /// Runs one command atomically: on error the state is left untouched.
    pub fn execute(&mut self, cmd: Command) -> Result<CommandOutput, EngineError> {
        let backup = (self.state.hub.clone(), self.state.sessions.clone());
        let mut effects: Vec<(String, Effects)> = Vec::new();
        match self.apply(cmd, &mut effects) {
            Ok(policy_state) => Ok(self.commit(effects, policy_state)),
            Err(e) => {
                (self.state.hub, self.state.sessions) = backup;
                Err(e)
            }
        }
    }

    fn apply(&mut self, cmd: Command, out: &mut Vec<(String, Effects)>) -> Result<Option<PolicyState>, EngineError> {
        let EngineState { hub, sessions, .. } = &mut self.state;
        match cmd {
            Command::AdvanceClock { to, by } => {
                match (to, by) {
                    (Some(t), None) => {
                        hub.clock.advance_to(t)?;
                    }
                    (None, Some(d)) => {
                        hub.clock.advance_by(d);
                    }
                    _ => return Err(EngineError::ClockArgs),
                }
                let env = Env {
                    library: &self.library,
                    info: self.info.as_ref(),
                    hub,
                };
                for (patient, s) in sessions.iter_mut() {
                    let mut fx = Effects::default();
                    s.process_timeouts(&env, env.now(), &mut fx)?;
                    out.push((patient.clone(), fx));
                }
                Ok(None)
            }
            Command::SetLocation { party, location } => {
                hub.set_location(party, location);
                Ok(None)
            }
            Command::SetEmergency { patient, active } => {
                if hub.emergency(&patient) != active {
                    hub.set_emergency(&patient, active);
                    let text = if active {
                        format!("emergency situation detected for {patient}")
                    } else {
                        format!("emergency situation cleared for {patient}")
                    };
                    let mut fx = Effects::default();
                    fx.push(EngineEvent::AuditNote { text });
                    out.push((patient, fx));
                }
                Ok(None)
            }
            Command::ConsentRequest(req) => {
                let env = Env {
                    library: &self.library,
                    info: self.info.as_ref(),
                    hub,
                };
                let patient = req.patient_id.clone();
                let s = sessions
                    .entry(patient.clone())
                    .or_insert_with(|| ConsentSession::new(patient.clone()));
                let mut fx = Effects::default();
                s.handle_consent_request(&env, req, &mut fx)?;
                out.push((patient, fx));
                Ok(None)
            }
            Command::PatientDecision {
                patient,
                request_id,
                grant,
                save_preferences,
            } => {
                let env = Env {
                    library: &self.library,
                    info: self.info.as_ref(),
                    hub,
                };
                let s = sessions
                    .get_mut(&patient)
                    .ok_or_else(|| EngineError::UnknownPatient(patient.clone()))?;
                let mut fx = Effects::default();
                s.record_patient_decision(&env, &request_id, grant, save_preferences, &mut fx)?;
                out.push((patient, fx));
                Ok(None)
            }
            Command::PatientCommand { policy_id, verb } => {
                let patient = sessions
                    .values()
                    .find(|s| s.policy_state(&policy_id).is_some())
                    .map(|s| s.patient_id.clone())
                    .ok_or_else(|| LifecycleError::UnknownPolicy(policy_id.clone()))?;
                let env = Env {
                    library: &self.library,
                    info: self.info.as_ref(),
                    hub,
                };
                let s = sessions.get_mut(&patient).expect("owner exists");
                let mut fx = Effects::default();
                let state = s.transition_policy(&env, &policy_id, verb, &mut fx)?;
                out.push((patient, fx));
                Ok(Some(state))
            }
        }
    }

    fn commit(&mut self, effects: Vec<(String, Effects)>, policy_state: Option<PolicyState>) -> CommandOutput {
        let now = self.now();
        let mut output = CommandOutput {
            policy_state,
            ..CommandOutput::default()
        };
        for (patient, fx) in effects {
            for event in fx.events {
                let entry = LogEntry {
                    seq: self.state.log.len() as u64 + 1,
                    at: now,
                    patient: patient.clone(),
                    event,
                };
                self.state.log.push(entry.clone());
                output.entries.push(entry);
            }
            for mut record in fx.audit {
                record.seq = self.state.audit.len() as u64 + 1;
                self.state.audit.push(record.clone());
                output.audit.push(record);
            }
            self.state.responses.extend(fx.responses.iter().cloned());
            output.responses.extend(fx.responses);
        }
        output
    }
}
