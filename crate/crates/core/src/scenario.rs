//! Scripted traces replayed against a fresh engine.
//!
//! A trace names its fixtures (paths relative to the trace file), a start
//! time, initial locations and a list of steps. Every step except `assert`,
//! `expectFailure` and `reload` is an engine command. `assert` checks the
//! events and responses produced since the previous assert (exact count,
//! each expected object a subset of the actual one, in order) and the
//! current policy states, pending requests and audit trail.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::authz::{PolicyId, PolicyState};
use crate::context::FixtureInfoPoint;
use crate::engine::{Command, Engine, EngineState};
use crate::library::{Library, LibraryError};
use crate::lifecycle::Verb;
use crate::request::ConsentRequest;
use crate::store;
use crate::template::TemplateConfig;
use crate::time::Span;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Fixtures {
    #[serde(default)]
    pub tr_policies: Vec<PathBuf>,
    #[serde(default)]
    pub templates: Vec<PathBuf>,
    pub info_point: Option<PathBuf>,
    #[serde(default)]
    pub config: TemplateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScenarioTrace {
    pub name: String,
    pub fixtures: Fixtures,
    pub start: NaiveDateTime,
    #[serde(default)]
    pub locations: BTreeMap<String, String>,
    #[serde(default)]
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Expectation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub policy_states: BTreeMap<PolicyId, PolicyState>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pending: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum Step {
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
    Assert(Expectation),
    /// The wrapped step must fail with an error containing `error`.
    ExpectFailure {
        step: Box<Step>,
        error: String,
    },
    /// Saves the engine state to the store format and continues from the
    /// reloaded copy.
    Reload,
}

impl Step {
    fn command(&self) -> Option<Command> {
        Some(match self.clone() {
            Step::AdvanceClock { to, by } => Command::AdvanceClock { to, by },
            Step::SetLocation { party, location } => Command::SetLocation { party, location },
            Step::SetEmergency { patient, active } => Command::SetEmergency { patient, active },
            Step::ConsentRequest(r) => Command::ConsentRequest(r),
            Step::PatientDecision {
                patient,
                request_id,
                grant,
                save_preferences,
            } => Command::PatientDecision {
                patient,
                request_id,
                grant,
                save_preferences,
            },
            Step::PatientCommand { policy_id, verb } => Command::PatientCommand { policy_id, verb },
            Step::Assert(_) | Step::ExpectFailure { .. } | Step::Reload => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read trace {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("malformed trace: {0}")]
    Malformed(String),
    #[error("fixture error: {0}")]
    Fixture(String),
}

impl From<LibraryError> for ScenarioError {
    fn from(e: LibraryError) -> Self {
        ScenarioError::Fixture(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StepOutcome {
    /// Zero-based index into the trace's steps.
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub passed: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioReport {
    pub name: String,
    pub steps_run: usize,
    pub checks: Vec<StepOutcome>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        format!(
            "{}: {} checks, {} passed, {} failed",
            self.name,
            self.checks.len(),
            self.checks.len() - failed,
            failed
        )
    }
}

pub fn parse_trace(text: &str) -> Result<ScenarioTrace, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::Malformed(e.to_string()))
}

pub fn load_trace(path: &Path) -> Result<ScenarioTrace, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    parse_trace(&text)
}

/// Builds the library and info point named by the trace, resolving paths
/// against `base`.
pub fn load_fixtures(f: &Fixtures, base: &Path) -> Result<(Library, FixtureInfoPoint), ScenarioError> {
    let tr: Vec<PathBuf> = f.tr_policies.iter().map(|p| base.join(p)).collect();
    let templates: Vec<PathBuf> = f.templates.iter().map(|p| base.join(p)).collect();
    let library = Library::load(&tr, &templates, f.config)?;
    let info = match &f.info_point {
        Some(p) => FixtureInfoPoint::load(&base.join(p)).map_err(|e| ScenarioError::Fixture(e.to_string()))?,
        None => FixtureInfoPoint::default(),
    };
    Ok((library, info))
}

/// A fresh engine for the trace, with its initial locations applied.
pub fn engine_for(trace: &ScenarioTrace, base: &Path) -> Result<Engine, ScenarioError> {
    let (library, info) = load_fixtures(&trace.fixtures, base)?;
    let mut engine = Engine::new(Arc::new(library), Arc::new(info), trace.start);
    for (party, location) in &trace.locations {
        engine
            .execute(Command::SetLocation {
                party: party.clone(),
                location: location.clone(),
            })
            .map_err(|e| ScenarioError::Fixture(e.to_string()))?;
    }
    Ok(engine)
}

pub fn run_file(path: &Path) -> Result<(ScenarioReport, Engine), ScenarioError> {
    let trace = load_trace(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    run_scenario(&trace, base)
}

/// Executes every step and returns the report plus the final engine.
/// Execution stops at the first step that fails unexpectedly.
pub fn run_scenario(trace: &ScenarioTrace, base: &Path) -> Result<(ScenarioReport, Engine), ScenarioError> {
    let mut engine = engine_for(trace, base)?;
    let mut report = ScenarioReport {
        name: trace.name.clone(),
        steps_run: 0,
        checks: Vec::new(),
    };
    let (mut log_mark, mut resp_mark) = (engine.log().len(), engine.responses().len());
    for (i, step) in trace.steps.iter().enumerate() {
        report.steps_run = i + 1;
        match step {
            Step::Assert(exp) => {
                let failures = check(&engine, exp, log_mark, resp_mark);
                report.checks.push(StepOutcome {
                    step: i,
                    note: exp.note.clone(),
                    passed: failures.is_empty(),
                    failures,
                });
                (log_mark, resp_mark) = (engine.log().len(), engine.responses().len());
            }
            Step::ExpectFailure { step: inner, error } => {
                let Some(cmd) = inner.command() else {
                    return Err(ScenarioError::Malformed(format!(
                        "step {i}: expectFailure must wrap an engine command"
                    )));
                };
                let failures = match engine.execute(cmd) {
                    Ok(_) => vec![format!("expected failure containing `{error}`, but the step succeeded")],
                    Err(e) if e.to_string().contains(error.as_str()) => Vec::new(),
                    Err(e) => vec![format!("expected failure containing `{error}`, got `{e}`")],
                };
                report.checks.push(StepOutcome {
                    step: i,
                    note: None,
                    passed: failures.is_empty(),
                    failures,
                });
            }
            Step::Reload => {
                let text = store::encode(engine.state());
                let state: EngineState = store::decode(&text).map_err(|e| ScenarioError::Fixture(e.to_string()))?;
                let (library, info) = load_fixtures(&trace.fixtures, base)?;
                engine = Engine::from_state(Arc::new(library), Arc::new(info), state);
            }
            other => {
                let cmd = other.command().expect("engine command");
                if let Err(e) = engine.execute(cmd) {
                    report.checks.push(StepOutcome {
                        step: i,
                        note: None,
                        passed: false,
                        failures: vec![format!("step failed: {e}")],
                    });
                    break;
                }
            }
        }
    }
    Ok((report, engine))
}

/// `expected` is contained in `actual`: objects by key subset, arrays
/// element-wise with equal length, scalars by equality.
pub fn subset_match(expected: &Value, actual: &Value) -> bool {
    match (expected, actual) {
        (Value::Object(e), Value::Object(a)) => e.iter().all(|(k, v)| a.get(k).is_some_and(|av| subset_match(v, av))),
        (Value::Array(e), Value::Array(a)) => e.len() == a.len() && e.iter().zip(a).all(|(x, y)| subset_match(x, y)),
        _ => expected == actual,
    }
}

fn match_list(what: &str, expected: &[Value], actual: &[Value], failures: &mut Vec<String>) {
    if expected.len() != actual.len() {
        failures.push(format!(
            "{what}: expected {} entries, got {}: {}",
            expected.len(),
            actual.len(),
            Value::Array(actual.to_vec())
        ));
        return;
    }
    for (n, (e, a)) in expected.iter().zip(actual).enumerate() {
        if !subset_match(e, a) {
            failures.push(format!("{what}[{n}]: expected {e}, got {a}"));
        }
    }
}

fn check(engine: &Engine, exp: &Expectation, log_mark: usize, resp_mark: usize) -> Vec<String> {
    let mut failures = Vec::new();
    if let Some(events) = &exp.events {
        let actual: Vec<Value> = engine.log()[log_mark..]
            .iter()
            .map(|e| serde_json::to_value(&e.event).expect("event serializes"))
            .collect();
        match_list("events", events, &actual, &mut failures);
    }
    if let Some(responses) = &exp.responses {
        let actual: Vec<Value> = engine.responses()[resp_mark..]
            .iter()
            .map(|r| serde_json::to_value(r).expect("response serializes"))
            .collect();
        match_list("responses", responses, &actual, &mut failures);
    }
    if let Some(audit) = &exp.audit {
        let actual: Vec<Value> = engine
            .audit()
            .iter()
            .map(|r| serde_json::to_value(r).expect("audit serializes"))
            .collect();
        match_list("audit", audit, &actual, &mut failures);
    }
    for (id, want) in &exp.policy_states {
        match engine.policy_state(id) {
            Some(got) if got == *want => {}
            got => failures.push(format!("policy {id}: expected {want}, got {got:?}")),
        }
    }
    for (patient, want) in &exp.pending {
        let got: Vec<String> = engine.pending(patient).into_iter().map(|r| r.request_id).collect();
        if &got != want {
            failures.push(format!("pending for {patient}: expected {want:?}, got {got:?}"));
        }
    }
    failures
}
