use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use trconsent_core::engine::PolicyView;
use trconsent_core::lifecycle::RequestStatus;
use trconsent_core::{AuditRecord, Command, CommandOutput, ConsentRequest, ConsentResponse, LogEntry, Verb};

use crate::config::Principal;
use crate::error::ApiError;
use crate::{stream, Shared};

pub fn router(svc: Shared) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/requests", post(submit_request))
        .route("/responses", get(responses))
        .route("/patients/{id}/pending", get(pending))
        .route("/patients/{id}/decisions", post(decide))
        .route("/policies", get(policies))
        .route("/policies/{id}", delete(delete_policy))
        .route("/policies/{id}/withdraw", post(withdraw))
        .route("/policies/{id}/activate", post(activate))
        .route("/events", get(events))
        .route("/events/stream", get(stream::events_stream))
        .route("/audit", get(audit))
        .route("/commands", post(command))
        .with_state(svc)
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Filter {
    pub patient: Option<String>,
    pub after: Option<u64>,
    pub request_id: Option<String>,
}

async fn submit_request(
    State(svc): State<Shared>,
    who: Principal,
    Json(req): Json<ConsentRequest>,
) -> Result<(StatusCode, Json<CommandOutput>), ApiError> {
    if matches!(who, Principal::Patient { .. }) {
        return Err(ApiError::forbidden());
    }
    let out = svc.execute(Command::ConsentRequest(req))?;
    Ok((StatusCode::ACCEPTED, Json(out)))
}

async fn responses(
    State(svc): State<Shared>,
    who: Principal,
    Query(f): Query<Filter>,
) -> Result<Json<Vec<ConsentResponse>>, ApiError> {
    let patient = match &who {
        Principal::HealthcareSystem { .. } => f.patient,
        _ => who.scope(f.patient)?,
    };
    let engine = svc.engine();
    let list = engine
        .responses()
        .iter()
        .filter(|r| patient.as_ref().is_none_or(|p| &r.patient_id == p))
        .filter(|r| f.request_id.as_ref().is_none_or(|id| &r.request_id == id))
        .cloned()
        .collect();
    Ok(Json(list))
}

/// A request awaiting the patient, with what the device knows about it.
#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PendingView {
    #[serde(flatten)]
    pub request: ConsentRequest,
    pub template: String,
    pub goal: String,
    pub emergency: bool,
}

async fn pending(
    State(svc): State<Shared>,
    who: Principal,
    Path(patient): Path<String>,
) -> Result<Json<Vec<PendingView>>, ApiError> {
    if !who.may_act_for(&patient) {
        return Err(ApiError::forbidden());
    }
    let engine = svc.engine();
    let emergency = engine.state().hub.emergency(&patient);
    let list = engine
        .session(&patient)
        .map(|s| {
            s.open
                .iter()
                .filter(|o| o.status == RequestStatus::AwaitingDecision)
                .map(|o| PendingView {
                    request: o.request.clone(),
                    template: o.template.clone(),
                    goal: o.goal.clone(),
                    emergency,
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(Json(list))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Decision {
    pub request_id: String,
    pub grant: bool,
    #[serde(default)]
    pub save_preferences: bool,
}

async fn decide(
    State(svc): State<Shared>,
    who: Principal,
    Path(patient): Path<String>,
    Json(d): Json<Decision>,
) -> Result<Json<CommandOutput>, ApiError> {
    if !who.may_act_for(&patient) {
        return Err(ApiError::forbidden());
    }
    let out = svc.execute(Command::PatientDecision {
        patient,
        request_id: d.request_id,
        grant: d.grant,
        save_preferences: d.save_preferences,
    })?;
    Ok(Json(out))
}

fn policy_command(
    svc: &Shared,
    who: &Principal,
    policy_id: String,
    verb: Verb,
) -> Result<Json<CommandOutput>, ApiError> {
    let owner = svc
        .engine()
        .patient_of(&policy_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown policy `{policy_id}`")))?;
    if !who.may_act_for(&owner) {
        return Err(ApiError::forbidden());
    }
    Ok(Json(svc.execute(Command::PatientCommand { policy_id, verb })?))
}

async fn withdraw(
    State(svc): State<Shared>,
    who: Principal,
    Path(id): Path<String>,
) -> Result<Json<CommandOutput>, ApiError> {
    policy_command(&svc, &who, id, Verb::Withdraw)
}

async fn activate(
    State(svc): State<Shared>,
    who: Principal,
    Path(id): Path<String>,
) -> Result<Json<CommandOutput>, ApiError> {
    policy_command(&svc, &who, id, Verb::Activate)
}

async fn delete_policy(
    State(svc): State<Shared>,
    who: Principal,
    Path(id): Path<String>,
) -> Result<Json<CommandOutput>, ApiError> {
    policy_command(&svc, &who, id, Verb::Delete)
}

async fn policies(
    State(svc): State<Shared>,
    who: Principal,
    Query(f): Query<Filter>,
) -> Result<Json<Vec<PolicyView>>, ApiError> {
    let patient = who.scope(f.patient)?;
    let list = svc
        .engine()
        .policies()
        .into_iter()
        .filter(|v| patient.as_ref().is_none_or(|p| &v.patient == p))
        .collect();
    Ok(Json(list))
}

pub(crate) fn visible(entry: &LogEntry, patient: Option<&String>) -> bool {
    patient.is_none_or(|p| &entry.patient == p)
}

async fn events(
    State(svc): State<Shared>,
    who: Principal,
    Query(f): Query<Filter>,
) -> Result<Json<Vec<LogEntry>>, ApiError> {
    let patient = who.scope(f.patient)?;
    let after = f.after.unwrap_or(0);
    let list = svc
        .engine()
        .log()
        .iter()
        .filter(|e| e.seq > after && visible(e, patient.as_ref()))
        .cloned()
        .collect();
    Ok(Json(list))
}

async fn audit(
    State(svc): State<Shared>,
    who: Principal,
    Query(f): Query<Filter>,
) -> Result<Json<Vec<AuditRecord>>, ApiError> {
    let patient = who.scope(f.patient)?;
    let list = svc
        .engine()
        .audit()
        .iter()
        .filter(|a| patient.as_ref().is_none_or(|p| &a.patient_id == p))
        .cloned()
        .collect();
    Ok(Json(list))
}

/// Raw engine command, for simulation drivers.
async fn command(
    State(svc): State<Shared>,
    who: Principal,
    Json(cmd): Json<Command>,
) -> Result<Json<CommandOutput>, ApiError> {
    if who != Principal::Admin {
        return Err(ApiError::forbidden());
    }
    Ok(Json(svc.execute(cmd)?))
}
