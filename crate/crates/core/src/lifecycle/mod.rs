//! Per-patient consent sessions. Each session keeps one goal context per
//! (TR policy, requester) pair; a context owns a bound TR instance, its fact
//! store and at most one saved authorization policy. Requests, patient
//! decisions, patient commands and timer expiries update the facts, and the
//! TR instance is stepped until it settles, dispatching the built-in
//! actions of every firing.

mod actions;
pub mod events;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authz::{AuthorizationPolicy, PolicyId, PolicyState};
use crate::context::{ContextError, ContextHub, InfoProvider};
use crate::facts::{Fact, FactStore};
use crate::library::Library;
use crate::request::{ConsentRequest, RequestId};
use crate::template::{match_templates, TemplateError};
use crate::tr::{EvalError, TrInstance};

pub use actions::ACTIONS;
pub use events::{AuditRecord, ConsentResponse, Effects, EngineEvent};

/// Upper bound on firings per command; a well-formed policy settles in a
/// handful of steps.
pub const CASCADE_LIMIT: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LifecycleError {
    #[error("request is for patient `{got}` but this session belongs to `{expected}`")]
    PatientMismatch { expected: String, got: String },
    #[error("no template applies to request `{0}`, so no TR policy can handle it")]
    NoApplicableGoal(RequestId),
    #[error("request `{0}` was already received")]
    DuplicateRequest(RequestId),
    #[error("consent request `{0}` must list at least one {1}")]
    EmptyRequest(RequestId, &'static str),
    #[error("unknown request `{0}`")]
    UnknownRequest(RequestId),
    #[error("request `{0}` has already been decided")]
    DuplicateDecision(RequestId),
    #[error("request `{0}` is not waiting for a patient decision")]
    NotAwaitingDecision(RequestId),
    #[error("unknown policy `{0}`")]
    UnknownPolicy(PolicyId),
    #[error("cannot {verb} policy `{policy}` in state {state}")]
    IllegalTransition {
        policy: PolicyId,
        state: PolicyState,
        verb: Verb,
    },
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("TR policy `{0}` did not settle within {CASCADE_LIMIT} firings")]
    CascadeLimit(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Context(#[from] ContextError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Verb {
    Withdraw,
    Activate,
    Delete,
}

impl std::fmt::Display for Verb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verb::Withdraw => "withdraw",
            Verb::Activate => "activate",
            Verb::Delete => "delete",
        })
    }
}

impl std::str::FromStr for Verb {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "withdraw" => Ok(Verb::Withdraw),
            "activate" => Ok(Verb::Activate),
            "delete" => Ok(Verb::Delete),
            other => Err(format!("unknown verb `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestStatus {
    New,
    AwaitingDecision,
    Decided,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OpenRequest {
    pub request: ConsentRequest,
    pub status: RequestStatus,
    pub template: String,
    pub goal: String,
    pub holder: String,
}

/// Everything one TR instance works on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GoalContext {
    pub goal: String,
    /// Requester ID, or the requester role for role-level policies.
    pub holder: String,
    pub instance: TrInstance,
    pub facts: FactStore,
    pub policy_id: Option<PolicyId>,
    pub first_request_at: Option<NaiveDateTime>,
    /// Request answered by the next `sendConsent`.
    pub consent_ready: Option<RequestId>,
}

/// Read-only inputs a session command needs besides the session itself.
#[derive(Clone, Copy)]
pub struct Env<'a> {
    pub library: &'a Library,
    pub info: &'a dyn InfoProvider,
    pub hub: &'a ContextHub,
}

impl Env<'_> {
    pub fn now(&self) -> NaiveDateTime {
        self.hub.now()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConsentSession {
    pub patient_id: String,
    pub contexts: Vec<GoalContext>,
    pub open: Vec<OpenRequest>,
    pub answered: BTreeSet<RequestId>,
    pub policies: BTreeMap<PolicyId, AuthorizationPolicy>,
    pub timers: BTreeMap<PolicyId, NaiveDateTime>,
    /// IDs of deleted policies; deletion is permanent.
    pub tombstones: BTreeSet<PolicyId>,
    pub counter: u64,
}

pub(crate) fn patient_policy(patient: &str) -> String {
    format!("{patient}.Policy")
}

impl ConsentSession {
    pub fn new(patient_id: impl Into<String>) -> Self {
        Self {
            patient_id: patient_id.into(),
            contexts: Vec::new(),
            open: Vec::new(),
            answered: BTreeSet::new(),
            policies: BTreeMap::new(),
            timers: BTreeMap::new(),
            tombstones: BTreeSet::new(),
            counter: 0,
        }
    }

    pub fn pending(&self) -> impl Iterator<Item = &ConsentRequest> {
        self.open
            .iter()
            .filter(|r| r.status == RequestStatus::AwaitingDecision)
            .map(|r| &r.request)
    }

    pub fn policy_state(&self, id: &str) -> Option<PolicyState> {
        if self.tombstones.contains(id) {
            Some(PolicyState::Deleted)
        } else {
            self.policies.get(id).map(|p| p.state)
        }
    }

    fn context_index(&self, goal: &str, holder: &str) -> Option<usize> {
        self.contexts.iter().position(|c| c.goal == goal && c.holder == holder)
    }

    fn ensure_context(&mut self, env: &Env, goal: &str, holder: &str) -> Result<usize, LifecycleError> {
        if let Some(i) = self.context_index(goal, holder) {
            return Ok(i);
        }
        let policy = env
            .library
            .tr_policies
            .get(goal)
            .ok_or_else(|| LifecycleError::Configuration(format!("no TR policy named `{goal}`")))?;
        let instance = TrInstance::with_args(policy.clone(), [self.patient_id.clone()])?;
        self.contexts.push(GoalContext {
            goal: goal.to_owned(),
            holder: holder.to_owned(),
            instance,
            facts: FactStore::new(),
            policy_id: None,
            first_request_at: None,
            consent_ready: None,
        });
        Ok(self.contexts.len() - 1)
    }

    fn context_of_policy(&self, id: &str) -> Option<usize> {
        self.contexts.iter().position(|c| c.policy_id.as_deref() == Some(id))
    }

    /// Takes a consent request in, selecting the goal through the most
    /// specific applicable template, and runs the goal's TR policy.
    pub fn handle_consent_request(
        &mut self,
        env: &Env,
        mut req: ConsentRequest,
        fx: &mut Effects,
    ) -> Result<(), LifecycleError> {
        if req.patient_id != self.patient_id {
            return Err(LifecycleError::PatientMismatch {
                expected: self.patient_id.clone(),
                got: req.patient_id,
            });
        }
        if self.answered.contains(&req.request_id) || self.open.iter().any(|o| o.request.request_id == req.request_id) {
            return Err(LifecycleError::DuplicateRequest(req.request_id));
        }
        if req.resources.is_empty() {
            return Err(LifecycleError::EmptyRequest(req.request_id, "resource"));
        }
        if req.rights.is_empty() {
            return Err(LifecycleError::EmptyRequest(req.request_id, "right"));
        }
        req.received_at.get_or_insert(env.now());
        let ctx = env.hub.snapshot(&req.requester_id, &self.patient_id)?;
        let template = match_templates(&req, &ctx, &env.library.templates)?
            .into_iter()
            .next()
            .ok_or_else(|| LifecycleError::NoApplicableGoal(req.request_id.clone()))?;
        let role_level = env.library.config.role_level_emergency && template.requires_emergency();
        let holder = if role_level {
            req.requester_role.clone()
        } else {
            req.requester_id.clone()
        };
        let ci = self.ensure_context(env, &template.goal_tag, &holder)?;

        let patient = self.patient_id.clone();
        let c = &mut self.contexts[ci];
        c.first_request_at.get_or_insert(env.now());
        let has_active = c
            .policy_id
            .as_ref()
            .and_then(|id| self.policies.get(id))
            .is_some_and(|p| p.state == PolicyState::Active);
        if req.patient_unconscious && template.break_the_glass && !has_active {
            fx.audit.push(AuditRecord {
                seq: 0,
                at: env.now(),
                patient_id: patient.clone(),
                requester_id: req.requester_id.clone(),
                requester_role: req.requester_role.clone(),
                request_id: req.request_id.clone(),
                template: template.id.clone(),
                resources: req.resources.iter().cloned().collect(),
                rights: req.rights.iter().cloned().collect(),
                purpose: req.purpose.clone(),
                circumstances: req.circumstances.clone(),
                policy_id: None,
            });
            fx.push(EngineEvent::BreakTheGlass {
                request_id: req.request_id.clone(),
                requester: req.requester_id.clone(),
                template: template.id.clone(),
            });
            // The requester consents on the patient's behalf and the policy is
            // kept for the rest of the treatment.
            c.consent_ready = Some(req.request_id.clone());
            c.facts
                .assert(Fact::new("consentAvailable", [&patient, &req.requester_id]));
            c.facts.assert(Fact::flag("saveCurrentPreferences"));
        } else {
            c.facts.assert(Fact::new("needsConsent", [&patient, &req.requester_id]));
        }
        let status = if c.consent_ready.as_deref() == Some(req.request_id.as_str()) {
            RequestStatus::Decided
        } else {
            RequestStatus::New
        };
        c.instance.rearm();
        self.open.push(OpenRequest {
            template: template.id.clone(),
            goal: template.goal_tag.clone(),
            holder,
            request: req,
            status,
        });
        self.settle(env, ci, fx)
    }

    /// Applies the patient's answer to a queued request.
    pub fn record_patient_decision(
        &mut self,
        env: &Env,
        request_id: &str,
        grant: bool,
        save_preferences: bool,
        fx: &mut Effects,
    ) -> Result<(), LifecycleError> {
        let Some(oi) = self.open.iter().position(|o| o.request.request_id == request_id) else {
            return Err(if self.answered.contains(request_id) {
                LifecycleError::DuplicateDecision(request_id.to_owned())
            } else {
                LifecycleError::UnknownRequest(request_id.to_owned())
            });
        };
        match self.open[oi].status {
            RequestStatus::AwaitingDecision => {}
            RequestStatus::Decided => return Err(LifecycleError::DuplicateDecision(request_id.to_owned())),
            RequestStatus::New => return Err(LifecycleError::NotAwaitingDecision(request_id.to_owned())),
        }
        let (goal, holder) = (self.open[oi].goal.clone(), self.open[oi].holder.clone());
        let requester = self.open[oi].request.requester_id.clone();
        let ci = self
            .context_index(&goal, &holder)
            .ok_or_else(|| LifecycleError::Configuration(format!("missing context for {goal}/{holder}")))?;
        let patient = self.patient_id.clone();
        if grant {
            self.open[oi].status = RequestStatus::Decided;
            let c = &mut self.contexts[ci];
            c.consent_ready = Some(request_id.to_owned());
            c.facts.assert(Fact::new("consentAvailable", [&patient, &requester]));
            if save_preferences {
                c.facts.assert(Fact::flag("saveCurrentPreferences"));
            }
        } else {
            self.answer(
                env,
                ci,
                request_id,
                false,
                Some("consent refused by the patient".into()),
                fx,
            );
        }
        self.settle(env, ci, fx)
    }

    /// Requests a policy state change by raising the corresponding request
    /// fact. The change is carried out by the TR policy; when a
    /// higher-priority rule currently holds it is deferred and the
    /// unchanged state is returned.
    pub fn transition_policy(
        &mut self,
        env: &Env,
        policy_id: &str,
        verb: Verb,
        fx: &mut Effects,
    ) -> Result<PolicyState, LifecycleError> {
        let state = self
            .policy_state(policy_id)
            .ok_or_else(|| LifecycleError::UnknownPolicy(policy_id.to_owned()))?;
        let legal = matches!(
            (state, verb),
            (PolicyState::Active, Verb::Withdraw)
                | (PolicyState::Withdrawn, Verb::Activate)
                | (PolicyState::Active | PolicyState::Withdrawn, Verb::Delete)
        );
        if !legal {
            return Err(LifecycleError::IllegalTransition {
                policy: policy_id.to_owned(),
                state,
                verb,
            });
        }
        let ci = self
            .context_of_policy(policy_id)
            .ok_or_else(|| LifecycleError::UnknownPolicy(policy_id.to_owned()))?;
        let predicate = match verb {
            Verb::Withdraw => "withdrawPolicyRequest",
            Verb::Activate => "activatePolicyRequest",
            Verb::Delete => "deleteSavedPreferences",
        };
        let patient = self.patient_id.clone();
        self.contexts[ci].facts.assert(Fact::new(predicate, [patient]));
        self.settle(env, ci, fx)?;
        Ok(self
            .policy_state(policy_id)
            .expect("policy cannot vanish without a tombstone"))
    }

    /// Fires `timeout` for every timer due at `now`, in policy ID order.
    pub fn process_timeouts(&mut self, env: &Env, now: NaiveDateTime, fx: &mut Effects) -> Result<(), LifecycleError> {
        let due: Vec<PolicyId> = self
            .timers
            .iter()
            .filter(|(_, at)| **at <= now)
            .map(|(id, _)| id.clone())
            .collect();
        for id in due {
            self.timers.remove(&id);
            let Some(ci) = self.context_of_policy(&id) else {
                continue;
            };
            let p = patient_policy(&self.patient_id);
            self.contexts[ci].facts.assert(Fact::new("timeout", [p]));
            self.settle(env, ci, fx)?;
        }
        Ok(())
    }

    /// Steps the context's TR instance until no new firing occurs.
    fn settle(&mut self, env: &Env, ci: usize, fx: &mut Effects) -> Result<(), LifecycleError> {
        for _ in 0..CASCADE_LIMIT {
            let c = &mut self.contexts[ci];
            let Some(firing) = c.instance.step(&c.facts)? else {
                return Ok(());
            };
            let action = firing
                .plan
                .stages
                .iter()
                .map(|s| s.iter().map(ToString::to_string).collect::<Vec<_>>().join(" par "))
                .collect::<Vec<_>>()
                .join(" then ");
            fx.push(EngineEvent::RuleFired {
                goal: c.goal.clone(),
                requester: c.holder.clone(),
                rule: firing.rule,
                line: firing.line,
                action,
            });
            for inv in firing.plan.invocations() {
                self.dispatch(env, ci, inv, fx)?;
            }
        }
        Err(LifecycleError::CascadeLimit(self.contexts[ci].goal.clone()))
    }

    /// Sends the response for an open request and drops `needsConsent` once
    /// nothing else from that requester is outstanding in the context.
    fn answer(
        &mut self,
        env: &Env,
        ci: usize,
        request_id: &str,
        granted: bool,
        message: Option<String>,
        fx: &mut Effects,
    ) {
        let Some(oi) = self.open.iter().position(|o| o.request.request_id == request_id) else {
            return;
        };
        let done = self.open.remove(oi);
        self.answered.insert(done.request.request_id.clone());
        let requester = done.request.requester_id.clone();
        fx.push(EngineEvent::ConsentSent {
            request_id: done.request.request_id.clone(),
            requester: requester.clone(),
            granted,
            message: message.clone(),
        });
        fx.responses.push(ConsentResponse {
            request_id: done.request.request_id,
            patient_id: self.patient_id.clone(),
            requester_id: requester.clone(),
            granted,
            message,
            issued_at: env.now(),
        });
        let c = &self.contexts[ci];
        let still_open = self
            .open
            .iter()
            .any(|o| o.goal == c.goal && o.holder == c.holder && o.request.requester_id == requester);
        if !still_open {
            let f = Fact::new("needsConsent", [self.patient_id.as_str(), requester.as_str()]);
            self.contexts[ci].facts.retract(&f);
        }
        if self.contexts[ci].consent_ready.as_deref() == Some(request_id) {
            self.contexts[ci].consent_ready = None;
        }
    }
}
