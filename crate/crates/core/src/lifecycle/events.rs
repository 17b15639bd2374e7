use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::authz::{AuthorizationPolicy, PolicyId};
use crate::request::{ConsentRequest, RequestId};

/// Typed record appended to the engine's event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all_fields = "camelCase")]
pub enum EngineEvent {
    RuleFired {
        goal: String,
        requester: String,
        rule: usize,
        line: u32,
        action: String,
    },
    PolicyInstantiated {
        policy_id: PolicyId,
        template: String,
        policy: AuthorizationPolicy,
    },
    PolicyActivated {
        policy_id: PolicyId,
    },
    PolicyWithdrawn {
        policy_id: PolicyId,
    },
    PolicyDeleted {
        policy_id: PolicyId,
        reason: String,
    },
    DecisionQueued {
        request_id: RequestId,
        request: ConsentRequest,
    },
    ConsentSent {
        request_id: RequestId,
        requester: String,
        granted: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        message: Option<String>,
    },
    BreakTheGlass {
        request_id: RequestId,
        requester: String,
        template: String,
    },
    AuditNote {
        text: String,
    },
}

impl EngineEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            EngineEvent::RuleFired { .. } => "RuleFired",
            EngineEvent::PolicyInstantiated { .. } => "PolicyInstantiated",
            EngineEvent::PolicyActivated { .. } => "PolicyActivated",
            EngineEvent::PolicyWithdrawn { .. } => "PolicyWithdrawn",
            EngineEvent::PolicyDeleted { .. } => "PolicyDeleted",
            EngineEvent::DecisionQueued { .. } => "DecisionQueued",
            EngineEvent::ConsentSent { .. } => "ConsentSent",
            EngineEvent::BreakTheGlass { .. } => "BreakTheGlass",
            EngineEvent::AuditNote { .. } => "AuditNote",
        }
    }
}

/// Answer to a consent request, delivered to the healthcare system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConsentResponse {
    pub request_id: RequestId,
    pub patient_id: String,
    pub requester_id: String,
    pub granted: bool,
    /// Always present when `granted` is false.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub issued_at: NaiveDateTime,
}

/// Mandatory record for every break-the-glass instantiation, kept for
/// post-incident review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AuditRecord {
    pub seq: u64,
    pub at: NaiveDateTime,
    pub patient_id: String,
    pub requester_id: String,
    pub requester_role: String,
    pub request_id: RequestId,
    pub template: String,
    pub resources: Vec<String>,
    pub rights: Vec<String>,
    pub purpose: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circumstances: Option<String>,
    /// Filled in once the policy has been instantiated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_id: Option<PolicyId>,
}

/// Everything one command produced, collected before it is committed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Effects {
    pub events: Vec<EngineEvent>,
    pub responses: Vec<ConsentResponse>,
    pub audit: Vec<AuditRecord>,
}

impl Effects {
    pub fn push(&mut self, e: EngineEvent) {
        self.events.push(e);
    }
}
