use std::collections::BTreeSet;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::time::Span;

pub type RequestId = String;

/// A consent request sent by a data requester to the patient's device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ConsentRequest {
    pub request_id: RequestId,
    pub requester_id: String,
    pub requester_role: String,
    pub patient_id: String,
    pub resources: BTreeSet<String>,
    /// Requested rights as labels; validated against READ/WRITE and the
    /// template's options when a policy is instantiated.
    pub rights: BTreeSet<String>,
    pub purpose: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub access_duration: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment_duration: Option<Span>,
    /// Key into the information point's treatment durations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referral_id: Option<String>,
    #[serde(default)]
    pub patient_unconscious: bool,
    /// Free-text account of the situation, recorded in break-the-glass
    /// audit entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circumstances: Option<String>,
    /// Stamped on intake when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub received_at: Option<NaiveDateTime>,
}

impl ConsentRequest {
    pub fn new(
        request_id: impl Into<String>,
        requester_id: impl Into<String>,
        requester_role: impl Into<String>,
        patient_id: impl Into<String>,
    ) -> Self {
        Self {
            request_id: request_id.into(),
            requester_id: requester_id.into(),
            requester_role: requester_role.into(),
            patient_id: patient_id.into(),
            resources: BTreeSet::new(),
            rights: BTreeSet::new(),
            purpose: String::new(),
            access_duration: None,
            treatment_duration: None,
            referral_id: None,
            patient_unconscious: false,
            circumstances: None,
            received_at: None,
        }
    }

    pub fn resources<I: IntoIterator<Item = S>, S: Into<String>>(mut self, r: I) -> Self {
        self.resources = r.into_iter().map(Into::into).collect();
        self
    }

    pub fn rights<I: IntoIterator<Item = S>, S: Into<String>>(mut self, r: I) -> Self {
        self.rights = r.into_iter().map(Into::into).collect();
        self
    }

    pub fn purpose(mut self, p: impl Into<String>) -> Self {
        self.purpose = p.into();
        self
    }

    pub fn treatment(mut self, d: Span) -> Self {
        self.treatment_duration = Some(d);
        self
    }

    pub fn unconscious(mut self) -> Self {
        self.patient_unconscious = true;
        self
    }
}
