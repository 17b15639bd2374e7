//! Context sources: world facts, the simulated clock, current locations and
//! the external information point (duty hours, clinic locations, treatment
//! durations).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facts::{Fact, FactStore};
use crate::time::{Span, TimeOfDay};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("no current location known for `{0}`")]
    MissingLocation(String),
    #[error("information point has no record for {0}")]
    NotFound(InfoKey),
    #[error("clock cannot move backwards from {now} to {requested}")]
    ClockRewind {
        now: NaiveDateTime,
        requested: NaiveDateTime,
    },
    #[error("invalid duty hours for `{0}`: start must precede end")]
    DutyHours(String),
    #[error("cannot read information point fixture: {0}")]
    Fixture(String),
}

/// Immutable view of the attributes an authorization policy may test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ContextSnapshot {
    pub access_time: TimeOfDay,
    pub access_date: NaiveDate,
    pub requester_location: String,
    pub subject_location: String,
    #[serde(default)]
    pub emergency: bool,
}

impl ContextSnapshot {
    pub fn at(&self) -> NaiveDateTime {
        self.access_date.and_time(self.access_time.to_naive())
    }
}

/// Simulated wall clock; it only moves forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    now: NaiveDateTime,
}

impl SimClock {
    pub fn new(start: NaiveDateTime) -> Self {
        Self { now: start }
    }

    pub fn now(&self) -> NaiveDateTime {
        self.now
    }

    pub fn advance_to(&mut self, t: NaiveDateTime) -> Result<NaiveDateTime, ContextError> {
        if t < self.now {
            return Err(ContextError::ClockRewind {
                now: self.now,
                requested: t,
            });
        }
        self.now = t;
        Ok(t)
    }

    pub fn advance_by(&mut self, span: Span) -> NaiveDateTime {
        self.now += span.as_duration();
        self.now
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum InfoKey {
    DutyHours(String),
    ClinicLocation(String),
    TreatmentDuration(String),
}

impl fmt::Display for InfoKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InfoKey::DutyHours(id) => write!(f, "dutyHours({id})"),
            InfoKey::ClinicLocation(id) => write!(f, "clinicLocation({id})"),
            InfoKey::TreatmentDuration(id) => write!(f, "treatmentDuration({id})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DutyHours {
    pub start: TimeOfDay,
    pub end: TimeOfDay,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InfoRecord {
    DutyHours(DutyHours),
    Location(String),
    Duration(Span),
}

/// Source of practitioner context. Implementations may be in-process
/// fixtures or clients of an external service.
pub trait InfoProvider: Send + Sync {
    fn lookup(&self, key: &InfoKey) -> Option<InfoRecord>;
}

pub fn lookup_info(ip: &dyn InfoProvider, key: InfoKey) -> Result<InfoRecord, ContextError> {
    ip.lookup(&key).ok_or(ContextError::NotFound(key))
}

pub fn duty_hours(ip: &dyn InfoProvider, practitioner: &str) -> Result<DutyHours, ContextError> {
    match lookup_info(ip, InfoKey::DutyHours(practitioner.to_owned()))? {
        InfoRecord::DutyHours(h) => Ok(h),
        _ => Err(ContextError::NotFound(InfoKey::DutyHours(practitioner.to_owned()))),
    }
}

pub fn clinic_location(ip: &dyn InfoProvider, practitioner: &str) -> Result<String, ContextError> {
    match lookup_info(ip, InfoKey::ClinicLocation(practitioner.to_owned()))? {
        InfoRecord::Location(l) => Ok(l),
        _ => Err(ContextError::NotFound(InfoKey::ClinicLocation(practitioner.to_owned()))),
    }
}

pub fn treatment_duration(ip: &dyn InfoProvider, referral: &str) -> Result<Span, ContextError> {
    match lookup_info(ip, InfoKey::TreatmentDuration(referral.to_owned()))? {
        InfoRecord::Duration(d) => Ok(d),
        _ => Err(ContextError::NotFound(InfoKey::TreatmentDuration(referral.to_owned()))),
    }
}

/// File-backed information point.
///
/// ```json
/// {
///   "dutyHours": {"Bob": {"start": "09:00", "end": "17:00"}},
///   "clinicLocation": {"Bob": "Milan"},
///   "treatmentDuration": {"ref-42": "30d"}
/// }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FixtureInfoPoint {
    #[serde(default)]
    pub duty_hours: BTreeMap<String, DutyHours>,
    #[serde(default)]
    pub clinic_location: BTreeMap<String, String>,
    #[serde(default)]
    pub treatment_duration: BTreeMap<String, Span>,
}

impl FixtureInfoPoint {
    pub fn validate(&self) -> Result<(), ContextError> {
        match self.duty_hours.iter().find(|(_, h)| h.start >= h.end) {
            Some((id, _)) => Err(ContextError::DutyHours(id.clone())),
            None => Ok(()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ContextError> {
        let ip: Self = serde_json::from_str(text).map_err(|e| ContextError::Fixture(e.to_string()))?;
        ip.validate()?;
        Ok(ip)
    }

    pub fn load(path: &Path) -> Result<Self, ContextError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ContextError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

impl InfoProvider for FixtureInfoPoint {
    fn lookup(&self, key: &InfoKey) -> Option<InfoRecord> {
        match key {
            InfoKey::DutyHours(id) => self.duty_hours.get(id).copied().map(InfoRecord::DutyHours),
            InfoKey::ClinicLocation(id) => self.clinic_location.get(id).cloned().map(InfoRecord::Location),
            InfoKey::TreatmentDuration(id) => self.treatment_duration.get(id).copied().map(InfoRecord::Duration),
        }
    }
}

/// Simulated environment: world facts (e.g. `emergency('Alice')`), the
/// clock and each party's current location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextHub {
    pub facts: FactStore,
    pub clock: SimClock,
    pub locations: BTreeMap<String, String>,
}

impl ContextHub {
    pub fn new(start: NaiveDateTime) -> Self {
        Self {
            facts: FactStore::new(),
            clock: SimClock::new(start),
            locations: BTreeMap::new(),
        }
    }

    pub fn now(&self) -> NaiveDateTime {
        self.clock.now()
    }

    pub fn set_location(&mut self, party: impl Into<String>, location: impl Into<String>) {
        self.locations.insert(party.into(), location.into());
    }

    pub fn emergency_fact(subject: &str) -> Fact {
        Fact::new("emergency", [subject])
    }

    pub fn set_emergency(&mut self, subject: &str, active: bool) {
        let f = Self::emergency_fact(subject);
        if active {
            self.facts.assert(f);
        } else {
            self.facts.retract(&f);
        }
    }

    pub fn emergency(&self, subject: &str) -> bool {
        self.facts.contains(&Self::emergency_fact(subject))
    }

    pub fn snapshot(&self, requester: &str, subject: &str) -> Result<ContextSnapshot, ContextError> {
        snapshot(&self.facts, &self.clock, &self.locations, requester, subject)
    }
}

/// Captures the current context for a requester/subject pair.
pub fn snapshot(
    facts: &FactStore,
    clock: &SimClock,
    locations: &BTreeMap<String, String>,
    requester: &str,
    subject: &str,
) -> Result<ContextSnapshot, ContextError> {
    let loc = |party: &str| {
        locations
            .get(party)
            .cloned()
            .ok_or_else(|| ContextError::MissingLocation(party.to_owned()))
    };
    let now = clock.now();
    Ok(ContextSnapshot {
        access_time: TimeOfDay::of(now.time()),
        access_date: now.date(),
        requester_location: loc(requester)?,
        subject_location: loc(subject)?,
        emergency: facts.contains(&ContextHub::emergency_fact(subject)),
    })
}
