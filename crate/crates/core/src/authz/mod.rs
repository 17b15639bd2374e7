//! Authorization policies and the policy decision point.
//!
//! A policy has a *target* (requester roles, subject, resources, rights)
//! that decides whether it applies at all, an optional requester-ID filter,
//! and a `provided` condition over context attributes. Target mismatch
//! yields [`Outcome::NotApplicable`]; a failed ID filter or condition yields
//! [`Outcome::Deny`].

pub mod document;

use std::collections::BTreeSet;
use std::fmt;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextSnapshot;
use crate::time::TimeOfDay;

pub use document::{parse_authorization_policy, serialize_authorization_policy, DocError};

pub type PolicyId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AccessRight {
    Read,
    Write,
}

impl AccessRight {
    pub fn as_str(self) -> &'static str {
        match self {
            AccessRight::Read => "READ",
            AccessRight::Write => "WRITE",
        }
    }
}

impl fmt::Display for AccessRight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AccessRight {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "READ" => Ok(AccessRight::Read),
            "WRITE" => Ok(AccessRight::Write),
            other => Err(format!("unknown access right `{other}`")),
        }
    }
}

/// Entry of the requester-ID filter: `is 'Bob'` or `isNot 'Eve'`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum IdTerm {
    Is(String),
    IsNot(String),
}

impl IdTerm {
    pub fn label(&self) -> &str {
        match self {
            IdTerm::Is(l) | IdTerm::IsNot(l) => l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolicyState {
    Active,
    Withdrawn,
    Deleted,
}

impl fmt::Display for PolicyState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyState::Active => "Active",
            PolicyState::Withdrawn => "Withdrawn",
            PolicyState::Deleted => "Deleted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Origin {
    pub template: String,
    pub instantiated_at: NaiveDateTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribute {
    AccessPurpose,
    AccessTime,
    AccessDate,
    RequesterLocation,
    SubjectLocation,
    Emergency,
}

impl Attribute {
    pub const ALL: [Attribute; 6] = [
        Attribute::AccessPurpose,
        Attribute::AccessTime,
        Attribute::AccessDate,
        Attribute::RequesterLocation,
        Attribute::SubjectLocation,
        Attribute::Emergency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::AccessPurpose => "AccessPurpose",
            Attribute::AccessTime => "AccessTime",
            Attribute::AccessDate => "AccessDate",
            Attribute::RequesterLocation => "DataRequester.CurrentLocation",
            Attribute::SubjectLocation => "DataSubject.CurrentLocation",
            Attribute::Emergency => "Emergency",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    fn ordered(self) -> bool {
        matches!(self, Attribute::AccessTime | Attribute::AccessDate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Ge,
    Le,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "=" => CmpOp::Eq,
            "!=" | "≠" => CmpOp::Ne,
            ">=" | "≥" => CmpOp::Ge,
            "<=" | "≤" => CmpOp::Le,
            _ => return None,
        })
    }

    fn apply<T: Ord>(self, lhs: &T, rhs: &T) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Le => lhs <= rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Literal {
    Label(String),
    Time(TimeOfDay),
    Date(NaiveDate),
    Bool(bool),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Label(l) => write!(f, "'{l}'"),
            Literal::Time(t) => write!(f, "{t}"),
            Literal::Date(d) => write!(f, "{d}"),
            Literal::Bool(true) => f.write_str("TRUE"),
            Literal::Bool(false) => f.write_str("FALSE"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthzError {
    #[error("policy `{0}` is {1}, only Active policies can be evaluated")]
    NotActive(PolicyId, PolicyState),
    #[error("malformed comparison `{0}`: {1}")]
    TypeMismatch(String, String),
}

/// `attribute op literal`, e.g. `AccessTime >= 09:00`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Comparison {
    pub attribute: Attribute,
    pub op: CmpOp,
    pub value: Literal,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.attribute.name(), self.op.symbol(), self.value)
    }
}

impl Comparison {
    pub fn new(attribute: Attribute, op: CmpOp, value: Literal) -> Result<Self, AuthzError> {
        let c = Self { attribute, op, value };
        c.check()?;
        Ok(c)
    }

    pub fn eq_label(attribute: Attribute, label: impl Into<String>) -> Self {
        Self::new(attribute, CmpOp::Eq, Literal::Label(label.into())).expect("label attribute")
    }

    /// Checks that the literal type fits the attribute and that ordering
    /// operators are used only on time and date.
    pub fn check(&self) -> Result<(), AuthzError> {
        let type_ok = matches!(
            (self.attribute, &self.value),
            (
                Attribute::AccessPurpose | Attribute::RequesterLocation | Attribute::SubjectLocation,
                Literal::Label(_)
            ) | (Attribute::AccessTime, Literal::Time(_))
                | (Attribute::AccessDate, Literal::Date(_))
                | (Attribute::Emergency, Literal::Bool(_))
        );
        if !type_ok {
            return Err(AuthzError::TypeMismatch(
                self.to_string(),
                "literal type does not fit attribute".into(),
            ));
        }
        if matches!(self.op, CmpOp::Ge | CmpOp::Le) && !self.attribute.ordered() {
            return Err(AuthzError::TypeMismatch(
                self.to_string(),
                format!("`{}` only supports = and !=", self.attribute.name()),
            ));
        }
        Ok(())
    }

    pub fn holds(&self, request: &AccessRequest, ctx: &ContextSnapshot) -> Result<bool, AuthzError> {
        self.check()?;
        let op = self.op;
        Ok(match (&self.value, self.attribute) {
            (Literal::Label(l), Attribute::AccessPurpose) => op.apply(&request.purpose, l),
            (Literal::Label(l), Attribute::RequesterLocation) => op.apply(&ctx.requester_location, l),
            (Literal::Label(l), Attribute::SubjectLocation) => op.apply(&ctx.subject_location, l),
            (Literal::Time(t), _) => op.apply(&ctx.access_time, t),
            (Literal::Date(d), _) => op.apply(&ctx.access_date, d),
            (Literal::Bool(b), _) => op.apply(&ctx.emergency, b),
            _ => unreachable!("checked above"),
        })
    }
}

/// The `provided` condition: comparisons combined with n-ary and/or.
/// An empty `And` is true.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ProvidedExpr {
    Cmp(Comparison),
    And(Vec<ProvidedExpr>),
    Or(Vec<ProvidedExpr>),
}

impl ProvidedExpr {
    pub fn always() -> Self {
        ProvidedExpr::And(Vec::new())
    }

    pub fn comparisons(&self) -> Vec<&Comparison> {
        let mut out = Vec::new();
        self.walk(&mut |c| out.push(c));
        out
    }

    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Comparison)) {
        match self {
            ProvidedExpr::Cmp(c) => f(c),
            ProvidedExpr::And(xs) | ProvidedExpr::Or(xs) => xs.iter().for_each(|x| x.walk(f)),
        }
    }

    /// Evaluates the condition and returns the clause trace: for a true
    /// result, the leaves of the satisfied branch; for a false result, every
    /// leaf that was evaluated.
    pub fn evaluate(
        &self,
        request: &AccessRequest,
        ctx: &ContextSnapshot,
    ) -> Result<(bool, Vec<ClauseResult>), AuthzError> {
        match self {
            ProvidedExpr::Cmp(c) => {
                let held = c.holds(request, ctx)?;
                Ok((
                    held,
                    vec![ClauseResult {
                        clause: c.to_string(),
                        held,
                    }],
                ))
            }
            ProvidedExpr::And(xs) => {
                let mut all = true;
                let mut trace = Vec::new();
                for x in xs {
                    let (held, t) = x.evaluate(request, ctx)?;
                    all &= held;
                    trace.extend(t);
                }
                Ok((all, trace))
            }
            ProvidedExpr::Or(xs) => {
                let mut trace = Vec::new();
                for x in xs {
                    let (held, t) = x.evaluate(request, ctx)?;
                    if held {
                        return Ok((true, t));
                    }
                    trace.extend(t);
                }
                Ok((false, trace))
            }
        }
    }
}

impl fmt::Display for ProvidedExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, xs: &[ProvidedExpr], sep: &str| -> fmt::Result {
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    f.write_str(sep)?;
                }
                match x {
                    ProvidedExpr::Cmp(_) => write!(f, "{x}")?,
                    _ => write!(f, "({x})")?,
                }
            }
            Ok(())
        };
        match self {
            ProvidedExpr::Cmp(c) => write!(f, "{c}"),
            ProvidedExpr::And(xs) if xs.is_empty() => f.write_str("TRUE"),
            ProvidedExpr::And(xs) => join(f, xs, " and "),
            ProvidedExpr::Or(xs) if xs.is_empty() => f.write_str("FALSE"),
            ProvidedExpr::Or(xs) => join(f, xs, " or "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorizationPolicy {
    pub id: PolicyId,
    pub requester_roles: BTreeSet<String>,
    /// `None` constrains by role only.
    pub requester_ids: Option<BTreeSet<IdTerm>>,
    pub subject_id: String,
    pub resources: BTreeSet<String>,
    pub access_rights: BTreeSet<AccessRight>,
    pub provided: ProvidedExpr,
    pub state: PolicyState,
    pub origin: Option<Origin>,
}

impl AuthorizationPolicy {
    /// Structural invariants: non-empty target sets and no label that is
    /// both admitted and excluded.
    pub fn validate(&self) -> Result<(), DocError> {
        if self.requester_roles.is_empty() {
            return Err(DocError::EmptySet("dataRequesterRole"));
        }
        if self.resources.is_empty() {
            return Err(DocError::EmptySet("dataSubjectResource"));
        }
        if self.access_rights.is_empty() {
            return Err(DocError::EmptySet("accessRights"));
        }
        if let Some(ids) = &self.requester_ids {
            for t in ids {
                if let IdTerm::Is(l) = t {
                    if ids.contains(&IdTerm::IsNot(l.clone())) {
                        return Err(DocError::ContradictoryId(l.clone()));
                    }
                }
            }
        }
        for c in self.provided.comparisons() {
            c.check().map_err(|e| DocError::Malformed(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AccessRequest {
    pub requester_id: String,
    pub requester_role: String,
    pub subject_id: String,
    pub resource: String,
    pub right: AccessRight,
    pub purpose: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Permit,
    Deny,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClauseResult {
    pub clause: String,
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Reason {
    RoleOutOfScope { role: String },
    SubjectMismatch { subject: String },
    ResourceOutOfScope { resource: String },
    RightNotGranted { right: AccessRight },
    RequesterExcluded { requester: String },
    RequesterNotListed { requester: String },
    Condition { held: bool, clauses: Vec<ClauseResult> },
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reason::RoleOutOfScope { role } => write!(f, "role '{role}' is not covered by the policy"),
            Reason::SubjectMismatch { subject } => write!(f, "data subject '{subject}' is not covered by the policy"),
            Reason::ResourceOutOfScope { resource } => write!(f, "resource '{resource}' is not covered by the policy"),
            Reason::RightNotGranted { right } => write!(f, "access right {right} is not granted by the policy"),
            Reason::RequesterExcluded { requester } => write!(f, "requester '{requester}' is explicitly excluded"),
            Reason::RequesterNotListed { requester } => write!(f, "requester '{requester}' is not listed"),
            Reason::Condition { held, clauses } => {
                let shown: Vec<&str> = clauses
                    .iter()
                    .filter(|c| c.held == *held)
                    .map(|c| c.clause.as_str())
                    .collect();
                if *held {
                    write!(f, "condition satisfied: {}", shown.join(", "))
                } else {
                    write!(f, "condition failed: {}", shown.join(", "))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub reasons: Vec<Reason>,
}

impl Decision {
    pub fn is_permit(&self) -> bool {
        self.outcome == Outcome::Permit
    }

    /// One-line human explanation, used as the error text of refused
    /// consent responses.
    pub fn explain(&self) -> String {
        let parts: Vec<String> = self.reasons.iter().map(ToString::to_string).collect();
        format!("{:?}: {}", self.outcome, parts.join("; "))
    }
}

/// Decides a single request against a single Active policy.
pub fn evaluate_access(
    policy: &AuthorizationPolicy,
    request: &AccessRequest,
    ctx: &ContextSnapshot,
) -> Result<Decision, AuthzError> {
    if policy.state != PolicyState::Active {
        return Err(AuthzError::NotActive(policy.id.clone(), policy.state));
    }
    let not_applicable = |reason| Decision {
        outcome: Outcome::NotApplicable,
        reasons: vec![reason],
    };
    if !policy.requester_roles.contains(&request.requester_role) {
        return Ok(not_applicable(Reason::RoleOutOfScope {
            role: request.requester_role.clone(),
        }));
    }
    if policy.subject_id != request.subject_id {
        return Ok(not_applicable(Reason::SubjectMismatch {
            subject: request.subject_id.clone(),
        }));
    }
    if !policy.resources.contains(&request.resource) {
        return Ok(not_applicable(Reason::ResourceOutOfScope {
            resource: request.resource.clone(),
        }));
    }
    if !policy.access_rights.contains(&request.right) {
        return Ok(not_applicable(Reason::RightNotGranted { right: request.right }));
    }

    let deny = |reason| Decision {
        outcome: Outcome::Deny,
        reasons: vec![reason],
    };
    if let Some(ids) = &policy.requester_ids {
        let requester = &request.requester_id;
        if ids.contains(&IdTerm::IsNot(requester.clone())) {
            return Ok(deny(Reason::RequesterExcluded {
                requester: requester.clone(),
            }));
        }
        let has_positive = ids.iter().any(|t| matches!(t, IdTerm::Is(_)));
        if has_positive && !ids.contains(&IdTerm::Is(requester.clone())) {
            return Ok(deny(Reason::RequesterNotListed {
                requester: requester.clone(),
            }));
        }
    }

    let (held, clauses) = policy.provided.evaluate(request, ctx)?;
    Ok(Decision {
        outcome: if held { Outcome::Permit } else { Outcome::Deny },
        reasons: vec![Reason::Condition { held, clauses }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmp(a: Attribute, op: CmpOp, v: Literal) -> ProvidedExpr {
        ProvidedExpr::Cmp(Comparison::new(a, op, v).unwrap())
    }

    /// The example policy: Bob (Doctor) may read Alice's blood test for
    /// diagnosis or treatment after 9:00.
    fn doctor_policy() -> AuthorizationPolicy {
        AuthorizationPolicy {
            id: "fig2".into(),
            requester_roles: ["Doctor".to_string()].into(),
            requester_ids: Some([IdTerm::Is("Bob".into())].into()),
            subject_id: "Alice".into(),
            resources: ["Blood Test".to_string()].into(),
            access_rights: [AccessRight::Read].into(),
            provided: ProvidedExpr::And(vec![
                ProvidedExpr::Or(vec![
                    cmp(Attribute::AccessPurpose, CmpOp::Eq, Literal::Label("Diagnosis".into())),
                    cmp(Attribute::AccessPurpose, CmpOp::Eq, Literal::Label("Treatment".into())),
                ]),
                cmp(Attribute::AccessTime, CmpOp::Ge, Literal::Time(TimeOfDay::hm(9, 0))),
            ]),
            state: PolicyState::Active,
            origin: None,
        }
    }

    fn request(requester: &str, resource: &str) -> AccessRequest {
        AccessRequest {
            requester_id: requester.into(),
            requester_role: "Doctor".into(),
            subject_id: "Alice".into(),
            resource: resource.into(),
            right: AccessRight::Read,
            purpose: "Diagnosis".into(),
        }
    }

    fn ctx(h: u16, m: u16) -> ContextSnapshot {
        ContextSnapshot {
            access_time: TimeOfDay::hm(h, m),
            access_date: NaiveDate::from_ymd_opt(2026, 3, 2).unwrap(),
            requester_location: "Milan".into(),
            subject_location: "Milan".into(),
            emergency: false,
        }
    }

    #[test]
    fn bob_reads_blood_test() {
        let d = evaluate_access(&doctor_policy(), &request("Bob", "Blood Test"), &ctx(10, 0)).unwrap();
        assert_eq!(d.outcome, Outcome::Permit);
    }

    #[test]
    fn eve_is_excluded() {
        let mut p = doctor_policy();
        p.requester_ids = Some([IdTerm::IsNot("Eve".into())].into());
        let d = evaluate_access(&p, &request("Eve", "Blood Test"), &ctx(10, 0)).unwrap();
        assert_eq!(d.outcome, Outcome::Deny);
        assert_eq!(
            d.reasons,
            vec![Reason::RequesterExcluded {
                requester: "Eve".into()
            }]
        );
        // Only a negative filter: any other doctor passes it.
        let d = evaluate_access(&p, &request("Carol", "Blood Test"), &ctx(10, 0)).unwrap();
        assert_eq!(d.outcome, Outcome::Permit);
    }

    #[test]
    fn unlisted_requester_denied_when_positive_ids_present() {
        let d = evaluate_access(&doctor_policy(), &request("Carol", "Blood Test"), &ctx(10, 0)).unwrap();
        assert_eq!(d.outcome, Outcome::Deny);
    }

    #[test]
    fn xray_not_applicable() {
        let d = evaluate_access(&doctor_policy(), &request("Bob", "X-Ray"), &ctx(10, 0)).unwrap();
        assert_eq!(d.outcome, Outcome::NotApplicable);
    }

    #[test]
    fn before_nine_denied_with_failed_clause() {
        let d = evaluate_access(&doctor_policy(), &request("Bob", "Blood Test"), &ctx(8, 59)).unwrap();
        assert_eq!(d.outcome, Outcome::Deny);
        assert!(d.explain().contains("AccessTime >= 09:00"), "{}", d.explain());
    }

    #[test]
    fn time_interval_is_closed() {
        let d = evaluate_access(&doctor_policy(), &request("Bob", "Blood Test"), &ctx(9, 0)).unwrap();
        assert_eq!(d.outcome, Outcome::Permit);
    }

    #[test]
    fn non_active_policy_is_error() {
        let mut p = doctor_policy();
        p.state = PolicyState::Withdrawn;
        assert!(matches!(
            evaluate_access(&p, &request("Bob", "Blood Test"), &ctx(10, 0)),
            Err(AuthzError::NotActive(..))
        ));
    }

    #[test]
    fn type_mismatch_is_error() {
        let mut p = doctor_policy();
        p.provided = ProvidedExpr::Cmp(Comparison {
            attribute: Attribute::AccessTime,
            op: CmpOp::Eq,
            value: Literal::Label("noon".into()),
        });
        assert!(matches!(
            evaluate_access(&p, &request("Bob", "Blood Test"), &ctx(10, 0)),
            Err(AuthzError::TypeMismatch(..))
        ));
        assert!(Comparison::new(Attribute::AccessPurpose, CmpOp::Ge, Literal::Label("x".into())).is_err());
    }

    #[test]
    fn permit_trace_lists_satisfied_branch() {
        let d = evaluate_access(&doctor_policy(), &request("Bob", "Blood Test"), &ctx(10, 0)).unwrap();
        let Reason::Condition { held: true, clauses } = &d.reasons[0] else {
            panic!("{d:?}")
        };
        assert_eq!(clauses.len(), 2);
        assert!(clauses.iter().all(|c| c.held));
        assert_eq!(clauses[0].clause, "AccessPurpose = 'Diagnosis'");
    }
}
