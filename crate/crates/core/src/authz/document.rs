//! Canonical JSON document form of authorization policies.
//!
//! ```json
//! {
//!   "id": "gp-clinic:Alice:Bob",
//!   "dataRequesterRole": ["GP"],
//!   "dataRequesterId": [{"is": "Bob"}],
//!   "dataSubjectId": "Alice",
//!   "dataSubjectResource": ["Blood Test"],
//!   "accessRights": ["READ"],
//!   "provided": {"and": [{"attribute": "AccessPurpose", "op": "=", "value": "Diagnosis"}]},
//!   "state": "Active",
//!   "origin": {"template": "gp-clinic", "instantiatedAt": "2026-03-02T10:00:00"}
//! }
//! ```
//!
//! Keys come out sorted, sets sorted and deduplicated, so serializing a
//! parsed document yields its normal form.

use std::collections::BTreeSet;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::{
    AccessRight, Attribute, AuthorizationPolicy, CmpOp, Comparison, IdTerm, Literal, Origin, PolicyState, ProvidedExpr,
};
use crate::time::TimeOfDay;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DocError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("time out of range: {0}")]
    TimeOutOfRange(String),
    #[error("`{0}` must not be empty")]
    EmptySet(&'static str),
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("requester `{0}` is both admitted and excluded")]
    ContradictoryId(String),
    #[error("malformed document: {0}")]
    Malformed(String),
}

fn malformed(msg: impl Into<String>) -> DocError {
    DocError::Malformed(msg.into())
}

const POLICY_FIELDS: [&str; 9] = [
    "id",
    "dataRequesterRole",
    "dataRequesterId",
    "dataSubjectId",
    "dataSubjectResource",
    "accessRights",
    "provided",
    "state",
    "origin",
];

pub(crate) fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str]) -> Result<(), DocError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(DocError::UnknownField(k.clone())),
        None => Ok(()),
    }
}

pub(crate) fn string_field(obj: &Map<String, Value>, key: &'static str) -> Result<String, DocError> {
    match obj.get(key) {
        None => Err(DocError::Missing(key)),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(malformed(format!("`{key}` must be a string, got {other}"))),
    }
}

pub(crate) fn string_set(v: &Value, key: &'static str) -> Result<BTreeSet<String>, DocError> {
    let arr = v
        .as_array()
        .ok_or_else(|| malformed(format!("`{key}` must be an array")))?;
    arr.iter()
        .map(|x| {
            x.as_str()
                .map(str::to_owned)
                .ok_or_else(|| malformed(format!("`{key}` entries must be strings")))
        })
        .collect()
}

pub(crate) fn rights_set(v: &Value, key: &'static str) -> Result<BTreeSet<AccessRight>, DocError> {
    string_set(v, key)?
        .iter()
        .map(|s| s.parse().map_err(malformed))
        .collect()
}

pub(crate) fn id_terms(v: &Value) -> Result<BTreeSet<IdTerm>, DocError> {
    let arr = v
        .as_array()
        .ok_or_else(|| malformed("`dataRequesterId` must be an array"))?;
    arr.iter()
        .map(|t| {
            let obj = t
                .as_object()
                .filter(|o| o.len() == 1)
                .ok_or_else(|| malformed("`dataRequesterId` entries must be {\"is\": label} or {\"isNot\": label}"))?;
            let (k, v) = obj.iter().next().expect("one entry");
            let label = v
                .as_str()
                .ok_or_else(|| malformed("requester id must be a string"))?
                .to_owned();
            match k.as_str() {
                "is" => Ok(IdTerm::Is(label)),
                "isNot" => Ok(IdTerm::IsNot(label)),
                other => Err(malformed(format!("unknown requester id marker `{other}`"))),
            }
        })
        .collect()
}

pub(crate) fn id_terms_value(ids: &BTreeSet<IdTerm>) -> Value {
    Value::Array(
        ids.iter()
            .map(|t| match t {
                IdTerm::Is(l) => json!({ "is": l }),
                IdTerm::IsNot(l) => json!({ "isNot": l }),
            })
            .collect(),
    )
}

pub(crate) fn comparison_from_value(v: &Value) -> Result<Comparison, DocError> {
    let obj = v.as_object().ok_or_else(|| malformed("comparison must be an object"))?;
    reject_unknown(obj, &["attribute", "op", "value"])?;
    let attr_name = string_field(obj, "attribute")?;
    let attribute = Attribute::from_name(&attr_name).ok_or(DocError::UnknownAttribute(attr_name))?;
    let op_sym = string_field(obj, "op")?;
    let op = CmpOp::from_symbol(&op_sym).ok_or_else(|| malformed(format!("unknown operator `{op_sym}`")))?;
    let raw = obj.get("value").ok_or(DocError::Missing("value"))?;
    let value = match attribute {
        Attribute::AccessPurpose | Attribute::RequesterLocation | Attribute::SubjectLocation => Literal::Label(
            raw.as_str()
                .ok_or_else(|| malformed(format!("`{}` compares to a string label", attribute.name())))?
                .to_owned(),
        ),
        Attribute::AccessTime => {
            let s = raw
                .as_str()
                .ok_or_else(|| malformed("AccessTime compares to \"HH:MM\""))?;
            Literal::Time(
                s.parse::<TimeOfDay>()
                    .map_err(|_| DocError::TimeOutOfRange(s.to_owned()))?,
            )
        }
        Attribute::AccessDate => {
            let s = raw
                .as_str()
                .ok_or_else(|| malformed("AccessDate compares to \"YYYY-MM-DD\""))?;
            Literal::Date(s.parse().map_err(|_| malformed(format!("bad date `{s}`")))?)
        }
        Attribute::Emergency => Literal::Bool(match raw {
            Value::Bool(b) => *b,
            Value::String(s) if s == "TRUE" => true,
            Value::String(s) if s == "FALSE" => false,
            _ => return Err(malformed("Emergency compares to TRUE or FALSE")),
        }),
    };
    Comparison::new(attribute, op, value).map_err(|e| malformed(e.to_string()))
}

pub(crate) fn comparison_value(c: &Comparison) -> Value {
    let value = match &c.value {
        Literal::Label(l) => Value::String(l.clone()),
        Literal::Time(t) => Value::String(t.to_string()),
        Literal::Date(d) => Value::String(d.to_string()),
        Literal::Bool(b) => Value::Bool(*b),
    };
    json!({ "attribute": c.attribute.name(), "op": c.op.symbol(), "value": value })
}

pub fn provided_from_value(v: &Value) -> Result<ProvidedExpr, DocError> {
    let obj = v.as_object().ok_or_else(|| malformed("expression must be an object"))?;
    if obj.len() == 1 {
        for (key, ctor) in [("and", ProvidedExpr::And as fn(_) -> _), ("or", ProvidedExpr::Or)] {
            if let Some(children) = obj.get(key) {
                let arr = children
                    .as_array()
                    .ok_or_else(|| malformed(format!("`{key}` takes an array")))?;
                return Ok(ctor(arr.iter().map(provided_from_value).collect::<Result<_, _>>()?));
            }
        }
    }
    comparison_from_value(v).map(ProvidedExpr::Cmp)
}

pub fn provided_value(e: &ProvidedExpr) -> Value {
    match e {
        ProvidedExpr::Cmp(c) => comparison_value(c),
        ProvidedExpr::And(xs) => json!({ "and": xs.iter().map(provided_value).collect::<Vec<_>>() }),
        ProvidedExpr::Or(xs) => json!({ "or": xs.iter().map(provided_value).collect::<Vec<_>>() }),
    }
}

fn state_from_str(s: &str) -> Result<PolicyState, DocError> {
    match s {
        "Active" => Ok(PolicyState::Active),
        "Withdrawn" => Ok(PolicyState::Withdrawn),
        "Deleted" => Ok(PolicyState::Deleted),
        other => Err(malformed(format!("unknown policy state `{other}`"))),
    }
}

impl AuthorizationPolicy {
    pub fn from_document(v: &Value) -> Result<Self, DocError> {
        let obj = v
            .as_object()
            .ok_or_else(|| malformed("policy document must be an object"))?;
        reject_unknown(obj, &POLICY_FIELDS)?;
        let get = |k: &'static str| obj.get(k).ok_or(DocError::Missing(k));
        let requester_ids = match obj.get("dataRequesterId") {
            None | Some(Value::Null) => None,
            Some(v) => Some(id_terms(v)?).filter(|ids| !ids.is_empty()),
        };
        let state = match obj.get("state") {
            None => PolicyState::Active,
            Some(Value::String(s)) => state_from_str(s)?,
            Some(_) => return Err(malformed("`state` must be a string")),
        };
        let origin = match obj.get("origin") {
            None | Some(Value::Null) => None,
            Some(o) => {
                Some(serde_json::from_value::<Origin>(o.clone()).map_err(|e| malformed(format!("origin: {e}")))?)
            }
        };
        let policy = AuthorizationPolicy {
            id: string_field(obj, "id")?,
            requester_roles: string_set(get("dataRequesterRole")?, "dataRequesterRole")?,
            requester_ids,
            subject_id: string_field(obj, "dataSubjectId")?,
            resources: string_set(get("dataSubjectResource")?, "dataSubjectResource")?,
            access_rights: rights_set(get("accessRights")?, "accessRights")?,
            provided: match obj.get("provided") {
                None => ProvidedExpr::always(),
                Some(p) => provided_from_value(p)?,
            },
            state,
            origin,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn to_document(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("id".into(), json!(self.id));
        obj.insert("dataRequesterRole".into(), json!(self.requester_roles));
        if let Some(ids) = &self.requester_ids {
            obj.insert("dataRequesterId".into(), id_terms_value(ids));
        }
        obj.insert("dataSubjectId".into(), json!(self.subject_id));
        obj.insert("dataSubjectResource".into(), json!(self.resources));
        obj.insert("accessRights".into(), json!(self.access_rights));
        obj.insert("provided".into(), provided_value(&self.provided));
        obj.insert("state".into(), json!(self.state.to_string()));
        if let Some(origin) = &self.origin {
            obj.insert(
                "origin".into(),
                serde_json::to_value(origin).expect("origin serializes"),
            );
        }
        Value::Object(obj)
    }
}

impl Serialize for AuthorizationPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_document().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AuthorizationPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Self::from_document(&v).map_err(serde::de::Error::custom)
    }
}

/// Parses a policy document from JSON text.
pub fn parse_authorization_policy(text: &str) -> Result<AuthorizationPolicy, DocError> {
    let v: Value = serde_json::from_str(text).map_err(|e| DocError::Json(e.to_string()))?;
    AuthorizationPolicy::from_document(&v)
}

/// Pretty-printed normal form of a policy document.
pub fn serialize_authorization_policy(p: &AuthorizationPolicy) -> String {
    serde_json::to_string_pretty(&p.to_document()).expect("document serializes")
}
