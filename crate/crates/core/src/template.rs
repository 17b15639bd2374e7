//! Policy templates: matching a consent request to the most specific
//! template and instantiating a concrete authorization policy from it.

use std::collections::BTreeSet;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::authz::document::{
    comparison_from_value, comparison_value, id_terms, id_terms_value, reject_unknown, string_field, string_set,
    DocError,
};
use crate::authz::{
    AccessRight, Attribute, AuthorizationPolicy, CmpOp, Comparison, IdTerm, Literal, Origin, PolicyState, ProvidedExpr,
};
use crate::context::{clinic_location, duty_hours, ContextError, ContextSnapshot, InfoProvider};
use crate::request::ConsentRequest;

/// A template field that is either left blank (filled from the request) or
/// restricted to a list of options.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Field<T: Ord> {
    Blank,
    Options(BTreeSet<T>),
}

impl<T: Ord> Field<T> {
    fn constrained(&self) -> bool {
        matches!(self, Field::Options(_))
    }

    fn admits(&self, v: &T) -> bool {
        match self {
            Field::Blank => true,
            Field::Options(opts) => opts.contains(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdField {
    Blank,
    Fixed(BTreeSet<IdTerm>),
}

impl IdField {
    fn admits(&self, requester: &str) -> bool {
        match self {
            IdField::Blank => true,
            IdField::Fixed(ids) => {
                !ids.contains(&IdTerm::IsNot(requester.to_owned()))
                    && (!ids.iter().any(|t| matches!(t, IdTerm::Is(_)))
                        || ids.contains(&IdTerm::Is(requester.to_owned())))
            }
        }
    }
}

/// Placeholder condition made concrete at instantiation time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbstractCondition {
    /// Binds `AccessPurpose` to the request's purpose, which must be listed.
    PurposeIn(BTreeSet<String>),
    /// `AccessTime` within the requester's duty hours.
    WithinDutyHours,
    /// Both parties located at the requester's clinic.
    CoLocatedAtRequesterClinic,
    /// `Emergency = TRUE`, both parties pinned to the patient's location.
    EmergencyActive,
    Custom(Comparison),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTemplate {
    pub id: String,
    /// Name of the TR policy managing policies made from this template.
    pub goal_tag: String,
    pub break_the_glass: bool,
    pub requester_roles: BTreeSet<String>,
    pub requester_id_field: IdField,
    pub resources_field: Field<String>,
    pub access_rights_field: Field<AccessRight>,
    pub abstract_conditions: Vec<AbstractCondition>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TemplateConfig {
    /// Instantiate emergency policies for the whole requester role rather
    /// than for the individual team member.
    #[serde(default)]
    pub role_level_emergency: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("templates {ids:?} are equally specific (score {score})")]
    Ambiguous { ids: Vec<String>, score: u32 },
    #[error("role `{0}` is not covered by template `{1}`")]
    RoleNotCovered(String, String),
    #[error("requester `{0}` is not admitted by template `{1}`")]
    RequesterNotAdmitted(String, String),
    #[error("{field} value `{value}` is outside the template's options")]
    OutsideOptions { field: &'static str, value: String },
    #[error("purpose `{0}` is not allowed by the template")]
    PurposeNotAllowed(String),
    #[error("consent request lists no {0}")]
    EmptyRequest(&'static str),
    #[error(transparent)]
    Info(#[from] ContextError),
    #[error(transparent)]
    Document(#[from] DocError),
    #[error("template `{0}`: option list must not be empty")]
    EmptyOptions(String),
}

impl PolicyTemplate {
    /// +2 per constrained field, +1 per abstract condition.
    pub fn specificity(&self) -> u32 {
        let mut score = 2; // requester roles are always constrained
        if matches!(self.requester_id_field, IdField::Fixed(_)) {
            score += 2;
        }
        if self.resources_field.constrained() {
            score += 2;
        }
        if self.access_rights_field.constrained() {
            score += 2;
        }
        score + self.abstract_conditions.len() as u32
    }

    pub fn requires_emergency(&self) -> bool {
        self.abstract_conditions.contains(&AbstractCondition::EmergencyActive)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let empty = self.requester_roles.is_empty()
            || matches!(&self.resources_field, Field::Options(o) if o.is_empty())
            || matches!(&self.access_rights_field, Field::Options(o) if o.is_empty())
            || self
                .abstract_conditions
                .iter()
                .any(|c| matches!(c, AbstractCondition::PurposeIn(p) if p.is_empty()));
        if empty {
            return Err(TemplateError::EmptyOptions(self.id.clone()));
        }
        Ok(())
    }

    fn covers(&self, req: &ConsentRequest, ctx: &ContextSnapshot) -> bool {
        self.requester_roles.contains(&req.requester_role)
            && self.requester_id_field.admits(&req.requester_id)
            && req.resources.iter().all(|r| self.resources_field.admits(r))
            && req.rights.iter().all(|r| match r.parse::<AccessRight>() {
                Ok(right) => self.access_rights_field.admits(&right),
                Err(_) => false,
            })
            && (!self.requires_emergency() || ctx.emergency)
    }
}

/// Templates applicable to `req` in `ctx`, most specific first.
///
/// Break-the-glass templates are considered only for requests flagged
/// `patientUnconscious`, and for such requests they take precedence over
/// ordinary templates. Equal top specificity is reported as an error.
pub fn match_templates<'a>(
    req: &ConsentRequest,
    ctx: &ContextSnapshot,
    lib: &'a [PolicyTemplate],
) -> Result<Vec<&'a PolicyTemplate>, TemplateError> {
    let covering: Vec<&PolicyTemplate> = lib.iter().filter(|t| t.covers(req, ctx)).collect();
    let use_btg = req.patient_unconscious && covering.iter().any(|t| t.break_the_glass);
    let mut out: Vec<&PolicyTemplate> = covering.into_iter().filter(|t| t.break_the_glass == use_btg).collect();
    out.sort_by(|a, b| b.specificity().cmp(&a.specificity()).then_with(|| a.id.cmp(&b.id)));
    if let [first, second, ..] = out.as_slice() {
        if first.specificity() == second.specificity() {
            let score = first.specificity();
            return Err(TemplateError::Ambiguous {
                ids: out
                    .iter()
                    .filter(|t| t.specificity() == score)
                    .map(|t| t.id.clone())
                    .collect(),
                score,
            });
        }
    }
    Ok(out)
}

fn requested_rights(t: &PolicyTemplate, req: &ConsentRequest) -> Result<BTreeSet<AccessRight>, TemplateError> {
    req.rights
        .iter()
        .map(|r| {
            let outside = || TemplateError::OutsideOptions {
                field: "accessRights",
                value: r.clone(),
            };
            let right: AccessRight = r.parse().map_err(|_| outside())?;
            if t.access_rights_field.admits(&right) {
                Ok(right)
            } else {
                Err(outside())
            }
        })
        .collect()
}

/// Fills the template's blanks from the request and concretizes its
/// abstract conditions. Location pins are placed after the other clauses,
/// subject first.
pub fn instantiate_policy(
    t: &PolicyTemplate,
    req: &ConsentRequest,
    ctx: &ContextSnapshot,
    info: &dyn InfoProvider,
    config: TemplateConfig,
) -> Result<AuthorizationPolicy, TemplateError> {
    if !t.requester_roles.contains(&req.requester_role) {
        return Err(TemplateError::RoleNotCovered(req.requester_role.clone(), t.id.clone()));
    }
    if !t.requester_id_field.admits(&req.requester_id) {
        return Err(TemplateError::RequesterNotAdmitted(
            req.requester_id.clone(),
            t.id.clone(),
        ));
    }
    if req.resources.is_empty() {
        return Err(TemplateError::EmptyRequest("resources"));
    }
    if req.rights.is_empty() {
        return Err(TemplateError::EmptyRequest("rights"));
    }
    if let Some(r) = req.resources.iter().find(|r| !t.resources_field.admits(r)) {
        return Err(TemplateError::OutsideOptions {
            field: "dataSubjectResource",
            value: r.clone(),
        });
    }
    let access_rights = requested_rights(t, req)?;

    let mut head: Vec<ProvidedExpr> = Vec::new();
    let mut pins: Vec<ProvidedExpr> = Vec::new();
    let pin = |pins: &mut Vec<ProvidedExpr>, loc: &str| {
        for attr in [Attribute::SubjectLocation, Attribute::RequesterLocation] {
            let c = ProvidedExpr::Cmp(Comparison::eq_label(attr, loc));
            if !pins.contains(&c) {
                pins.push(c);
            }
        }
    };
    for cond in &t.abstract_conditions {
        match cond {
            AbstractCondition::PurposeIn(allowed) => {
                if !allowed.contains(&req.purpose) {
                    return Err(TemplateError::PurposeNotAllowed(req.purpose.clone()));
                }
                head.push(ProvidedExpr::Cmp(Comparison::eq_label(
                    Attribute::AccessPurpose,
                    &req.purpose,
                )));
            }
            AbstractCondition::WithinDutyHours => {
                let hours = duty_hours(info, &req.requester_id)?;
                head.push(ProvidedExpr::And(vec![
                    ProvidedExpr::Cmp(Comparison {
                        attribute: Attribute::AccessTime,
                        op: CmpOp::Ge,
                        value: Literal::Time(hours.start),
                    }),
                    ProvidedExpr::Cmp(Comparison {
                        attribute: Attribute::AccessTime,
                        op: CmpOp::Le,
                        value: Literal::Time(hours.end),
                    }),
                ]));
            }
            AbstractCondition::CoLocatedAtRequesterClinic => {
                let clinic = clinic_location(info, &req.requester_id)?;
                pin(&mut pins, &clinic);
            }
            AbstractCondition::EmergencyActive => {
                head.push(ProvidedExpr::Cmp(Comparison {
                    attribute: Attribute::Emergency,
                    op: CmpOp::Eq,
                    value: Literal::Bool(true),
                }));
                pin(&mut pins, &ctx.subject_location);
            }
            AbstractCondition::Custom(c) => head.push(ProvidedExpr::Cmp(c.clone())),
        }
    }
    head.extend(pins);
    let provided = match head.len() {
        1 => head.pop().expect("one clause"),
        _ => ProvidedExpr::And(head),
    };

    let role_level = config.role_level_emergency && t.requires_emergency();
    let requester_ids = match (&t.requester_id_field, role_level) {
        (_, true) => None,
        (IdField::Fixed(ids), false) => Some(ids.clone()),
        (IdField::Blank, false) => Some([IdTerm::Is(req.requester_id.clone())].into()),
    };
    let holder = if role_level {
        &req.requester_role
    } else {
        &req.requester_id
    };

    let policy = AuthorizationPolicy {
        id: format!("{}:{}:{}", t.id, req.patient_id, holder),
        requester_roles: t.requester_roles.clone(),
        requester_ids,
        subject_id: req.patient_id.clone(),
        resources: req.resources.clone(),
        access_rights,
        provided,
        state: PolicyState::Active,
        origin: Some(Origin {
            template: t.id.clone(),
            instantiated_at: ctx.at(),
        }),
    };
    policy.validate()?;
    Ok(policy)
}

// ---- document form ----

const TEMPLATE_FIELDS: [&str; 9] = [
    "id",
    "goalTag",
    "breakTheGlass",
    "dataRequesterRole",
    "dataRequesterId",
    "dataSubjectId",
    "dataSubjectResource",
    "accessRights",
    "provided",
];

fn is_blank(v: Option<&Value>) -> bool {
    matches!(v, None | Some(Value::Null)) || v.and_then(Value::as_str) == Some("blank")
}

fn options(v: &Value, key: &'static str) -> Result<BTreeSet<String>, DocError> {
    let obj = v
        .as_object()
        .filter(|o| o.len() == 1 && o.contains_key("options"))
        .ok_or_else(|| DocError::Malformed(format!("`{key}` must be \"blank\" or {{\"options\": [...]}}")))?;
    string_set(&obj["options"], key)
}

fn condition_from_value(v: &Value) -> Result<AbstractCondition, DocError> {
    if let Some(name) = v.as_str() {
        return match name {
            "withinDutyHours" => Ok(AbstractCondition::WithinDutyHours),
            "coLocatedAtRequesterClinic" => Ok(AbstractCondition::CoLocatedAtRequesterClinic),
            "emergencyActive" => Ok(AbstractCondition::EmergencyActive),
            other => Err(DocError::Malformed(format!("unknown abstract condition `{other}`"))),
        };
    }
    let obj = v
        .as_object()
        .filter(|o| o.len() == 1)
        .ok_or_else(|| DocError::Malformed("abstract condition must be a name or a one-key object".into()))?;
    let (k, inner) = obj.iter().next().expect("one key");
    match k.as_str() {
        "purposeIn" => Ok(AbstractCondition::PurposeIn(string_set(inner, "purposeIn")?)),
        "comparison" => Ok(AbstractCondition::Custom(comparison_from_value(inner)?)),
        other => Err(DocError::Malformed(format!("unknown abstract condition `{other}`"))),
    }
}

fn condition_value(c: &AbstractCondition) -> Value {
    match c {
        AbstractCondition::PurposeIn(p) => json!({ "purposeIn": p }),
        AbstractCondition::WithinDutyHours => json!("withinDutyHours"),
        AbstractCondition::CoLocatedAtRequesterClinic => json!("coLocatedAtRequesterClinic"),
        AbstractCondition::EmergencyActive => json!("emergencyActive"),
        AbstractCondition::Custom(cmp) => json!({ "comparison": comparison_value(cmp) }),
    }
}

impl PolicyTemplate {
    pub fn from_document(v: &Value) -> Result<Self, TemplateError> {
        let obj = v
            .as_object()
            .ok_or_else(|| DocError::Malformed("template document must be an object".into()))?;
        reject_unknown(obj, &TEMPLATE_FIELDS)?;
        if !is_blank(obj.get("dataSubjectId")) {
            return Err(DocError::Malformed("`dataSubjectId` of a template is always blank".into()).into());
        }
        let requester_id_field = match obj.get("dataRequesterId") {
            v if is_blank(v) => IdField::Blank,
            Some(v) => IdField::Fixed(id_terms(v)?),
            None => unreachable!(),
        };
        let resources_field = match obj.get("dataSubjectResource") {
            v if is_blank(v) => Field::Blank,
            Some(v) => Field::Options(options(v, "dataSubjectResource")?),
            None => unreachable!(),
        };
        let access_rights_field = match obj.get("accessRights") {
            v if is_blank(v) => Field::Blank,
            Some(v) => Field::Options(
                options(v, "accessRights")?
                    .iter()
                    .map(|s| s.parse().map_err(DocError::Malformed))
                    .collect::<Result<_, _>>()?,
            ),
            None => unreachable!(),
        };
        let abstract_conditions = match obj.get("provided") {
            None => Vec::new(),
            Some(Value::Array(items)) => items.iter().map(condition_from_value).collect::<Result<_, _>>()?,
            Some(_) => return Err(DocError::Malformed("template `provided` must be an array".into()).into()),
        };
        let break_the_glass = match obj.get("breakTheGlass") {
            None => false,
            Some(Value::Bool(b)) => *b,
            Some(_) => return Err(DocError::Malformed("`breakTheGlass` must be a boolean".into()).into()),
        };
        let t = PolicyTemplate {
            id: string_field(obj, "id")?,
            goal_tag: string_field(obj, "goalTag")?,
            break_the_glass,
            requester_roles: string_set(
                obj.get("dataRequesterRole")
                    .ok_or(DocError::Missing("dataRequesterRole"))?,
                "dataRequesterRole",
            )?,
            requester_id_field,
            resources_field,
            access_rights_field,
            abstract_conditions,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn to_document(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("id".into(), json!(self.id));
        obj.insert("goalTag".into(), json!(self.goal_tag));
        obj.insert("breakTheGlass".into(), json!(self.break_the_glass));
        obj.insert("dataRequesterRole".into(), json!(self.requester_roles));
        obj.insert(
            "dataRequesterId".into(),
            match &self.requester_id_field {
                IdField::Blank => json!("blank"),
                IdField::Fixed(ids) => id_terms_value(ids),
            },
        );
        obj.insert("dataSubjectId".into(), json!("blank"));
        obj.insert(
            "dataSubjectResource".into(),
            match &self.resources_field {
                Field::Blank => json!("blank"),
                Field::Options(o) => json!({ "options": o }),
            },
        );
        obj.insert(
            "accessRights".into(),
            match &self.access_rights_field {
                Field::Blank => json!("blank"),
                Field::Options(o) => json!({ "options": o }),
            },
        );
        obj.insert(
            "provided".into(),
            Value::Array(self.abstract_conditions.iter().map(condition_value).collect()),
        );
        Value::Object(obj)
    }
}

impl Serialize for PolicyTemplate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_document().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PolicyTemplate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Self::from_document(&v).map_err(serde::de::Error::custom)
    }
}

/// Parses a template file holding one template object or an array of them.
pub fn parse_templates(text: &str) -> Result<Vec<PolicyTemplate>, TemplateError> {
    let v: Value = serde_json::from_str(text).map_err(|e| DocError::Json(e.to_string()))?;
    match &v {
        Value::Array(items) => items.iter().map(PolicyTemplate::from_document).collect(),
        _ => Ok(vec![PolicyTemplate::from_document(&v)?]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::FixtureInfoPoint;
    use crate::time::TimeOfDay;
    use chrono::NaiveDate;

    fn gp_template() -> PolicyTemplate {
        PolicyTemplate {
            id: "gp-clinic".into(),
            goal_tag: "consentAtGPClinic".into(),
            break_the_glass: false,
            requester_roles: ["GP".to_string()].into(),
            requester_id_field: IdField::Blank,
            resources_field: Field::Blank,
            access_rights_field: Field::Blank,
            abstract_conditions: vec![
                AbstractCondition::PurposeIn(["Diagnosis".to_string(), "Treatment".to_string()].into()),
                AbstractCondition::WithinDutyHours,
                AbstractCondition::CoLocatedAtRequesterClinic,
            ],
        }
    }

    fn cardio_template() -> PolicyTemplate {
        PolicyTemplate {
            id: "cardiologist".into(),
            goal_tag: "consentAtSpecialistClinic".into(),
            requester_roles: ["Cardiologist".to_string()].into(),
            resources_field: Field::Options(["ECG Report", "Cardiography", "Engyography"].map(String::from).into()),
            access_rights_field: Field::Options([AccessRight::Read, AccessRight::Write].into()),
            ..gp_template()
        }
    }

    fn ctx() -> ContextSnapshot {
        ContextSnapshot {
            access_time: TimeOfDay::hm(10, 0),
            access_date: NaiveDate::from_ymd_opt(2026, 3, 2).unwrap(),
            requester_location: "Milan".into(),
            subject_location: "Milan".into(),
            emergency: false,
        }
    }

    fn info() -> FixtureInfoPoint {
        FixtureInfoPoint::from_json(
            r#"{"dutyHours": {"Bob": {"start": "09:00", "end": "17:00"}}, "clinicLocation": {"Bob": "Milan"}}"#,
        )
        .unwrap()
    }

    fn gp_request() -> ConsentRequest {
        ConsentRequest::new("r1", "Bob", "GP", "Alice")
            .resources(["Blood Test"])
            .rights(["READ"])
            .purpose("Diagnosis")
    }

    #[test]
    fn specificity_scores() {
        assert_eq!(gp_template().specificity(), 5);
        assert_eq!(cardio_template().specificity(), 9);
    }

    #[test]
    fn empty_library_matches_nothing() {
        assert!(match_templates(&gp_request(), &ctx(), &[]).unwrap().is_empty());
    }

    #[test]
    fn blank_resources_match_anything() {
        let lib = [gp_template(), cardio_template()];
        let req = gp_request().resources(["Anything At All"]);
        let got = match_templates(&req, &ctx(), &lib).unwrap();
        assert_eq!(got.iter().map(|t| t.id.as_str()).collect::<Vec<_>>(), vec!["gp-clinic"]);
    }

    #[test]
    fn ties_are_reported() {
        let mut twin = gp_template();
        twin.id = "gp-twin".into();
        let err = match_templates(&gp_request(), &ctx(), &[gp_template(), twin]).unwrap_err();
        assert_eq!(
            err,
            TemplateError::Ambiguous {
                ids: vec!["gp-clinic".into(), "gp-twin".into()],
                score: 5
            }
        );
    }

    #[test]
    fn gp_blank_rights_filled_from_request() {
        let req = gp_request().rights(["WRITE"]);
        let p = instantiate_policy(&gp_template(), &req, &ctx(), &info(), TemplateConfig::default()).unwrap();
        assert_eq!(p.access_rights, [AccessRight::Write].into());
    }

    #[test]
    fn option_list_violation() {
        let req = ConsentRequest::new("r", "Bob", "Cardiologist", "Alice")
            .resources(["ECG Report"])
            .rights(["DELETE"])
            .purpose("Diagnosis");
        let err = instantiate_policy(&cardio_template(), &req, &ctx(), &info(), TemplateConfig::default()).unwrap_err();
        assert_eq!(
            err,
            TemplateError::OutsideOptions {
                field: "accessRights",
                value: "DELETE".into()
            }
        );
        let req = req.rights(["READ"]).resources(["X-Ray"]);
        assert!(matches!(
            instantiate_policy(&cardio_template(), &req, &ctx(), &info(), TemplateConfig::default()),
            Err(TemplateError::OutsideOptions {
                field: "dataSubjectResource",
                ..
            })
        ));
    }

    #[test]
    fn purpose_outside_list() {
        let req = gp_request().purpose("Research");
        assert_eq!(
            instantiate_policy(&gp_template(), &req, &ctx(), &info(), TemplateConfig::default()),
            Err(TemplateError::PurposeNotAllowed("Research".into()))
        );
    }

    #[test]
    fn missing_info_point_record() {
        let req = ConsentRequest::new("r", "Carol", "GP", "Alice")
            .resources(["Blood Test"])
            .rights(["READ"])
            .purpose("Diagnosis");
        assert!(matches!(
            instantiate_policy(&gp_template(), &req, &ctx(), &info(), TemplateConfig::default()),
            Err(TemplateError::Info(ContextError::NotFound(_)))
        ));
    }

    #[test]
    fn instantiated_policy_is_concrete() {
        let p = instantiate_policy(
            &gp_template(),
            &gp_request(),
            &ctx(),
            &info(),
            TemplateConfig::default(),
        )
        .unwrap();
        assert_eq!(p.id, "gp-clinic:Alice:Bob");
        assert_eq!(p.to_document()["provided"]["and"].as_array().unwrap().len(), 4);
        assert_eq!(
            p.provided.to_string(),
            "AccessPurpose = 'Diagnosis' and (AccessTime >= 09:00 and AccessTime <= 17:00) and \
             DataSubject.CurrentLocation = 'Milan' and DataRequester.CurrentLocation = 'Milan'"
        );
    }

    #[test]
    fn document_round_trip() {
        for t in [gp_template(), cardio_template()] {
            let back = PolicyTemplate::from_document(&t.to_document()).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn empty_options_rejected() {
        let mut doc = cardio_template().to_document();
        doc["accessRights"] = json!({ "options": [] });
        assert!(matches!(
            PolicyTemplate::from_document(&doc),
            Err(TemplateError::EmptyOptions(_))
        ));
    }
}
