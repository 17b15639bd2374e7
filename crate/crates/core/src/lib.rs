//! Consent management with teleo-reactive policies: a TR rule engine, an
//! authorization policy decision point, policy templates, per-patient
//! consent sessions and the command bus, persistence and scenario runner
//! built on top of them.

pub mod authz;
pub mod context;
pub mod engine;
pub mod facts;
pub mod library;
pub mod lifecycle;
pub mod request;
pub mod scenario;
pub mod store;
pub mod template;
pub mod time;
pub mod tr;

pub use authz::{
    evaluate_access, parse_authorization_policy, serialize_authorization_policy, AccessRequest, AccessRight,
    AuthorizationPolicy, Decision, Outcome, PolicyState,
};
pub use context::{ContextHub, ContextSnapshot, FixtureInfoPoint, InfoProvider};
pub use engine::{Command, CommandOutput, Engine, EngineError, EngineState, LogEntry};
pub use facts::{Fact, FactStore};
pub use library::Library;
pub use lifecycle::{AuditRecord, ConsentResponse, EngineEvent, Verb};
pub use request::ConsentRequest;
pub use template::{instantiate_policy, match_templates, PolicyTemplate, TemplateConfig};
pub use tr::{parse_tr_policy, render_tr_policy, TrInstance, TrPolicy};
