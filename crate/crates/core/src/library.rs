//! The fixed policy material a patient's device is provisioned with: TR
//! policies, policy templates and template options.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lifecycle::ACTIONS;
use crate::template::{parse_templates, PolicyTemplate, TemplateConfig, TemplateError};
use crate::tr::{parse_tr_policy, ParseError, TrPolicy};

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("{path}: {source}")]
    Tr { path: String, source: ParseError },
    #[error("{path}: {source}")]
    Template { path: String, source: TemplateError },
    #[error("cannot read {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("duplicate TR policy `{0}`")]
    DuplicatePolicy(String),
    #[error("duplicate template `{0}`")]
    DuplicateTemplate(String),
    #[error("template `{template}` refers to unknown TR policy `{goal}`")]
    UnknownGoal { template: String, goal: String },
    #[error("TR policy `{0}` must take exactly one parameter (the patient)")]
    Arity(String),
    #[error("TR policy `{policy}` calls unknown action `{action}`")]
    UnknownAction { policy: String, action: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Library {
    pub tr_policies: BTreeMap<String, TrPolicy>,
    pub templates: Vec<PolicyTemplate>,
    #[serde(default)]
    pub config: TemplateConfig,
}

impl Library {
    pub fn new(
        tr_policies: impl IntoIterator<Item = TrPolicy>,
        templates: impl IntoIterator<Item = PolicyTemplate>,
        config: TemplateConfig,
    ) -> Result<Self, LibraryError> {
        let mut lib = Library {
            config,
            ..Library::default()
        };
        for p in tr_policies {
            if p.params.len() != 1 {
                return Err(LibraryError::Arity(p.name));
            }
            if let Some(action) = p
                .rules
                .iter()
                .flat_map(|r| r.action.call_names())
                .find(|a| !ACTIONS.contains(a))
                .map(str::to_owned)
            {
                return Err(LibraryError::UnknownAction { policy: p.name, action });
            }
            if lib.tr_policies.contains_key(&p.name) {
                return Err(LibraryError::DuplicatePolicy(p.name));
            }
            lib.tr_policies.insert(p.name.clone(), p);
        }
        for t in templates {
            if lib.templates.iter().any(|x| x.id == t.id) {
                return Err(LibraryError::DuplicateTemplate(t.id));
            }
            if !lib.tr_policies.contains_key(&t.goal_tag) {
                return Err(LibraryError::UnknownGoal {
                    template: t.id,
                    goal: t.goal_tag,
                });
            }
            lib.templates.push(t);
        }
        Ok(lib)
    }

    /// Loads `.tr` sources and template documents from disk.
    pub fn load(
        tr_paths: &[impl AsRef<Path>],
        template_paths: &[impl AsRef<Path>],
        config: TemplateConfig,
    ) -> Result<Self, LibraryError> {
        let mut policies = Vec::new();
        for p in tr_paths {
            let (path, text) = read(p.as_ref())?;
            policies.push(parse_tr_policy(&text).map_err(|source| LibraryError::Tr { path, source })?);
        }
        let mut templates = Vec::new();
        for p in template_paths {
            let (path, text) = read(p.as_ref())?;
            templates.extend(parse_templates(&text).map_err(|source| LibraryError::Template { path, source })?);
        }
        Self::new(policies, templates, config)
    }

    pub fn template(&self, id: &str) -> Option<&PolicyTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }
}

fn read(p: &Path) -> Result<(String, String), LibraryError> {
    let path = p.display().to_string();
    match std::fs::read_to_string(p) {
        Ok(text) => Ok((path, text)),
        Err(e) => Err(LibraryError::Io {
            path,
            detail: e.to_string(),
        }),
    }
}
