use axum::extract::{FromRequestParts, Query};
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use serde::Deserialize;

use crate::config::Principal;
use crate::error::ApiError;
use crate::Shared;

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

/// Resolves the bearer token from the `Authorization` header, or from a
/// `token` query parameter for clients (such as `EventSource`) that cannot
/// set headers.
impl FromRequestParts<Shared> for Principal {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, svc: &Shared) -> Result<Self, Self::Rejection> {
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::to_owned);
        let token = match header {
            Some(t) => Some(t),
            None => Query::<TokenQuery>::try_from_uri(&parts.uri)
                .ok()
                .and_then(|q| q.0.token),
        };
        token
            .and_then(|t| svc.tokens.get(&t).cloned())
            .ok_or_else(ApiError::unauthorized)
    }
}

impl Principal {
    /// Patients may only touch their own data.
    pub fn may_act_for(&self, patient: &str) -> bool {
        match self {
            Principal::Admin => true,
            Principal::Patient { id } => id == patient,
            Principal::HealthcareSystem { .. } => false,
        }
    }

    /// The patient filter to apply to a listing: a patient always sees only
    /// themself; an admin may narrow by `requested`.
    pub fn scope(&self, requested: Option<String>) -> Result<Option<String>, ApiError> {
        match self {
            Principal::Admin => Ok(requested),
            Principal::Patient { id } => match requested {
                Some(r) if &r != id => Err(ApiError::forbidden()),
                _ => Ok(Some(id.clone())),
            },
            Principal::HealthcareSystem { .. } => Err(ApiError::forbidden()),
        }
    }
}
