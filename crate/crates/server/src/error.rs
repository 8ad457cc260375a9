use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use citsci_core::analytics::AnalyticsError;
use citsci_core::annotation_store::StoreError;
use citsci_core::onboarding::OnboardingError;
use citsci_core::workload::WorkloadError;
use citsci_core::PlatformError;
use serde_json::json;

/// Error body: `{"code": "...", "message": "..."}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

pub type ApiResult<T> = Result<T, ApiError>;

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn unauthorized() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or unknown bearer token",
        )
    }

    pub fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", "organizer key required")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        use StatusCode as S;
        let message = e.to_string();
        let (status, code) = match &e {
            PlatformError::Onboarding(o) => match o {
                OnboardingError::InvalidConfig(_) => (S::UNPROCESSABLE_ENTITY, "invalid_config"),
                OnboardingError::DuplicateCampaign(_) => (S::CONFLICT, "duplicate_campaign"),
                OnboardingError::UnknownCampaign(_) => (S::NOT_FOUND, "unknown_campaign"),
                OnboardingError::AlreadyPublished(_) => (S::CONFLICT, "already_published"),
                OnboardingError::NotPublished(_) => (S::CONFLICT, "not_published"),
                OnboardingError::MissingDisclosure { .. } => (S::UNPROCESSABLE_ENTITY, "missing_disclosure"),
                OnboardingError::UnknownChannel(_) => (S::UNPROCESSABLE_ENTITY, "unknown_channel"),
                OnboardingError::UnknownInvite => (S::NOT_FOUND, "unknown_invite"),
                OnboardingError::ConsentRefused => (S::FORBIDDEN, "consent_required"),
                OnboardingError::UnknownSession(_) => (S::NOT_FOUND, "unknown_session"),
                OnboardingError::TokenCollision => (S::INTERNAL_SERVER_ERROR, "internal"),
            },
            PlatformError::ConsentMissing(_) => (S::FORBIDDEN, "consent_required"),
            PlatformError::Workload(w) => match w {
                WorkloadError::UnknownLease(_) => (S::NOT_FOUND, "unknown_lease"),
                WorkloadError::NotOwner(_) => (S::FORBIDDEN, "not_owner"),
                WorkloadError::NotActive { .. } => (S::CONFLICT, "lease_not_active"),
                WorkloadError::StaleLease { .. } => (S::CONFLICT, "stale_lease"),
                WorkloadError::UnknownInstance(_) => (S::NOT_FOUND, "unknown_instance"),
                WorkloadError::AlreadyAnnotated { .. } => (S::CONFLICT, "already_annotated"),
            },
            PlatformError::Store(s) => match s {
                StoreError::Duplicate { .. } => (S::CONFLICT, "already_annotated"),
                StoreError::DuplicateRecordId(_) => (S::INTERNAL_SERVER_ERROR, "internal"),
            },
            PlatformError::Analytics(a) => match a {
                AnalyticsError::InvalidBucket | AnalyticsError::TooManyBuckets(_) => {
                    (S::UNPROCESSABLE_ENTITY, "invalid_bucket")
                }
                AnalyticsError::UnknownInstance(_) => (S::INTERNAL_SERVER_ERROR, "inconsistent_data"),
            },
            PlatformError::Corpus(_) | PlatformError::Storage(_) => (S::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, message)
    }
}
