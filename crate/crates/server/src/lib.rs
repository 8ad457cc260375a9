//! HTTP/JSON service over a [`Platform`].
//!
//! Annotators authenticate with the session secret they receive from
//! `POST /sessions`; organizer endpoints under `/admin` require the
//! organizer key. Both are sent as `Authorization: Bearer <token>`.
//! The wire format is documented in `docs/api.md`.
//!
//! All mutations go through one lock around the platform, which is the
//! serialization point for workload and store.

mod error;

use std::collections::HashMap;
use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use citsci_core::ids::{CampaignId, LeaseId, SessionId};
use citsci_core::report::{self, Format, ReportKind, ReportParams};
use citsci_core::workload::Assignment;
use citsci_core::{CampaignConfig, Channel, Platform, StanceLabel};
use parking_lot::RwLock;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;

pub use error::{ApiError, ApiResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Shared service state.
#[derive(Clone)]
pub struct App {
    platform: Arc<RwLock<Platform>>,
    organizer_key: Arc<str>,
}

impl App {
    pub fn new(platform: Platform, organizer_key: impl Into<String>) -> Self {
        let key: String = organizer_key.into();
        assert!(!key.is_empty(), "organizer key must not be empty");
        Self {
            platform: Arc::new(RwLock::new(platform)),
            organizer_key: key.into(),
        }
    }

    pub fn platform(&self) -> &Arc<RwLock<Platform>> {
        &self.platform
    }
}

pub fn router(app: App) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/join/{token}", get(join))
        .route("/sessions", post(create_session))
        .route("/tasks/next", get(next_task))
        .route("/tasks/{lease}/submit", post(submit))
        .route("/tasks/{lease}/release", post(release))
        .route("/admin/campaigns", post(create_campaign).get(list_campaigns))
        .route("/admin/campaigns/{id}", get(campaign_status))
        .route("/admin/campaigns/{id}/publish", post(publish_campaign))
        .route("/admin/links", post(mint_link))
        .route("/admin/reports/{kind}", get(report_handler))
        .route("/admin/export", get(export))
        .route("/admin/sessions/{id}", delete(delete_session))
        .with_state(app)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    app: App,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Periodically expires overdue leases so abandoned work is freed even when
/// no one asks for new tasks.
pub fn spawn_sweeper(app: App, every: std::time::Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        tick.tick().await;
        loop {
            tick.tick().await;
            // A failing journal write is reported on the next mutating request.
            let _ = app.platform.write().expire_leases();
        }
    })
}

// ------------------------------------------------------------------ helpers

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn require_admin(app: &App, headers: &HeaderMap) -> ApiResult<()> {
    match bearer(headers) {
        None => Err(ApiError::unauthorized()),
        Some(t) if constant_time_eq(t.as_bytes(), app.organizer_key.as_bytes()) => Ok(()),
        Some(_) => Err(ApiError::forbidden()),
    }
}

fn guest(p: &Platform, headers: &HeaderMap) -> ApiResult<SessionId> {
    let token = bearer(headers).ok_or_else(ApiError::unauthorized)?;
    p.session_by_secret(token)
        .map(|s| s.session_id.clone())
        .ok_or_else(ApiError::unauthorized)
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid("invalid_request", e.to_string()))
}

fn param<T: std::str::FromStr<Err = String>>(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<T>> {
    q.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| ApiError::invalid("invalid_parameter", format!("{key}: {e}")))
        })
        .transpose()
}

/// The campaign named in the query, or the only one if there is exactly one.
fn campaign_param(p: &Platform, q: &HashMap<String, String>) -> ApiResult<CampaignId> {
    if let Some(c) = q.get("campaign") {
        return Ok(CampaignId::new(c.clone()));
    }
    let mut ids = p.onboarding().campaigns().map(|c| c.id().clone());
    match (ids.next(), ids.next()) {
        (Some(id), None) => Ok(id),
        _ => Err(ApiError::invalid(
            "campaign_required",
            "query parameter `campaign` is required",
        )),
    }
}

fn text(format: Format, body: String) -> Response {
    (
        [(header::CONTENT_TYPE, HeaderValue::from_static(format.content_type()))],
        body,
    )
        .into_response()
}

fn label_options() -> Vec<Value> {
    StanceLabel::ALL
        .iter()
        .map(|l| {
            let display = match l {
                StanceLabel::Supports => "Supports",
                StanceLabel::MildlySupports => "Mildly supports",
                StanceLabel::MildlyOpposes => "Mildly opposes",
                StanceLabel::Opposes => "Opposes",
                StanceLabel::NotAValidPerspective => "Not a valid perspective",
                StanceLabel::Skip => "Don't know/skip",
            };
            json!({ "value": l, "display": display })
        })
        .collect()
}

/// Payload of `GET /tasks/next`, also embedded as `next` in submit responses.
fn task_payload(p: &Platform, session: &SessionId, assignment: Assignment) -> Value {
    let contributions = p.contribution_count(session);
    let Assignment::Leased(lease) = assignment else {
        return json!({ "status": "done", "contributions": contributions });
    };
    let guidelines = p
        .session(session)
        .and_then(|s| p.campaign(&s.campaign_id))
        .map(|c| c.config.guidelines_text.clone())
        .unwrap_or_default();
    let task = p.task(lease).expect("leased instances come from the dataset");
    json!({
        "status": "leased",
        "lease_id": task.lease.lease_id,
        "expires_at": task.lease.expires_at,
        "instance_id": task.instance.id,
        "claim_id": task.instance.claim_id,
        "claim_text": task.claim_text,
        "perspective_id": task.instance.perspective_id,
        "perspective_text": task.instance.perspective_text,
        "guidelines_text": guidelines,
        "labels": label_options(),
        "contributions": contributions,
    })
}

// ----------------------------------------------------------------- handlers

async fn health(State(app): State<App>) -> Json<Value> {
    let p = app.platform.read();
    Json(json!({ "status": "ok", "version": VERSION, "campaigns": p.campaign_count() }))
}

async fn join(State(app): State<App>, Path(token): Path<String>) -> ApiResult<Json<Value>> {
    let p = app.platform.read();
    let (link, campaign) = p.resolve_invite(&token)?;
    let c = &campaign.config;
    let disclosure = campaign.current_disclosure();
    Ok(Json(json!({
        "campaign_id": c.campaign_id,
        "title": c.title,
        "guidelines_text": c.guidelines_text,
        "purpose_statement": c.purpose_statement,
        "personal_data_collected": c.personal_data_collected,
        "nonpersonal_data_collected": c.nonpersonal_data_collected,
        "questionnaire_questions": c.questionnaire_questions,
        "data_use_statement": c.data_use_statement,
        "publication_plan": c.publication_plan,
        "rights_contact": c.rights_contact,
        "license_notice": c.license_notice,
        "channels": c.channels,
        "channel_hint": link.channel_hint,
        "disclosure_version": disclosure.map(|d| d.version),
        "disclosure_hash": disclosure.map(|d| d.hash.clone()),
    })))
}

#[derive(Deserialize)]
struct SessionRequest {
    token: String,
    #[serde(default)]
    consent: bool,
    channel: Option<String>,
}

async fn create_session(State(app): State<App>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: SessionRequest = parse_body(&body)?;
    let mut p = app.platform.write();
    let answer = req.channel.filter(|c| !c.is_empty()).map(Channel::new);
    let s = p.start_session(&req.token, req.consent, answer)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "session_id": s.session_id,
            "secret_token": s.secret_token,
            "campaign_id": s.campaign_id,
            "channel": s.channel,
        })),
    ))
}

async fn next_task(State(app): State<App>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    let mut p = app.platform.write();
    let session = guest(&p, &headers)?;
    let assignment = p.next_instance(&session)?;
    Ok(Json(task_payload(&p, &session, assignment)))
}

async fn submit(
    State(app): State<App>,
    headers: HeaderMap,
    Path(lease): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let v: Value = parse_body(&body)?;
    let label = match v.get("label") {
        None | Some(Value::Null) => return Err(ApiError::invalid("missing_label", "field `label` is required")),
        Some(Value::String(s)) => s
            .parse::<StanceLabel>()
            .map_err(|e| ApiError::invalid("invalid_label", e.to_string()))?,
        Some(_) => return Err(ApiError::invalid("invalid_label", "`label` must be a string")),
    };
    let mut p = app.platform.write();
    let session = guest(&p, &headers)?;
    let record = p.submit(&session, &LeaseId::new(lease), label)?;
    let next = p.next_instance(&session)?;
    Ok(Json(json!({
        "record": {
            "record_id": record.record_id,
            "instance_id": record.instance_id,
            "label": record.label,
            "created_at": record.created_at,
        },
        "next": task_payload(&p, &session, next),
    })))
}

async fn release(State(app): State<App>, headers: HeaderMap, Path(lease): Path<String>) -> ApiResult<StatusCode> {
    let mut p = app.platform.write();
    let session = guest(&p, &headers)?;
    p.release_lease(&session, &LeaseId::new(lease))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn create_campaign(
    State(app): State<App>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    require_admin(&app, &headers)?;
    let config: CampaignConfig = parse_body(&body)?;
    let mut p = app.platform.write();
    let id = p.create_campaign(config)?;
    let campaign = p.campaign(&id).expect("just created");
    Ok((StatusCode::CREATED, Json(json!({ "campaign": campaign }))))
}

async fn list_campaigns(State(app): State<App>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    require_admin(&app, &headers)?;
    let p = app.platform.read();
    let ids: Vec<_> = p
        .onboarding()
        .campaigns()
        .map(|c| json!({ "campaign_id": c.id(), "status": c.status }))
        .collect();
    Ok(Json(json!({ "campaigns": ids })))
}

async fn campaign_status(State(app): State<App>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    require_admin(&app, &headers)?;
    let p = app.platform.read();
    let id = CampaignId::new(id);
    let progress = p.progress(&id)?;
    let campaign = p.campaign(&id).expect("progress implies campaign");
    Ok(Json(json!({
        "campaign": campaign,
        "progress": progress,
        "sessions": p.onboarding().sessions_of(&id).count(),
        "records": p.report_inputs(&id)?.records.len(),
    })))
}

async fn publish_campaign(
    State(app): State<App>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    require_admin(&app, &headers)?;
    let mut p = app.platform.write();
    let id = CampaignId::new(id);
    let version = p.publish_campaign(&id)?;
    Ok(Json(json!({ "campaign_id": id, "disclosure": version })))
}

#[derive(Deserialize)]
struct LinkRequest {
    campaign_id: String,
    channel_hint: Option<String>,
}

async fn mint_link(State(app): State<App>, headers: HeaderMap, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    require_admin(&app, &headers)?;
    let req: LinkRequest = parse_body(&body)?;
    let mut p = app.platform.write();
    let link = p.mint_invite_link(&CampaignId::new(req.campaign_id), req.channel_hint.map(Channel::new))?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "token": link.token,
            "path": link.path(),
            "campaign_id": link.campaign_id,
            "channel_hint": link.channel_hint,
        })),
    ))
}

async fn report_handler(
    State(app): State<App>,
    headers: HeaderMap,
    Path(kind): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    require_admin(&app, &headers)?;
    let kind: ReportKind = kind
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::NOT_FOUND, "unknown_report", e))?;
    let format = param::<Format>(&q, "format")?.unwrap_or_default();
    let mut params = ReportParams {
        tagset: param(&q, "tagset")?,
        ..ReportParams::default()
    };
    if let Some(n) = q.get("min_scored") {
        params.min_scored = n
            .parse()
            .map_err(|_| ApiError::invalid("invalid_parameter", "min_scored: expected a non-negative integer"))?;
    }
    if let Some(b) = q.get("bucket") {
        params.bucket = report::parse_bucket(b).map_err(|e| ApiError::invalid("invalid_bucket", e))?;
    }
    let p = app.platform.read();
    let campaign = campaign_param(&p, &q)?;
    let body = p.report(&campaign, kind, format, &params)?;
    Ok(text(format, body))
}

async fn export(
    State(app): State<App>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    require_admin(&app, &headers)?;
    let format = param::<Format>(&q, "format")?.unwrap_or_default();
    let anonymize = match q.get("anonymize").map(String::as_str) {
        None | Some("true") | Some("1") => true,
        Some("false") | Some("0") => false,
        Some(other) => return Err(ApiError::invalid("invalid_parameter", format!("anonymize: `{other}`"))),
    };
    let mut p = app.platform.write();
    let campaign = campaign_param(&p, &q)?;
    let bundle = p.export(&campaign, anonymize)?;
    Ok(match format {
        Format::Json => text(format, bundle.to_json()),
        Format::Csv => text(format, bundle.to_csv()),
    })
}

async fn delete_session(State(app): State<App>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    require_admin(&app, &headers)?;
    let mut p = app.platform.write();
    let report = p.delete_participant_data(&SessionId::new(id))?;
    Ok(Json(json!({ "deleted": report })))
}
