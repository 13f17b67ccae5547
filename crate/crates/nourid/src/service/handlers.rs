use std::sync::Arc;

use axum::Json;
use axum::Router;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode, header};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use chrono::NaiveDate;
use nourid_core::analytics::{Granularity, aggregate, forecast, seasonal_naive, subsidy_tier};
use nourid_core::deid::{DigitalEnergyId, sign_payload};
use nourid_core::ids::validate_cin_format;
use nourid_core::qr::{EccLevel, RenderFormat, encode_qr, render_qr};
use nourid_core::records::DocumentKind;
use nourid_core::template::FaceTemplate;
use nourid_core::validation::{CinSubmission, validate_document, verify_identity};
use nourid_core::workflow::{Actor, DeIdRequest, DecisionVerdict, WorkflowEvent};
use nourid_core::{Cin, ParcelId};
use rand::Rng;
use serde::Deserialize;
use serde_json::{Value, json};

use super::{ApiError, AppState, Core, now};
use crate::accounts::{Account, Role};
use crate::registry::RegistryError;
use crate::sim::capture_probe;
use crate::store::LogRecord;

type AppResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/accounts", post(register))
        .route("/api/v1/sessions", post(login))
        .route("/api/v1/requests", post(create_request).get(list_requests))
        .route("/api/v1/requests/{id}", get(get_request))
        .route("/api/v1/requests/{id}/audit", get(request_audit))
        .route("/api/v1/requests/{id}/identity", post(verify_request_identity))
        .route("/api/v1/properties", get(list_properties))
        .route("/api/v1/requests/{id}/properties", post(select_properties))
        .route("/api/v1/requests/{id}/validate", post(validate_documents))
        .route("/api/v1/requests/{id}/submit", post(submit))
        .route("/api/v1/officer/queue", get(officer_queue))
        .route("/api/v1/officer/requests/{id}", get(officer_request))
        .route("/api/v1/officer/requests/{id}/decision", post(decide))
        .route("/api/v1/deids/{deid}", get(get_deid))
        .route("/api/v1/deids/{deid}/qr.svg", get(qr_svg))
        .route("/api/v1/deids/{deid}/qr.pgm", get(qr_pgm))
        .route("/api/v1/deids/{deid}/consumption", get(consumption))
        .route("/api/v1/deids/{deid}/forecast", get(forecast_view))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> AppResult<T> + Send + 'static) -> AppResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

fn authenticate(state: &AppState, headers: &HeaderMap, role: Role) -> AppResult<Account> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(ApiError::unauthorized)?;
    let account = state.session_account(token.trim()).ok_or_else(ApiError::unauthorized)?;
    if account.role != role {
        return Err(ApiError::forbidden(format!("this endpoint requires the {} role", role.as_str())));
    }
    Ok(account)
}

fn parse_id(raw: &str) -> AppResult<u64> {
    raw.parse().map_err(|_| ApiError::not_found("request"))
}

/// The request, if `account` owns it. Others' requests read as missing.
fn owned<'a>(core: &'a Core, account: &Account, id: u64) -> AppResult<&'a DeIdRequest> {
    core.state
        .book
        .get(id)
        .filter(|r| r.account_id == account.account_id)
        .ok_or_else(|| ApiError::not_found("request"))
}

fn request_json(r: &DeIdRequest) -> Value {
    serde_json::to_value(r).expect("request serializes")
}

fn with_extra(mut v: Value, key: &str, extra: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.insert(key.to_string(), extra);
    }
    v
}

#[derive(Deserialize)]
struct RegisterBody {
    full_name: String,
    email: String,
    #[serde(default)]
    phone: String,
    password: String,
}

async fn register(State(s): Shared, body: Result<Json<RegisterBody>, JsonRejection>) -> AppResult<(StatusCode, Json<Value>)> {
    let Json(b) = body?;
    let account = blocking(move || s.register(&b.full_name, &b.email, &b.phone, &b.password, Role::Citizen)).await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "account_id": account.account_id, "email": account.email, "role": account.role })),
    ))
}

#[derive(Deserialize)]
struct LoginBody {
    email: String,
    password: String,
}

async fn login(State(s): Shared, body: Result<Json<LoginBody>, JsonRejection>) -> AppResult<(StatusCode, Json<Value>)> {
    let Json(b) = body?;
    let (session, account) = blocking(move || s.login(&b.email, &b.password)).await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "token": session.token,
            "account_id": account.account_id,
            "role": account.role,
            "expires_at": session.expires_at,
        })),
    ))
}

async fn create_request(State(s): Shared, headers: HeaderMap) -> AppResult<(StatusCode, Json<Value>)> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let v = blocking(move || {
        let mut core = s.core.lock();
        let events = core.state.book.plan_create(&account.account_id, now());
        let id = events[0].request_id;
        core.persist(events.into_iter().map(LogRecord::Audit).collect())?;
        Ok(request_json(core.state.book.get(id).expect("just created")))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(v)))
}

async fn list_requests(State(s): Shared, headers: HeaderMap) -> AppResult<Json<Value>> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let core = s.core.lock();
    let items: Vec<Value> = core.state.book.requests_for_account(&account.account_id).map(request_json).collect();
    Ok(Json(json!({ "items": items })))
}

async fn get_request(State(s): Shared, headers: HeaderMap, Path(id): Path<String>) -> AppResult<Json<Value>> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let id = parse_id(&id)?;
    let core = s.core.lock();
    Ok(Json(request_json(owned(&core, &account, id)?)))
}

async fn request_audit(State(s): Shared, headers: HeaderMap, Path(id): Path<String>) -> AppResult<Json<Value>> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let id = parse_id(&id)?;
    let core = s.core.lock();
    owned(&core, &account, id)?;
    let trail = core.state.book.audit_trail(id)?;
    Ok(Json(json!({ "request_id": id, "events": trail })))
}

#[derive(Deserialize)]
struct IdentityBody {
    cin: String,
    full_name: String,
    date_of_birth: NaiveDate,
    probe_template: Option<Vec<f64>>,
    /// Derive a noisy genuine capture from the registry template.
    #[serde(default)]
    simulate_capture: bool,
    expected_version: Option<u64>,
}

async fn verify_request_identity(
    State(s): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Result<Json<IdentityBody>, JsonRejection>,
) -> AppResult<Json<Value>> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let id = parse_id(&id)?;
    let Json(b) = body?;
    let cin = validate_cin_format(&b.cin).map_err(|e| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_cin", e.to_string()).with_details(json!({ "reason": e.reason() }))
    })?;
    blocking(move || {
        {
            let core = s.core.lock();
            owned(&core, &account, id)?;
        }
        let record = match s.registry.lookup_identity(cin.as_str()) {
            Ok(r) => r,
            Err(RegistryError::NotFound) => {
                return Err(ApiError::new(StatusCode::NOT_FOUND, "cin_not_found", "no identity record for this CIN"));
            }
            Err(e) => return Err(ApiError::internal(e)),
        };
        let probe = match (b.probe_template, b.simulate_capture) {
            (Some(raw), _) => FaceTemplate::new(raw).map_err(|e| {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_template", e.to_string())
            })?,
            (None, true) => capture_probe(&record.reference_template, s.config.matcher.noise_sigma, rand::rng().next_u64()),
            (None, false) => return Err(ApiError::bad_request("provide probe_template or set simulate_capture")),
        };
        let submission = CinSubmission { cin: b.cin, full_name: b.full_name, date_of_birth: b.date_of_birth, probe_template: probe };
        let check = verify_identity(&submission, record, s.threshold, s.today);
        let check_json = serde_json::to_value(&check).expect("serializes");
        if !check.passed() {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "identity_check_failed", "identity verification failed")
                .with_details(check_json));
        }
        let event = WorkflowEvent::IdentityVerified { cin: record.cin.clone(), match_result: check.match_result.expect("passed") };
        let mut core = s.core.lock();
        let actor = Actor::Citizen(account.account_id.clone());
        let events = core.state.book.plan_transition(id, event, actor, b.expected_version, now())?;
        core.persist(events.into_iter().map(LogRecord::Audit).collect())?;
        Ok(Json(with_extra(request_json(core.state.book.get(id).expect("exists")), "identity_check", check_json)))
    })
    .await
}

#[derive(Deserialize)]
struct PropertiesQuery {
    cin: String,
}

/// Parcels of a CIN the caller has verified on one of their requests.
async fn list_properties(
    State(s): Shared,
    headers: HeaderMap,
    query: Result<Query<PropertiesQuery>, QueryRejection>,
) -> AppResult<Json<Value>> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let Query(q) = query?;
    let cin = validate_cin_format(&q.cin).map_err(|e| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_cin", e.to_string()).with_details(json!({ "reason": e.reason() }))
    })?;
    let verified = {
        let core = s.core.lock();
        core.state.book.requests_for_account(&account.account_id).any(|r| r.cin.as_ref() == Some(&cin))
    };
    if !verified {
        return Err(ApiError::forbidden("CIN not verified on any of your requests"));
    }
    let parcels = s.registry.list_parcels_by_owner(cin.as_str()).map_err(ApiError::internal)?;
    Ok(Json(json!({ "cin": cin, "parcels": parcels })))
}

#[derive(Deserialize)]
struct SelectBody {
    parcel_ids: Vec<String>,
    expected_version: Option<u64>,
}

async fn select_properties(
    State(s): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Result<Json<SelectBody>, JsonRejection>,
) -> AppResult<Json<Value>> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let id = parse_id(&id)?;
    let Json(b) = body?;
    let parcels = b
        .parcel_ids
        .iter()
        .map(|p| p.parse::<ParcelId>().map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_parcel_id", e.to_string())))
        .collect::<AppResult<Vec<_>>>()?;
    blocking(move || {
        let mut core = s.core.lock();
        owned(&core, &account, id)?;
        let owner_of = |p: &ParcelId| -> Option<Cin> { s.registry.parcel(p).map(|x| x.owner_cin.clone()) };
        let events = core.state.book.plan_attach_properties(id, &parcels, owner_of, b.expected_version, now())?;
        core.persist(events.into_iter().map(LogRecord::Audit).collect())?;
        Ok(Json(request_json(core.state.book.get(id).expect("exists"))))
    })
    .await
}

#[derive(Deserialize, Default)]
struct VersionBody {
    expected_version: Option<u64>,
}

fn version_body(body: Result<Json<VersionBody>, JsonRejection>) -> AppResult<VersionBody> {
    match body {
        Ok(Json(b)) => Ok(b),
        Err(JsonRejection::MissingJsonContentType(_)) => Ok(VersionBody::default()),
        Err(e) => Err(e.into()),
    }
}

/// Fetches and checks both documents of every selected parcel.
async fn validate_documents(
    State(s): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Result<Json<VersionBody>, JsonRejection>,
) -> AppResult<Json<Value>> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let id = parse_id(&id)?;
    let b = version_body(body)?;
    blocking(move || {
        let mut core = s.core.lock();
        let request = owned(&core, &account, id)?;
        let owner = request.cin.clone();
        let mut reports = Vec::new();
        for parcel in &request.selected_parcels {
            for kind in DocumentKind::ALL {
                let doc = s.registry.fetch_document(parcel, kind).map_err(|_| {
                    ApiError::new(StatusCode::BAD_GATEWAY, "document_unavailable", format!("no {} for {parcel}", kind.as_str()))
                })?;
                let expected = owner.clone().ok_or_else(|| ApiError::internal("selected parcels without a verified CIN"))?;
                reports.push(validate_document(doc, &expected, s.today));
            }
        }
        let all_valid = !reports.is_empty() && reports.iter().all(|r| r.is_valid());
        let event = WorkflowEvent::DocumentsValidated { reports };
        let events = core.state.book.plan_transition(id, event, Actor::System, b.expected_version, now())?;
        core.persist(events.into_iter().map(LogRecord::Audit).collect())?;
        let v = request_json(core.state.book.get(id).expect("exists"));
        Ok(Json(with_extra(v, "all_valid", json!(all_valid))))
    })
    .await
}

async fn submit(
    State(s): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Result<Json<VersionBody>, JsonRejection>,
) -> AppResult<Json<Value>> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let id = parse_id(&id)?;
    let b = version_body(body)?;
    blocking(move || {
        let mut core = s.core.lock();
        owned(&core, &account, id)?;
        let actor = Actor::Citizen(account.account_id.clone());
        let events = core.state.book.plan_transition(id, WorkflowEvent::Submitted, actor, b.expected_version, now())?;
        core.persist(events.into_iter().map(LogRecord::Audit).collect())?;
        Ok(Json(request_json(core.state.book.get(id).expect("exists"))))
    })
    .await
}

#[derive(Deserialize)]
struct PageQuery {
    #[serde(default)]
    page: usize,
    #[serde(default = "default_page_size")]
    page_size: usize,
}

fn default_page_size() -> usize {
    20
}

async fn officer_queue(State(s): Shared, headers: HeaderMap, query: Result<Query<PageQuery>, QueryRejection>) -> AppResult<Json<Value>> {
    authenticate(&s, &headers, Role::Officer)?;
    let Query(q) = query?;
    let page = s.core.lock().state.book.list_pending(q.page, q.page_size.clamp(1, 200));
    Ok(Json(serde_json::to_value(page).expect("serializes")))
}

async fn officer_request(State(s): Shared, headers: HeaderMap, Path(id): Path<String>) -> AppResult<Json<Value>> {
    authenticate(&s, &headers, Role::Officer)?;
    let id = parse_id(&id)?;
    let core = s.core.lock();
    let r = core.state.book.get(id).ok_or_else(|| ApiError::not_found("request"))?;
    let trail = core.state.book.audit_trail(id)?;
    Ok(Json(with_extra(request_json(r), "audit", json!(trail))))
}

#[derive(Deserialize)]
struct DecisionBody {
    verdict: DecisionVerdict,
    #[serde(default)]
    reason: String,
    expected_version: u64,
}

/// Approval is followed at once by issuance.
async fn decide(
    State(s): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Result<Json<DecisionBody>, JsonRejection>,
) -> AppResult<Json<Value>> {
    let officer = authenticate(&s, &headers, Role::Officer)?;
    let id = parse_id(&id)?;
    let Json(b) = body?;
    blocking(move || {
        let mut core = s.core.lock();
        let events = core.state.book.plan_decide(&officer.account_id, id, b.verdict, &b.reason, b.expected_version, now())?;
        core.persist(events.into_iter().map(LogRecord::Audit).collect())?;
        if b.verdict == DecisionVerdict::Approve {
            let issue = core.state.book.plan_issue(id, |p| s.property_type_of(p), now())?;
            core.persist(issue.into_iter().map(LogRecord::Audit).collect())?;
        }
        Ok(Json(request_json(core.state.book.get(id).expect("exists"))))
    })
    .await
}

/// The DE-ID if it belongs to one of the caller's requests.
fn owned_deid(s: &AppState, account: &Account, deid: &str) -> AppResult<(DigitalEnergyId, u64)> {
    let core = s.core.lock();
    let d = core.state.book.deid(deid).cloned().ok_or_else(|| ApiError::not_found("DE-ID"))?;
    let request = core
        .state
        .book
        .requests_for_account(&account.account_id)
        .find(|r| r.deids.iter().any(|x| x.deid == deid))
        .ok_or_else(|| ApiError::not_found("DE-ID"))?;
    Ok((d, request.request_id))
}

fn qr_uri(s: &AppState, d: &DigitalEnergyId) -> String {
    sign_payload(&d.deid, d.issued_at.as_secs().max(0) as u64, &s.key).uri
}

async fn get_deid(State(s): Shared, headers: HeaderMap, Path(deid): Path<String>) -> AppResult<Json<Value>> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let (d, request_id) = owned_deid(&s, &account, &deid)?;
    let parcel = s.registry.parcel(&d.parcel_id).cloned();
    let meter = s.registry.meter(&d.parcel_id).cloned();
    Ok(Json(json!({
        "deid": d.deid,
        "parcel_id": d.parcel_id,
        "property_type": d.property_type,
        "issued_at": d.issued_at,
        "check_digits": d.check_digits,
        "request_id": request_id,
        "qr_uri": qr_uri(&s, &d),
        "qr_svg": format!("/api/v1/deids/{}/qr.svg", d.deid),
        "parcel": parcel,
        "meter": meter,
    })))
}

fn qr_response(s: &AppState, d: &DigitalEnergyId, format: RenderFormat) -> AppResult<Response> {
    let symbol = encode_qr(qr_uri(s, d).as_bytes(), EccLevel::H).map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, format.content_type())], render_qr(&symbol, format)).into_response())
}

async fn qr_svg(State(s): Shared, headers: HeaderMap, Path(deid): Path<String>) -> AppResult<Response> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let (d, _) = owned_deid(&s, &account, &deid)?;
    qr_response(&s, &d, RenderFormat::Svg)
}

async fn qr_pgm(State(s): Shared, headers: HeaderMap, Path(deid): Path<String>) -> AppResult<Response> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let (d, _) = owned_deid(&s, &account, &deid)?;
    qr_response(&s, &d, RenderFormat::Pgm)
}

#[derive(Deserialize)]
struct ConsumptionQuery {
    granularity: Option<String>,
}

async fn consumption(
    State(s): Shared,
    headers: HeaderMap,
    Path(deid): Path<String>,
    query: Result<Query<ConsumptionQuery>, QueryRejection>,
) -> AppResult<Json<Value>> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let Query(q) = query?;
    let granularity: Granularity = q
        .granularity
        .as_deref()
        .unwrap_or("day")
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, "bad_granularity", e))?;
    let (d, _) = owned_deid(&s, &account, &deid)?;
    blocking(move || {
        let a = s.analytics_for(&d.deid, d.property_type)?;
        let view = aggregate(&a.series, granularity).map_err(ApiError::internal)?;
        let tier = subsidy_tier(&a.series, &s.config.analytics.subsidy).ok();
        Ok(Json(json!({
            "deid": d.deid,
            "granularity": view.granularity,
            "total_kwh": view.total(),
            "buckets": view.buckets,
            "subsidy": tier,
        })))
    })
    .await
}

#[derive(Deserialize)]
struct ForecastQuery {
    horizon: Option<usize>,
}

async fn forecast_view(
    State(s): Shared,
    headers: HeaderMap,
    Path(deid): Path<String>,
    query: Result<Query<ForecastQuery>, QueryRejection>,
) -> AppResult<Json<Value>> {
    let account = authenticate(&s, &headers, Role::Citizen)?;
    let Query(q) = query?;
    let horizon = q.horizon.unwrap_or(s.config.analytics.default_horizon);
    if horizon == 0 || horizon > s.config.analytics.max_horizon {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_horizon",
            format!("horizon must be between 1 and {}", s.config.analytics.max_horizon),
        ));
    }
    let (d, _) = owned_deid(&s, &account, &deid)?;
    blocking(move || {
        let a = s.analytics_for(&d.deid, d.property_type)?;
        let (model, training) = s
            .model_for(&a)
            .ok_or_else(|| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "insufficient_history", "not enough history to train"))?;
        let points = forecast(model, &a.series, horizon).map_err(ApiError::internal)?;
        let baseline = seasonal_naive(&a.series, horizon).map_err(ApiError::internal)?;
        Ok(Json(json!({
            "deid": d.deid,
            "horizon": horizon,
            "points": points,
            "baseline": baseline,
            "training": training,
        })))
    })
    .await
}
