//! Persona scenarios driven over HTTP, with an auto-approving officer bot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use nourid_core::records::DocumentKind;
use nourid_core::workflow::{DeIdRequest, Page, RequestState};
use nourid_core::PropertyType;
use rand::seq::SliceRandom;
use rand::rngs::ChaCha8Rng;
use rand::{Rng, SeedableRng};
use reqwest::{Client, Method, StatusCode};
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use crate::accounts::Role;
use crate::config::Config;
use crate::registry::{Registry, inject_defects, seed_population};
use crate::service::{self, AppState, CalibrationRecord};

pub const REPORT_VERSION: u32 = 1;
const PASSWORD: &str = "persona-passphrase-01";
const POLL: Duration = Duration::from_millis(15);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOptions {
    pub n_per_persona: u32,
    pub defect_rate: f64,
    pub seed: u64,
    pub parallelism: usize,
    pub officer_delay_ms: u64,
    /// Biometric captures a citizen tries before giving up.
    pub identity_attempts: u32,
    /// Issued DE-IDs whose forecast is requested after the run.
    pub forecast_sample: usize,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions {
            n_per_persona: 1,
            defect_rate: 0.0,
            seed: 42,
            parallelism: 8,
            officer_delay_ms: 0,
            identity_attempts: 3,
            forecast_sample: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Credentials {
    pub email: String,
    pub password: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LatencyStats {
    pub count: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[Duration]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1000.0).collect();
        ms.sort_by(f64::total_cmp);
        let rank = |p: f64| ms[((p * ms.len() as f64).ceil() as usize).clamp(1, ms.len()) - 1];
        LatencyStats { count: ms.len(), p50_ms: rank(0.50), p95_ms: rank(0.95), max_ms: ms[ms.len() - 1] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Outcomes {
    pub issued: usize,
    pub rejected: usize,
    /// Stopped by invalid documents before submission.
    pub blocked: usize,
    /// Every biometric attempt failed.
    pub identity_failed: usize,
    pub errors: usize,
}

impl Outcomes {
    pub fn total(&self) -> usize {
        self.issued + self.rejected + self.blocked + self.identity_failed + self.errors
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatorTally {
    pub documents: usize,
    pub defective: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub properties: usize,
    pub model_better: usize,
    /// None when no forecast could be sampled.
    pub mean_model_mape: Option<f64>,
    pub mean_baseline_mape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub report_version: u32,
    pub options: ScenarioOptions,
    pub personas_run: usize,
    pub outcomes: Outcomes,
    pub identity_retries: usize,
    /// Per-stage latency, keyed by stage name.
    pub stages: BTreeMap<String, LatencyStats>,
    /// Registration to issuance, issued requests only.
    pub end_to_end: LatencyStats,
    pub matcher: Option<CalibrationRecord>,
    /// Verdicts seen during the run against the injected ground truth.
    pub validator: ValidatorTally,
    pub forecast: ForecastSummary,
    pub wall_clock_ms: u64,
    /// First few error messages.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Issued,
    Rejected,
    Blocked,
    IdentityFailed,
}

/// What a citizen knows about themselves.
#[derive(Debug, Clone)]
struct Persona {
    index: usize,
    cin: String,
    full_name: String,
    date_of_birth: chrono::NaiveDate,
}

#[derive(Default)]
struct CitizenRun {
    stages: Vec<(&'static str, Duration)>,
    end_to_end: Option<Duration>,
    outcome: Option<Outcome>,
    identity_retries: usize,
    /// (defective, flagged) per validated document.
    verdicts: Vec<(bool, bool)>,
    token: String,
    deids: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("service unreachable at {0}")]
    Unreachable(String),
    #[error("registry holds only {have} {persona} personas, {want} requested")]
    NotEnoughPersonas { persona: &'static str, have: usize, want: usize },
    #[error("officer login failed: {0}")]
    Officer(String),
    #[error(transparent)]
    Service(#[from] service::ServiceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Setup(String),
}

#[derive(Clone)]
struct Api {
    client: Client,
    base: Arc<str>,
}

impl Api {
    async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> Result<(StatusCode, Vec<u8>), String> {
        let mut req = self.client.request(method.clone(), format!("{}/api/v1{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.map_err(|e| format!("{method} {path}: {e}"))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| format!("{method} {path}: {e}"))?;
        Ok((status, bytes.to_vec()))
    }

    /// Calls and decodes, treating any status but `ok` as an error.
    async fn json<T: for<'de> Deserialize<'de>>(
        &self,
        method: Method,
        path: &str,
        token: Option<&str>,
        body: Option<Value>,
        ok: StatusCode,
    ) -> Result<T, String> {
        let (status, bytes) = self.call(method.clone(), path, token, body).await?;
        if status != ok {
            return Err(format!("{method} {path}: {status} {}", String::from_utf8_lossy(&bytes)));
        }
        serde_json::from_slice(&bytes).map_err(|e| format!("{method} {path}: {e}"))
    }
}

fn error_code(bytes: &[u8]) -> String {
    serde_json::from_slice::<Value>(bytes)
        .ok()
        .and_then(|v| v.get("code").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_default()
}

/// Picks `n` identities of each persona, in a seed-determined order.
fn pick_personas(registry: &Registry, n: u32, seed: u64) -> Result<Vec<Persona>, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e55_0a11);
    let mut out = Vec::new();
    for (ptype, label) in [
        (PropertyType::Agricultural, "farmer"),
        (PropertyType::Commercial, "entrepreneur"),
        (PropertyType::Household, "household"),
    ] {
        let mut pool: Vec<_> = registry.identities().filter(|i| registry.persona_of(&i.cin) == Some(ptype)).collect();
        if pool.len() < n as usize {
            return Err(ScenarioError::NotEnoughPersonas { persona: label, have: pool.len(), want: n as usize });
        }
        pool.shuffle(&mut rng);
        out.extend(pool.into_iter().take(n as usize).map(|i| Persona {
            index: 0,
            cin: i.cin.to_string(),
            full_name: i.full_name.clone(),
            date_of_birth: i.date_of_birth,
        }));
    }
    for (i, p) in out.iter_mut().enumerate() {
        p.index = i;
    }
    Ok(out)
}

async fn run_citizen(api: Api, registry: Arc<Registry>, p: Persona, opts: ScenarioOptions, run_tag: String) -> (CitizenRun, Result<(), String>) {
    let mut run = CitizenRun::default();
    let result = citizen_steps(&api, &registry, &p, &opts, &run_tag, &mut run).await;
    (run, result)
}

async fn citizen_steps(
    api: &Api,
    registry: &Registry,
    p: &Persona,
    opts: &ScenarioOptions,
    run_tag: &str,
    run: &mut CitizenRun,
) -> Result<(), String> {
    let started = Instant::now();
    let mut stage = Instant::now();
    let mut lap = |name: &'static str, run: &mut CitizenRun| {
        run.stages.push((name, stage.elapsed()));
        stage = Instant::now();
    };
    let email = format!("{}.{run_tag}@citizens.example", p.cin.to_lowercase());
    let _: Value = api
        .json(
            Method::POST,
            "/accounts",
            None,
            Some(json!({ "full_name": p.full_name, "email": email, "phone": format!("+2126{:08}", p.index), "password": PASSWORD })),
            StatusCode::CREATED,
        )
        .await?;
    lap("register", run);
    let session: Value = api
        .json(Method::POST, "/sessions", None, Some(json!({ "email": email, "password": PASSWORD })), StatusCode::CREATED)
        .await?;
    run.token = session["token"].as_str().ok_or("session without token")?.to_string();
    let token = run.token.clone();
    let token = Some(token.as_str());
    lap("login", run);

    let request: DeIdRequest = api.json(Method::POST, "/requests", token, None, StatusCode::CREATED).await?;
    let id = request.request_id;
    lap("create_request", run);

    let body = json!({ "cin": p.cin, "full_name": p.full_name, "date_of_birth": p.date_of_birth, "simulate_capture": true });
    let mut verified = false;
    for attempt in 0..opts.identity_attempts.max(1) {
        let (status, bytes) = api.call(Method::POST, &format!("/requests/{id}/identity"), token, Some(body.clone())).await?;
        if status == StatusCode::OK {
            verified = true;
            break;
        }
        if error_code(&bytes) != "identity_check_failed" {
            return Err(format!("identity: {status} {}", String::from_utf8_lossy(&bytes)));
        }
        if attempt + 1 < opts.identity_attempts {
            run.identity_retries += 1;
        }
    }
    lap("identity", run);
    if !verified {
        run.outcome = Some(Outcome::IdentityFailed);
        return Ok(());
    }

    let props: Value = api.json(Method::GET, &format!("/properties?cin={}", p.cin), token, None, StatusCode::OK).await?;
    let parcels: Vec<String> = props["parcels"]
        .as_array()
        .ok_or("properties without parcels")?
        .iter()
        .filter_map(|x| x["parcel_id"].as_str().map(str::to_string))
        .collect();
    let _: DeIdRequest = api
        .json(Method::POST, &format!("/requests/{id}/properties"), token, Some(json!({ "parcel_ids": parcels })), StatusCode::OK)
        .await?;
    lap("properties", run);

    let validated: DeIdRequest = api.json(Method::POST, &format!("/requests/{id}/validate"), token, Some(json!({})), StatusCode::OK).await?;
    // The service reports each selected parcel's documents in kind order.
    let kinds = DocumentKind::ALL.len();
    for (i, r) in validated.validation_reports.iter().enumerate() {
        let parcel = &validated.selected_parcels[i / kinds];
        let doc = registry.fetch_document(parcel, DocumentKind::ALL[i % kinds]).map_err(|e| format!("ground truth: {e}"))?;
        run.verdicts.push((doc.defect.is_some(), !r.is_valid()));
    }
    lap("validate", run);
    if !validated.validation_complete() {
        run.outcome = Some(Outcome::Blocked);
        return Ok(());
    }

    let _: DeIdRequest = api.json(Method::POST, &format!("/requests/{id}/submit"), token, Some(json!({})), StatusCode::OK).await?;
    lap("submit", run);

    let done = loop {
        let r: DeIdRequest = api.json(Method::GET, &format!("/requests/{id}"), token, None, StatusCode::OK).await?;
        if matches!(r.state, RequestState::Issued | RequestState::Rejected) {
            break r;
        }
        tokio::time::sleep(POLL).await;
    };
    lap("approval", run);
    if done.state == RequestState::Rejected {
        run.outcome = Some(Outcome::Rejected);
        return Ok(());
    }
    run.end_to_end = Some(started.elapsed());

    for d in &done.deids {
        let _: Value = api.json(Method::GET, &format!("/deids/{}", d.deid), token, None, StatusCode::OK).await?;
        let (status, svg) = api.call(Method::GET, &format!("/deids/{}/qr.svg", d.deid), token, None).await?;
        if status != StatusCode::OK || !svg.starts_with(b"<svg") && !svg.starts_with(b"<?xml") {
            return Err(format!("qr.svg for {}: {status}", d.deid));
        }
        let _: Value = api.json(Method::GET, &format!("/deids/{}/consumption?granularity=month", d.deid), token, None, StatusCode::OK).await?;
        run.deids.push(d.deid.clone());
    }
    lap("dashboard", run);
    run.outcome = Some(Outcome::Issued);
    Ok(())
}

/// Approves every policy-clean request in the queue, rejects the rest.
async fn officer_bot(api: Api, token: String, delay: Duration, stop: Arc<AtomicBool>) -> Result<usize, String> {
    let token = Some(token.as_str());
    let mut decided = 0;
    while !stop.load(Ordering::Relaxed) {
        let page: Page = api.json(Method::GET, "/officer/queue?page=0&page_size=50", token, None, StatusCode::OK).await?;
        if page.items.is_empty() {
            tokio::time::sleep(POLL).await;
            continue;
        }
        for item in page.items {
            if !delay.is_zero() {
                tokio::time::sleep(delay).await;
            }
            let path = format!("/officer/requests/{}", item.request_id);
            let request: DeIdRequest = api.json(Method::GET, &path, token, None, StatusCode::OK).await?;
            let body = if request.validation_complete() {
                json!({ "verdict": "approve", "expected_version": request.version })
            } else {
                json!({ "verdict": "reject", "reason": "documents failed validation", "expected_version": request.version })
            };
            let (status, bytes) = api.call(Method::POST, &format!("{path}/decision"), token, Some(body)).await?;
            match status {
                StatusCode::OK => decided += 1,
                StatusCode::CONFLICT => {}
                _ => return Err(format!("decision: {status} {}", String::from_utf8_lossy(&bytes))),
            }
        }
    }
    Ok(decided)
}

async fn sample_forecasts(api: &Api, issued: &[(String, String)], sample: usize) -> ForecastSummary {
    let (mut n, mut better, mut model_sum, mut base_sum) = (0, 0, 0.0, 0.0);
    for (token, deid) in issued.iter().take(sample) {
        let Ok(v) = api
            .json::<Value>(Method::GET, &format!("/deids/{deid}/forecast?horizon=7"), Some(token), None, StatusCode::OK)
            .await
        else {
            continue;
        };
        let (Some(m), Some(b)) = (v["training"]["validation_mape"].as_f64(), v["training"]["baseline_mape"].as_f64()) else {
            continue;
        };
        n += 1;
        better += usize::from(m < b);
        model_sum += m;
        base_sum += b;
    }
    let mean = |s: f64| (n > 0).then(|| s / n as f64);
    ForecastSummary { properties: n, model_better: better, mean_model_mape: mean(model_sum), mean_baseline_mape: mean(base_sum) }
}

/// Drives the personas against a running service. `registry` must be the
/// one the service serves; citizens read their own particulars from it.
pub async fn run_scenario(
    base_url: &str,
    registry: Arc<Registry>,
    officer: &Credentials,
    matcher: Option<CalibrationRecord>,
    opts: &ScenarioOptions,
) -> Result<ScenarioReport, ScenarioError> {
    let api = Api {
        client: Client::builder().timeout(Duration::from_secs(120)).build().map_err(|e| ScenarioError::Setup(e.to_string()))?,
        base: base_url.trim_end_matches('/').into(),
    };
    let personas = pick_personas(&registry, opts.n_per_persona, opts.seed)?;
    let session: Value = api
        .json(Method::POST, "/sessions", None, Some(json!({ "email": officer.email, "password": officer.password })), StatusCode::CREATED)
        .await
        .map_err(|e| if e.contains("error sending request") { ScenarioError::Unreachable(base_url.to_string()) } else { ScenarioError::Officer(e) })?;
    if session["role"] != "officer" {
        return Err(ScenarioError::Officer(format!("{} is not an officer", officer.email)));
    }
    let officer_token = session["token"].as_str().unwrap_or_default().to_string();

    let started = Instant::now();
    let stop = Arc::new(AtomicBool::new(false));
    let bot = tokio::spawn(officer_bot(api.clone(), officer_token, Duration::from_millis(opts.officer_delay_ms), stop.clone()));
    let run_tag = format!("{:08x}", rand::rng().next_u32());
    let permits = Arc::new(Semaphore::new(opts.parallelism.max(1)));
    let mut tasks = JoinSet::new();
    for p in personas.iter().cloned() {
        let (api, registry, opts, tag, permits) = (api.clone(), registry.clone(), opts.clone(), run_tag.clone(), permits.clone());
        tasks.spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore open");
            run_citizen(api, registry, p, opts, tag).await
        });
    }
    let mut runs = Vec::new();
    while let Some(joined) = tasks.join_next().await {
        runs.push(joined.unwrap_or_else(|e| (CitizenRun::default(), Err(format!("citizen task panicked: {e}")))));
    }
    stop.store(true, Ordering::Relaxed);
    let bot_result = bot.await.map_err(|e| e.to_string()).and_then(|r| r);
    let wall_clock_ms = started.elapsed().as_millis() as u64;

    let mut outcomes = Outcomes::default();
    let mut stages: BTreeMap<&str, Vec<Duration>> = BTreeMap::new();
    let mut e2e = Vec::new();
    let mut verdicts = Vec::new();
    let mut failures = Vec::new();
    let mut issued = Vec::new();
    let mut retries = 0;
    for (run, result) in runs {
        for (name, d) in &run.stages {
            stages.entry(name).or_default().push(*d);
        }
        e2e.extend(run.end_to_end);
        verdicts.extend(run.verdicts.iter().copied());
        retries += run.identity_retries;
        match (result, run.outcome) {
            (Err(e), _) => {
                outcomes.errors += 1;
                failures.push(e);
            }
            (Ok(()), Some(Outcome::Issued)) => {
                outcomes.issued += 1;
                issued.extend(run.deids.iter().map(|d| (run.token.clone(), d.clone())));
            }
            (Ok(()), Some(Outcome::Rejected)) => outcomes.rejected += 1,
            (Ok(()), Some(Outcome::Blocked)) => outcomes.blocked += 1,
            (Ok(()), Some(Outcome::IdentityFailed)) => outcomes.identity_failed += 1,
            (Ok(()), None) => {
                outcomes.errors += 1;
                failures.push("citizen finished without an outcome".into());
            }
        }
    }
    if let Err(e) = bot_result {
        failures.push(format!("officer bot: {e}"));
    }
    failures.sort();
    failures.truncate(20);
    issued.sort_by(|a, b| a.1.cmp(&b.1));
    let forecast = sample_forecasts(&api, &issued, opts.forecast_sample).await;

    let correct = verdicts.iter().filter(|(d, f)| d == f).count();
    Ok(ScenarioReport {
        report_version: REPORT_VERSION,
        options: opts.clone(),
        personas_run: personas.len(),
        outcomes,
        identity_retries: retries,
        stages: stages.into_iter().map(|(k, v)| (k.to_string(), LatencyStats::from_samples(&v))).collect(),
        end_to_end: LatencyStats::from_samples(&e2e),
        matcher,
        validator: ValidatorTally {
            documents: verdicts.len(),
            defective: verdicts.iter().filter(|(d, _)| *d).count(),
            correct,
            accuracy: (!verdicts.is_empty()).then(|| correct as f64 / verdicts.len() as f64),
        },
        forecast,
        wall_clock_ms,
        failures,
    })
}

pub const SCENARIO_OFFICER: &str = "scenario-officer@srm.example";

/// Seeds a fresh data directory sized for the run, starts the service on
/// an ephemeral port, runs the scenario and stops the service.
pub async fn run_in_process(mut config: Config, data_dir: &Path, opts: &ScenarioOptions) -> Result<ScenarioReport, ScenarioError> {
    let n = opts.n_per_persona;
    let p = &mut config.population;
    (p.farmers, p.entrepreneurs, p.households) = (p.farmers.max(n), p.entrepreneurs.max(n), p.households.max(n));
    config.seed = opts.seed;
    let clean = seed_population(&config.population, opts.seed).map_err(service::ServiceError::from)?;
    let registry = inject_defects(&clean, opts.defect_rate, config.validator.detectability, opts.seed ^ 0xdef);
    registry.export(&data_dir.join(service::REGISTRY_DIR)).map_err(service::ServiceError::from)?;
    let calibration = CalibrationRecord::compute(&config)?;
    calibration.write(data_dir)?;
    let threshold = config.matcher.threshold.unwrap_or(calibration.threshold);

    let (state, _) = AppState::open(config, registry.clone(), &service::state_dir(data_dir), threshold)?;
    let officer = Credentials { email: SCENARIO_OFFICER.into(), password: "officer-passphrase-01".into() };
    if state.register("Scenario Officer", &officer.email, "", &officer.password, Role::Officer).is_err() {
        tracing::debug!("scenario officer already provisioned");
    }
    let state = Arc::new(state);
    let handle = service::start(state, "127.0.0.1:0".parse().expect("literal address")).await?;
    let report = run_scenario(&handle.base_url(), Arc::new(registry), &officer, Some(calibration), opts).await;
    handle.stop().await?;
    report
}

fn fmt_ms(x: f64) -> String {
    format!("{x:.1}")
}

/// Human-readable rendering of a report.
pub fn render_table(r: &ScenarioReport) -> String {
    let mut s = String::new();
    let o = &r.outcomes;
    let _ = writeln!(
        s,
        "personas {}  issued {}  rejected {}  blocked {}  identity_failed {}  errors {}  (wall clock {:.1} s)",
        r.personas_run,
        o.issued,
        o.rejected,
        o.blocked,
        o.identity_failed,
        o.errors,
        r.wall_clock_ms as f64 / 1000.0
    );
    let _ = writeln!(s, "{:<16} {:>6} {:>10} {:>10} {:>10}", "stage", "n", "p50 ms", "p95 ms", "max ms");
    let rows = r.stages.iter().map(|(k, v)| (k.as_str(), v)).chain([("end_to_end", &r.end_to_end)]);
    for (name, st) in rows {
        let _ = writeln!(s, "{name:<16} {:>6} {:>10} {:>10} {:>10}", st.count, fmt_ms(st.p50_ms), fmt_ms(st.p95_ms), fmt_ms(st.max_ms));
    }
    if let Some(m) = &r.matcher {
        let _ = writeln!(s, "matcher: threshold {:.4}, balanced accuracy {:.4} on {} pairs", m.threshold, m.balanced_accuracy, m.pairs);
    }
    let v = &r.validator;
    let _ = writeln!(s, "validator: {}/{} documents classified correctly ({} defective)", v.correct, v.documents, v.defective);
    let f = &r.forecast;
    let _ = write!(s, "forecast: model beats seasonal naive on {}/{} properties", f.model_better, f.properties);
    if let (Some(m), Some(b)) = (f.mean_model_mape, f.mean_baseline_mape) {
        let _ = write!(s, ", mean MAPE {m:.4} vs {b:.4}");
    }
    s.push('\n');
    for e in &r.failures {
        let _ = writeln!(s, "failure: {e}");
    }
    s
}
