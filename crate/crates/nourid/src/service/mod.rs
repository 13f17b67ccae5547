//! The dual-portal HTTP service.
//!
//! Every mutation runs on the blocking pool under one lock: the change is
//! planned against the in-memory state, appended and synced to the log,
//! and only then applied and acknowledged.

mod error;
mod handlers;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use chrono::{NaiveDate, TimeDelta, Utc};
use nourid_core::analytics::{ConsumptionSeries, ForecastModel, TrainingReport, train_forecaster};
use nourid_core::deid::IssuanceKey;
use nourid_core::workflow::RequestState;
use nourid_core::{Millis, PropertyType};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use error::ApiError;
pub use handlers::router;

use crate::accounts::{self, Account, AccountError, Role, Session};
use crate::accuracy::matcher_accuracy;
use crate::config::{Config, ConfigError};
use crate::registry::{Registry, RegistryError};
use crate::sim::synthesize_series;
use crate::store::{LogRecord, PersistedState, Recovery, Store, StoreError};

pub const REGISTRY_DIR: &str = "registry";
pub const STATE_DIR: &str = "state";
pub const CALIBRATION_FILE: &str = "calibration.json";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Threshold chosen at seed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub threshold: f64,
    pub balanced_accuracy: f64,
    pub noise_sigma: f64,
    pub pairs: usize,
    pub seed: u64,
}

impl CalibrationRecord {
    pub fn compute(config: &Config) -> Result<Self, ServiceError> {
        let m = &config.matcher;
        let report = matcher_accuracy(m.calibration_pairs, m.noise_sigma, config.population.template_dimension, config.seed)
            .map_err(|e| ServiceError::Calibration(e.to_string()))?;
        Ok(CalibrationRecord {
            threshold: report.threshold,
            balanced_accuracy: report.balanced_accuracy,
            noise_sigma: m.noise_sigma,
            pairs: m.calibration_pairs,
            seed: config.seed,
        })
    }

    pub fn write(&self, data_dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(data_dir)?;
        std::fs::write(data_dir.join(CALIBRATION_FILE), serde_json::to_vec_pretty(self)?)
    }

    pub fn read(data_dir: &Path) -> Option<Self> {
        serde_json::from_slice(&std::fs::read(data_dir.join(CALIBRATION_FILE)).ok()?).ok()
    }
}

pub fn now() -> Millis {
    Millis(Utc::now().timestamp_millis())
}

/// Seeded series and lazily trained model behind one DE-ID.
pub struct DeidAnalytics {
    pub series: ConsumptionSeries,
    model: OnceLock<Option<(ForecastModel, TrainingReport)>>,
}

pub(crate) struct Core {
    pub state: PersistedState,
    store: Store,
    emails: HashMap<String, String>,
}

impl Core {
    /// Makes `records` durable, then applies them.
    pub fn persist(&mut self, records: Vec<LogRecord>) -> Result<(), ApiError> {
        self.store.append(&records)?;
        for r in &records {
            if let LogRecord::Account(a) = r {
                self.emails.insert(a.email.clone(), a.account_id.clone());
            }
            self.state.apply(r).map_err(ApiError::internal)?;
        }
        if self.store.snapshot_due()
            && let Err(e) = self.store.snapshot(&self.state) {
                tracing::warn!(error = %e, "snapshot failed; log remains authoritative");
            }
        Ok(())
    }
}

pub struct AppState {
    pub config: Config,
    pub registry: Arc<Registry>,
    pub key: IssuanceKey,
    pub threshold: f64,
    /// Clock for document and identity-card validity.
    pub today: NaiveDate,
    pub(crate) core: Mutex<Core>,
    analytics: Mutex<HashMap<String, Arc<DeidAnalytics>>>,
    dummy_hash: String,
}

impl AppState {
    /// Recovers durable state from `state_dir` and serves `registry`.
    pub fn open(config: Config, registry: Registry, state_dir: &Path, threshold: f64) -> Result<(Self, Recovery), ServiceError> {
        let key = config.issuance_key()?;
        let (store, state, recovery) = Store::open(state_dir, config.snapshot_every)?;
        let emails = state.accounts.values().map(|a| (a.email.clone(), a.account_id.clone())).collect();
        let dummy_hash = accounts::hash_password("timing equalizer", &config.password_hashing)
            .map_err(|e| ServiceError::Calibration(e.to_string()))?;
        let app = AppState {
            today: config.population.reference_date,
            registry: Arc::new(registry),
            key,
            threshold,
            core: Mutex::new(Core { state, store, emails }),
            analytics: Mutex::new(HashMap::new()),
            dummy_hash,
            config,
        };
        app.finish_interrupted_issuance()?;
        Ok((app, recovery))
    }

    /// Loads registry, calibration and state from `data_dir`, seeding and
    /// calibrating from the config when they are missing.
    pub fn open_data_dir(config: Config, data_dir: &Path) -> Result<(Self, Recovery), ServiceError> {
        let reg_dir = data_dir.join(REGISTRY_DIR);
        let registry = if Registry::exists_in(&reg_dir) {
            Registry::import(&reg_dir)?
        } else {
            let r = crate::registry::seed_population(&config.population, config.seed)?;
            r.export(&reg_dir)?;
            r
        };
        let threshold = match config.matcher.threshold {
            Some(t) => t,
            None => match CalibrationRecord::read(data_dir) {
                Some(c) => c.threshold,
                None => {
                    let c = CalibrationRecord::compute(&config)?;
                    c.write(data_dir)?;
                    c.threshold
                }
            },
        };
        Self::open(config, registry, &data_dir.join(STATE_DIR), threshold)
    }

    /// A crash between approval and issuance leaves a request Approved;
    /// issue those now.
    fn finish_interrupted_issuance(&self) -> Result<(), ServiceError> {
        let mut core = self.core.lock();
        let approved: Vec<u64> =
            core.state.book.requests().filter(|r| r.state == RequestState::Approved).map(|r| r.request_id).collect();
        for id in approved {
            let events = core.state.book.plan_issue(id, |p| self.property_type_of(p), now());
            match events {
                Ok(ev) => core
                    .persist(ev.into_iter().map(LogRecord::Audit).collect())
                    .map_err(|e| ServiceError::Calibration(e.message))?,
                Err(e) => tracing::warn!(request_id = id, error = %e, "cannot issue approved request"),
            }
        }
        Ok(())
    }

    pub fn property_type_of(&self, parcel: &nourid_core::ParcelId) -> Option<PropertyType> {
        self.registry.parcel(parcel).map(|p| p.property_type)
    }

    /// Snapshot of the durable state.
    pub fn persisted(&self) -> PersistedState {
        self.core.lock().state.clone()
    }

    pub fn register(&self, full_name: &str, email: &str, phone: &str, password: &str, role: Role) -> Result<Account, ApiError> {
        let email = accounts::normalize_email(email)?;
        accounts::check_password_strength(password)?;
        if self.core.lock().emails.contains_key(&email) {
            return Err(AccountError::DuplicateEmail.into());
        }
        let password_hash = accounts::hash_password(password, &self.config.password_hashing)?;
        let mut core = self.core.lock();
        if core.emails.contains_key(&email) {
            return Err(AccountError::DuplicateEmail.into());
        }
        let account = Account {
            account_id: format!("acc-{:06}", core.state.accounts.len() + 1),
            full_name: full_name.trim().to_string(),
            email,
            phone: phone.trim().to_string(),
            password_hash,
            role,
            created_at: now(),
        };
        core.persist(vec![LogRecord::Account(account.clone())])?;
        Ok(account)
    }

    /// Same error and similar cost for an unknown email and a wrong password.
    pub fn login(&self, email: &str, password: &str) -> Result<(Session, Account), ApiError> {
        let email = email.trim().to_lowercase();
        let account = {
            let core = self.core.lock();
            core.emails.get(&email).and_then(|id| core.state.accounts.get(id)).cloned()
        };
        let Some(account) = account else {
            accounts::verify_password(password, &self.dummy_hash);
            return Err(AccountError::InvalidCredentials.into());
        };
        if !accounts::verify_password(password, &account.password_hash) {
            return Err(AccountError::InvalidCredentials.into());
        }
        let ttl = i64::try_from(self.config.session_ttl_secs).unwrap_or(i64::MAX / 1000).saturating_mul(1000);
        let session = Session {
            token: accounts::new_token(),
            account_id: account.account_id.clone(),
            expires_at: Millis(now().0.saturating_add(ttl)),
        };
        self.core.lock().persist(vec![LogRecord::Session(session.clone())])?;
        Ok((session, account))
    }

    pub fn session_account(&self, token: &str) -> Option<Account> {
        let core = self.core.lock();
        let session = core.state.sessions.get(token)?;
        if !session.is_live(now()) {
            return None;
        }
        core.state.accounts.get(&session.account_id).cloned()
    }

    /// Series and model cache for an issued DE-ID.
    pub fn analytics_for(&self, deid: &str, property_type: PropertyType) -> Result<Arc<DeidAnalytics>, ApiError> {
        if let Some(a) = self.analytics.lock().get(deid) {
            return Ok(a.clone());
        }
        let a = &self.config.analytics;
        let end = self.today;
        let start = end - TimeDelta::days(i64::from(a.history_days.max(1)));
        let digest = Sha256::new().chain_update(deid.as_bytes()).finalize();
        let seed = self.config.seed ^ u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
        let series = synthesize_series(deid, property_type, start, end, &a.load, seed).map_err(ApiError::internal)?;
        let entry = Arc::new(DeidAnalytics { series, model: OnceLock::new() });
        Ok(self.analytics.lock().entry(deid.to_string()).or_insert(entry).clone())
    }

    pub fn model_for<'a>(&self, analytics: &'a DeidAnalytics) -> Option<&'a (ForecastModel, TrainingReport)> {
        analytics
            .model
            .get_or_init(|| train_forecaster(&analytics.series, &self.config.analytics.model, self.config.seed).ok())
            .as_ref()
    }
}

/// A running server.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    join: JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn stop(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.join.await.map_err(std::io::Error::other)?
    }
}

pub async fn start(state: Arc<AppState>, listen: SocketAddr) -> std::io::Result<ServiceHandle> {
    let listener = TcpListener::bind(listen).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel();
    let app = router(state.clone());
    let join = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, "listening");
    Ok(ServiceHandle { addr, state, shutdown: Some(tx), join })
}

pub fn state_dir(data_dir: &Path) -> PathBuf {
    data_dir.join(STATE_DIR)
}
