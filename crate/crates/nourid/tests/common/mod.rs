//! Shared helpers for the service-level tests.
#![allow(dead_code)]

pub mod process;

use std::sync::Arc;

use nourid::accounts::Role;
use nourid::config::Config;
use nourid::registry::{PopulationConfig, Registry, seed_population};
use nourid::service::{self, AppState, ServiceHandle};
use nourid_core::qr::QUIET_ZONE;
use reqwest::{Client, Method, StatusCode};
use serde_json::{Value, json};
use tempfile::TempDir;

pub const PASSWORD: &str = "correct horse battery";

/// Small, fast configuration: cheap password hashing, a few personas.
pub fn test_config() -> Config {
    let mut c = Config { population: PopulationConfig::with_counts(3, 3, 3), ..Config::default() };
    c.password_hashing.memory_kib = 1024;
    c.password_hashing.iterations = 1;
    c.matcher.calibration_pairs = 2_000;
    c.issuance_key = Some("11".repeat(32));
    c
}

pub struct Harness {
    pub handle: ServiceHandle,
    pub dir: TempDir,
    pub client: Client,
}

impl Harness {
    pub async fn start(config: Config) -> Harness {
        let registry = seed_population(&config.population, config.seed).unwrap();
        Self::with_registry(config, registry).await
    }

    pub async fn with_registry(config: Config, registry: Registry) -> Harness {
        let dir = tempfile::tempdir().unwrap();
        let threshold = nourid::service::CalibrationRecord::compute(&config).unwrap().threshold;
        let (state, _) = AppState::open(config, registry, &service::state_dir(dir.path()), threshold).unwrap();
        let handle = service::start(Arc::new(state), "127.0.0.1:0".parse().unwrap()).await.unwrap();
        Harness { handle, dir, client: Client::new() }
    }

    pub fn state(&self) -> &AppState {
        &self.handle.state
    }

    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.raw(method, path, token, body).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    pub async fn raw(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let mut req = self.client.request(method, format!("{}/api/v1{path}", self.handle.base_url()));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        (resp.status(), resp.bytes().await.unwrap().to_vec())
    }

    pub async fn citizen(&self, email: &str) -> String {
        let (s, _) = self
            .call(Method::POST, "/accounts", None, Some(json!({ "full_name": "Test Citizen", "email": email, "phone": "+212600000000", "password": PASSWORD })))
            .await;
        assert_eq!(s, StatusCode::CREATED);
        self.login(email).await
    }

    pub async fn officer(&self, email: &str) -> String {
        self.state().register("Test Officer", email, "", PASSWORD, Role::Officer).unwrap();
        self.login(email).await
    }

    pub async fn login(&self, email: &str) -> String {
        let (s, v) = self.call(Method::POST, "/sessions", None, Some(json!({ "email": email, "password": PASSWORD }))).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["token"].as_str().unwrap().to_string()
    }

    /// A seeded identity not yet claimed, with its parcels.
    pub fn identity(&self, index: usize) -> (String, String, String) {
        let i = self.state().registry.identities().nth(index).unwrap();
        (i.cin.to_string(), i.full_name.clone(), i.date_of_birth.to_string())
    }

    /// Drives a fresh request to PendingApproval; returns its id and version.
    pub async fn pending_request(&self, token: &str, identity: usize) -> (u64, u64) {
        let (s, r) = self.call(Method::POST, "/requests", Some(token), None).await;
        assert_eq!(s, StatusCode::CREATED, "{r}");
        let id = r["request_id"].as_u64().unwrap();
        let (cin, name, dob) = self.identity(identity);
        let body = json!({ "cin": cin, "full_name": name, "date_of_birth": dob, "simulate_capture": true });
        let mut ok = false;
        for _ in 0..5 {
            let (s, _) = self.call(Method::POST, &format!("/requests/{id}/identity"), Some(token), Some(body.clone())).await;
            if s == StatusCode::OK {
                ok = true;
                break;
            }
        }
        assert!(ok, "identity never verified");
        let (s, props) = self.call(Method::GET, &format!("/properties?cin={cin}"), Some(token), None).await;
        assert_eq!(s, StatusCode::OK, "{props}");
        let parcels: Vec<Value> = props["parcels"].as_array().unwrap().iter().map(|p| p["parcel_id"].clone()).collect();
        let (s, r) = self.call(Method::POST, &format!("/requests/{id}/properties"), Some(token), Some(json!({ "parcel_ids": parcels }))).await;
        assert_eq!(s, StatusCode::OK, "{r}");
        let (s, r) = self.call(Method::POST, &format!("/requests/{id}/validate"), Some(token), Some(json!({}))).await;
        assert_eq!(s, StatusCode::OK, "{r}");
        let (s, r) = self.call(Method::POST, &format!("/requests/{id}/submit"), Some(token), Some(json!({}))).await;
        assert_eq!(s, StatusCode::OK, "{r}");
        assert_eq!(r["state"], "pending_approval");
        (id, r["version"].as_u64().unwrap())
    }
}

const SCALE: usize = 4;

fn decode_grey(w: usize, h: usize, px: impl Fn(usize, usize) -> u8) -> Option<String> {
    let mut img = rqrr::PreparedImage::prepare_from_greyscale(w * SCALE, h * SCALE, |x, y| px(x / SCALE, y / SCALE));
    let grids = img.detect_grids();
    grids.first()?.decode().ok().map(|(_, s)| s)
}

/// Rasterizes the service's SVG (unit squares on a module grid) and decodes it.
pub fn decode_svg(svg: &str) -> Option<String> {
    let vb = svg.split("viewBox=\"0 0 ").nth(1)?;
    let full: usize = vb.split_whitespace().next()?.parse().ok()?;
    let mut dark = vec![false; full * full];
    let path = svg.split(" d=\"").nth(1)?.split('"').next()?;
    for cmd in path.split('M').filter(|c| !c.is_empty()) {
        let xy = cmd.trim().split('h').next()?;
        let (x, y) = xy.split_once(',')?;
        dark[y.parse::<usize>().ok()? * full + x.parse::<usize>().ok()?] = true;
    }
    assert!((0..QUIET_ZONE).all(|i| !dark[i]), "quiet zone must be light");
    decode_grey(full, full, |x, y| if dark[y * full + x] { 0 } else { 255 })
}

pub fn decode_pgm(pgm: &[u8]) -> Option<String> {
    let mut header = pgm.split(|b| b.is_ascii_whitespace()).map(|t| std::str::from_utf8(t).unwrap_or(""));
    if header.next() != Some("P5") {
        return None;
    }
    let w: usize = header.next()?.parse().ok()?;
    let h: usize = header.next()?.parse().ok()?;
    let body = &pgm[pgm.len() - w * h..];
    decode_grey(w, h, |x, y| body[y * w + x])
}
