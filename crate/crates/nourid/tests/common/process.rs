//! Drives the `nourid` binary as a separate process so it can be killed
//! without warning.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use nourid::registry::Registry;
use nourid::service;
use nourid::store::Store;
use nourid_core::workflow::{RequestBook, RequestState};
use reqwest::{Client, Method, StatusCode};
use serde_json::{Value, json};

use super::PASSWORD;

pub const OFFICER: &str = "night-officer@srm.example";

pub fn nourid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nourid")).args(args).output().expect("nourid runs")
}

/// Config with a dozen personas, cheap hashing and frequent snapshots.
pub fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("nourid.toml");
    let text = format!(
        r#"seed = 99
issuance_key = "{}"
snapshot_every = 5

[matcher]
calibration_pairs = 2000

[password_hashing]
memory_kib = 1024
iterations = 1
parallelism = 1

[population]
farmers = 4
entrepreneurs = 4
households = 4
"#,
        "22".repeat(32)
    );
    std::fs::write(&path, text).unwrap();
    path
}

/// Seeds `data` and provisions the officer.
pub fn prepare(config: &Path, data: &Path) {
    let c = config.to_str().unwrap();
    let d = data.to_str().unwrap();
    let out = nourid(&["--config", c, "seed", "--out", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = nourid(&["--config", c, "officer", "add", "--email", OFFICER, "--name", "Night Officer", "--password", PASSWORD, "--data-dir", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

pub struct Server {
    pub child: Child,
    pub base: String,
}

impl Server {
    pub fn spawn(config: &Path, data: &Path) -> Server {
        let mut child = Command::new(env!("CARGO_BIN_EXE_nourid"))
            .args(["--config", config.to_str().unwrap(), "serve", "--data-dir", data.to_str().unwrap(), "--listen", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let base = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected banner {line:?}")).to_string();
        Server { child, base }
    }

    /// SIGKILL: no shutdown hooks, no flushing.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A state transition the server confirmed with a 2xx response.
#[derive(Debug, Clone)]
pub struct Ack {
    pub email: String,
    pub request_id: u64,
    pub version: u64,
    pub state: RequestState,
}

#[derive(Clone)]
pub struct Api {
    pub client: Client,
    pub base: String,
}

impl Api {
    pub fn new(base: &str) -> Api {
        let client = Client::builder().timeout(Duration::from_secs(30)).build().unwrap();
        Api { client, base: base.to_string() }
    }

    /// `None` when the server is gone.
    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> Option<(StatusCode, Value)> {
        let mut req = self.client.request(method, format!("{}/api/v1{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.ok()?;
        let status = resp.status();
        let bytes = resp.bytes().await.ok()?;
        Some((status, serde_json::from_slice(&bytes).unwrap_or(Value::Null)))
    }

    pub async fn login(&self, email: &str) -> Option<String> {
        let (s, v) = self.call(Method::POST, "/sessions", None, Some(json!({ "email": email, "password": PASSWORD }))).await?;
        (s == StatusCode::CREATED).then(|| v["token"].as_str().unwrap().to_string())
    }
}

fn ack_of(email: &str, v: &Value) -> Ack {
    Ack {
        email: email.to_string(),
        request_id: v["request_id"].as_u64().unwrap(),
        version: v["version"].as_u64().unwrap(),
        state: serde_json::from_value(v["state"].clone()).unwrap(),
    }
}

/// One citizen from registration to submission, recording every
/// acknowledged step. Stops quietly once the server disappears.
pub async fn citizen_flow(api: Api, registry: Arc<Registry>, index: usize, tag: &str, acks: Arc<Mutex<Vec<Ack>>>) -> Option<()> {
    let email = format!("citizen-{tag}-{index}@example.ma");
    let body = json!({ "full_name": "Flow Citizen", "email": email, "phone": "", "password": PASSWORD });
    let (s, _) = api.call(Method::POST, "/accounts", None, Some(body)).await?;
    assert_eq!(s, StatusCode::CREATED);
    let token = api.login(&email).await?;
    let (s, r) = api.call(Method::POST, "/requests", Some(&token), None).await?;
    assert_eq!(s, StatusCode::CREATED, "{r}");
    acks.lock().unwrap().push(ack_of(&email, &r));
    let id = r["request_id"].as_u64().unwrap();

    let who = registry.identities().nth(index).unwrap();
    let ident = json!({ "cin": who.cin, "full_name": who.full_name, "date_of_birth": who.date_of_birth, "simulate_capture": true });
    let mut verified = false;
    for _ in 0..10 {
        let (s, r) = api.call(Method::POST, &format!("/requests/{id}/identity"), Some(&token), Some(ident.clone())).await?;
        if s == StatusCode::OK {
            acks.lock().unwrap().push(ack_of(&email, &r));
            verified = true;
            break;
        }
    }
    if !verified {
        return Some(());
    }
    let (_, props) = api.call(Method::GET, &format!("/properties?cin={}", who.cin), Some(&token), None).await?;
    let parcels: Vec<Value> = props["parcels"].as_array()?.iter().map(|p| p["parcel_id"].clone()).collect();
    for (path, body) in [
        ("properties", Some(json!({ "parcel_ids": parcels }))),
        ("validate", Some(json!({}))),
        ("submit", Some(json!({}))),
    ] {
        let (s, r) = api.call(Method::POST, &format!("/requests/{id}/{path}"), Some(&token), body).await?;
        assert_eq!(s, StatusCode::OK, "{path}: {r}");
        acks.lock().unwrap().push(ack_of(&email, &r));
    }
    Some(())
}

/// Approves whatever is queued until the server disappears or `rounds`
/// polls come back empty.
pub async fn officer_loop(api: Api, token: String, rounds: usize, acks: Arc<Mutex<Vec<Ack>>>) -> Option<()> {
    let mut idle = 0;
    while idle < rounds {
        let (s, page) = api.call(Method::GET, "/officer/queue?page_size=50", Some(&token), None).await?;
        assert_eq!(s, StatusCode::OK);
        let items = page["items"].as_array().cloned().unwrap_or_default();
        if items.is_empty() {
            idle += 1;
            tokio::time::sleep(Duration::from_millis(20)).await;
            continue;
        }
        idle = 0;
        for it in items {
            let id = it["request_id"].as_u64().unwrap();
            let body = json!({ "verdict": "approve", "expected_version": it["version"] });
            let (s, r) = api.call(Method::POST, &format!("/officer/requests/{id}/decision"), Some(&token), Some(body)).await?;
            if s == StatusCode::OK {
                acks.lock().unwrap().push(ack_of(OFFICER, &r));
            }
        }
    }
    Some(())
}

/// Checks a recovered book against what the server acknowledged: each
/// acknowledged version is present and its prefix of the audit trail
/// replays to the acknowledged state.
pub fn check_acks(book: &RequestBook, acks: &[Ack]) -> Result<(), String> {
    for a in acks {
        let trail = book.audit_trail(a.request_id).map_err(|e| format!("request {} lost: {e}", a.request_id))?;
        let n = a.version as usize;
        if trail.len() < n {
            return Err(format!("request {} has {} events, {} were acknowledged", a.request_id, trail.len(), n));
        }
        let prefix = RequestBook::from_events(&trail[..n]).map_err(|e| e.to_string())?;
        let got = prefix.get(a.request_id).unwrap().state;
        if got != a.state {
            return Err(format!("request {} v{} replays to {got:?}, acknowledged {:?}", a.request_id, n, a.state));
        }
    }
    Ok(())
}

/// Snapshot plus tail must agree with a replay of the whole log.
pub fn check_snapshot_replay(data: &Path) -> Result<RequestBook, String> {
    let dir = service::state_dir(data);
    let full = Store::replay_log(&dir).map_err(|e| e.to_string())?;
    let (_, recovered, recovery) = Store::open(&dir, 5).map_err(|e| e.to_string())?;
    if recovery.snapshot_offset == 0 {
        return Err("no snapshot was taken".into());
    }
    if recovered != full {
        return Err("snapshot recovery differs from full log replay".into());
    }
    Ok(recovered.book)
}

pub struct CrashOutcome {
    pub acks: Vec<Ack>,
    pub book: RequestBook,
    pub issued_after_restart: usize,
}

/// Seeds a data directory, runs concurrent citizens and an officer against
/// the binary, kills it with SIGKILL once `kill_after` steps have been
/// acknowledged, then restarts it and verifies every acknowledged step.
pub async fn crash_and_recover(root: &Path, citizens: usize, kill_after: usize) -> Result<CrashOutcome, String> {
    let config = write_config(root);
    let data = root.join("data");
    prepare(&config, &data);
    let registry = Arc::new(Registry::import(&data.join(service::REGISTRY_DIR)).map_err(|e| e.to_string())?);
    let server = Server::spawn(&config, &data);
    let api = Api::new(&server.base);
    let officer = api.login(OFFICER).await.ok_or("officer login failed")?;

    let acks = Arc::new(Mutex::new(Vec::new()));
    let mut tasks = Vec::new();
    for i in 0..citizens {
        tasks.push(tokio::spawn(citizen_flow(api.clone(), registry.clone(), i, "a", acks.clone())));
    }
    tasks.push(tokio::spawn(officer_loop(api.clone(), officer.clone(), usize::MAX, acks.clone())));
    while acks.lock().unwrap().len() < kill_after {
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
    server.kill();
    for t in tasks {
        t.await.map_err(|e| e.to_string())?;
    }
    let acks = acks.lock().unwrap().clone();
    let book = check_snapshot_replay(&data)?;
    check_acks(&book, &acks)?;

    // The restarted service honours old sessions and finishes the work.
    let server = Server::spawn(&config, &data);
    let api = Api::new(&server.base);
    for a in &acks {
        let token = api.login(&a.email).await.ok_or("acknowledged account lost")?;
        if a.email == OFFICER {
            continue;
        }
        let (s, r) = api.call(Method::GET, &format!("/requests/{}", a.request_id), Some(&token), None).await.ok_or("server gone")?;
        if s != StatusCode::OK || r["version"].as_u64() < Some(a.version) {
            return Err(format!("request {} after restart: {s} {r}", a.request_id));
        }
    }
    let (s, _) = api.call(Method::GET, "/officer/queue", Some(&officer), None).await.ok_or("server gone")?;
    if s != StatusCode::OK {
        return Err(format!("pre-crash officer session refused after restart: {s}"));
    }
    let late = Arc::new(Mutex::new(Vec::new()));
    citizen_flow(api.clone(), registry.clone(), citizens, "b", late.clone()).await.ok_or("post-restart flow failed")?;
    officer_loop(api.clone(), officer, 3, late.clone()).await.ok_or("post-restart officer failed")?;
    let (_, list) = api.call(Method::GET, "/officer/queue", Some(&api.login(OFFICER).await.unwrap()), None).await.unwrap();
    if list["total"] != 0 {
        return Err(format!("queue not drained after restart: {list}"));
    }
    server.kill();
    let book = check_snapshot_replay(&data)?;
    let mut all = acks.clone();
    all.extend(late.lock().unwrap().iter().cloned());
    check_acks(&book, &all)?;
    let issued_after_restart = book.requests().filter(|r| r.state == RequestState::Issued).count();
    Ok(CrashOutcome { acks, book, issued_after_restart })
}
