//! Durable service state: an append-only NDJSON log of accounts, sessions
//! and audit events, plus a periodic snapshot written by atomic rename.
//!
//! Every append is synced to disk before the caller acknowledges the
//! change. The snapshot records the log offset it covers; recovery loads
//! it and replays the log tail. A torn final line left by a crash is cut
//! off and the log continues from the last complete record.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use nourid_core::workflow::{AuditEvent, RequestBook, WorkflowError};
use serde::{Deserialize, Serialize};

use crate::accounts::{Account, Session};

pub const LOG_FILE: &str = "events.ndjson";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Account(Account),
    Session(Session),
    Audit(AuditEvent),
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("log line {line} is corrupt: {message}")]
    Corrupt { line: usize, message: String },
    #[error("snapshot covers {snapshot} bytes but the log has only {log}")]
    SnapshotAhead { snapshot: u64, log: u64 },
    #[error("snapshot unreadable: {0}")]
    Snapshot(String),
    #[error("log record rejected on replay: {0}")]
    Replay(#[from] WorkflowError),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PersistedState {
    pub accounts: BTreeMap<String, Account>,
    pub sessions: BTreeMap<String, Session>,
    pub book: RequestBook,
}

impl PersistedState {
    pub fn new() -> Self {
        PersistedState { book: RequestBook::new(), ..Default::default() }
    }

    pub fn apply(&mut self, record: &LogRecord) -> Result<(), WorkflowError> {
        match record {
            LogRecord::Account(a) => {
                self.accounts.insert(a.account_id.clone(), a.clone());
            }
            LogRecord::Session(s) => {
                self.sessions.insert(s.token.clone(), s.clone());
            }
            LogRecord::Audit(e) => self.book.commit(std::slice::from_ref(e))?,
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    snapshot_version: u32,
    log_offset: u64,
    state: PersistedState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Recovery {
    pub snapshot_offset: u64,
    pub replayed_records: usize,
    /// Bytes of an incomplete trailing record that were discarded.
    pub truncated_bytes: u64,
}

pub struct Store {
    dir: PathBuf,
    log: File,
    offset: u64,
    appended_since_snapshot: u64,
    snapshot_every: u64,
}

/// Reads complete records from `offset`, returning them with the byte
/// offset just past the last one. Only the final line may be torn.
fn read_records(path: &Path, offset: u64) -> Result<(Vec<LogRecord>, u64, u64), StoreError> {
    let mut file = File::open(path)?;
    let len = file.metadata()?.len();
    if offset > len {
        return Err(StoreError::SnapshotAhead { snapshot: offset, log: len });
    }
    file.seek(SeekFrom::Start(offset))?;
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut good = offset;
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.last() == Some(&b'\n');
        match serde_json::from_slice::<LogRecord>(&buf) {
            Ok(r) if complete => {
                records.push(r);
                good += n as u64;
            }
            Ok(_) => break,
            Err(e) => {
                // A torn tail has nothing after it.
                let mut rest = Vec::new();
                reader.read_to_end(&mut rest)?;
                if complete && !rest.iter().all(u8::is_ascii_whitespace) {
                    return Err(StoreError::Corrupt { line: line_no, message: e.to_string() });
                }
                break;
            }
        }
    }
    Ok((records, good, len - good))
}

fn sync_dir(dir: &Path) -> std::io::Result<()> {
    #[cfg(unix)]
    File::open(dir)?.sync_all()?;
    #[cfg(not(unix))]
    let _ = dir;
    Ok(())
}

impl Store {
    /// Opens or creates the store in `dir` and recovers its state.
    pub fn open(dir: &Path, snapshot_every: u64) -> Result<(Store, PersistedState, Recovery), StoreError> {
        fs::create_dir_all(dir)?;
        let log_path = dir.join(LOG_FILE);
        let log = OpenOptions::new().create(true).read(true).append(true).open(&log_path)?;
        let (mut state, snapshot_offset) = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => {
                let snap: Snapshot = serde_json::from_slice(&bytes).map_err(|e| StoreError::Snapshot(e.to_string()))?;
                if snap.snapshot_version != SNAPSHOT_VERSION {
                    return Err(StoreError::Snapshot(format!("unsupported version {}", snap.snapshot_version)));
                }
                (snap.state, snap.log_offset)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (PersistedState::new(), 0),
            Err(e) => return Err(e.into()),
        };
        let (records, good, torn) = read_records(&log_path, snapshot_offset)?;
        for r in &records {
            state.apply(r)?;
        }
        if torn > 0 {
            tracing::warn!(bytes = torn, "discarding incomplete trailing log record");
            log.set_len(good)?;
            log.sync_all()?;
        }
        let store = Store {
            dir: dir.to_path_buf(),
            log,
            offset: good,
            appended_since_snapshot: records.len() as u64,
            snapshot_every: snapshot_every.max(1),
        };
        let recovery = Recovery { snapshot_offset, replayed_records: records.len(), truncated_bytes: torn };
        Ok((store, state, recovery))
    }

    /// State rebuilt from the whole log, ignoring any snapshot.
    pub fn replay_log(dir: &Path) -> Result<PersistedState, StoreError> {
        let mut state = PersistedState::new();
        let path = dir.join(LOG_FILE);
        if path.exists() {
            for r in read_records(&path, 0)?.0 {
                state.apply(&r)?;
            }
        }
        Ok(state)
    }

    /// Appends and syncs. Returns only once the records are durable.
    pub fn append(&mut self, records: &[LogRecord]) -> Result<(), StoreError> {
        if records.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).map_err(std::io::Error::from)?;
            buf.push(b'\n');
        }
        self.log.write_all(&buf)?;
        self.log.sync_data()?;
        self.offset += buf.len() as u64;
        self.appended_since_snapshot += records.len() as u64;
        Ok(())
    }

    pub fn snapshot_due(&self) -> bool {
        self.appended_since_snapshot >= self.snapshot_every
    }

    /// Writes `state`, which must reflect every appended record, as the
    /// new snapshot.
    pub fn snapshot(&mut self, state: &PersistedState) -> Result<(), StoreError> {
        let snap = Snapshot { snapshot_version: SNAPSHOT_VERSION, log_offset: self.offset, state: state.clone() };
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(&mut f, &snap).map_err(std::io::Error::from)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        sync_dir(&self.dir)?;
        self.appended_since_snapshot = 0;
        Ok(())
    }

    pub fn log_offset(&self) -> u64 {
        self.offset
    }
}
