//! Append-only, hash-chained audit events. Each event carries the full
//! transition payload, so folding a request's events rebuilds it.

use alloc::string::String;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::WorkflowError;
use super::request::{DeIdRequest, WorkflowEvent};
use crate::time::Millis;

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum Actor {
    Citizen(String),
    System,
    Officer(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditPayload {
    Created { account_id: String },
    Transition(WorkflowEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub request_id: u64,
    pub sequence_no: u64,
    pub actor: Actor,
    pub payload: AuditPayload,
    pub summary: String,
    pub occurred_at: Millis,
    pub prev_hash: String,
    pub hash: String,
}

#[derive(Serialize)]
struct Hashed<'a> {
    request_id: u64,
    sequence_no: u64,
    actor: &'a Actor,
    payload: &'a AuditPayload,
    summary: &'a str,
    occurred_at: Millis,
}

impl AuditEvent {
    pub fn new(
        request_id: u64,
        sequence_no: u64,
        actor: Actor,
        payload: AuditPayload,
        occurred_at: Millis,
        prev_hash: &str,
    ) -> Self {
        let summary = match &payload {
            AuditPayload::Created { account_id } => alloc::format!("request created by {account_id}"),
            AuditPayload::Transition(e) => e.summary(),
        };
        let mut event = AuditEvent {
            request_id,
            sequence_no,
            actor,
            payload,
            summary,
            occurred_at,
            prev_hash: String::from(prev_hash),
            hash: String::new(),
        };
        event.hash = event.compute_hash();
        event
    }

    /// SHA-256 over the predecessor hash and the JSON encoding of every
    /// other field.
    pub fn compute_hash(&self) -> String {
        let body = Hashed {
            request_id: self.request_id,
            sequence_no: self.sequence_no,
            actor: &self.actor,
            payload: &self.payload,
            summary: &self.summary,
            occurred_at: self.occurred_at,
        };
        let encoded = serde_json::to_vec(&body).expect("audit events serialize");
        let mut hasher = Sha256::new();
        hasher.update(self.prev_hash.as_bytes());
        hasher.update(&encoded);
        data_encoding::HEXLOWER.encode(&hasher.finalize())
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.payload {
            AuditPayload::Created { .. } => "created",
            AuditPayload::Transition(e) => match e.kind() {
                super::EventKind::IdentityVerified => "identity_verified",
                super::EventKind::PropertiesSelected => "properties_selected",
                super::EventKind::DocumentsValidated => "documents_validated",
                super::EventKind::Submitted => "submitted",
                super::EventKind::Approved => "approved",
                super::EventKind::Rejected => "rejected",
                super::EventKind::Issued => "issued",
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("no events")]
    Empty,
    #[error("first event must be a creation")]
    NotCreated,
    #[error("event for request {found} in log of request {expected}")]
    WrongRequest { expected: u64, found: u64 },
    #[error("sequence {found}, expected {expected}")]
    Sequence { expected: u64, found: u64 },
    #[error("hash chain broken at sequence {0}")]
    Chain(u64),
    #[error("transition rejected at sequence {0}")]
    Transition(u64),
}

/// Checks the chain link from `prev` (or genesis) to `event`.
pub(super) fn check_link(prev: Option<&AuditEvent>, event: &AuditEvent) -> Result<(), ReplayError> {
    let (expected_seq, expected_prev) = match prev {
        Some(p) => (p.sequence_no + 1, p.hash.as_str()),
        None => (1, GENESIS_HASH),
    };
    if event.sequence_no != expected_seq {
        return Err(ReplayError::Sequence {
            expected: expected_seq,
            found: event.sequence_no,
        });
    }
    if event.prev_hash != expected_prev || event.hash != event.compute_hash() {
        return Err(ReplayError::Chain(event.sequence_no));
    }
    Ok(())
}

/// Folds one request's events into its state, verifying the chain and every
/// transition along the way.
pub fn replay(events: &[AuditEvent]) -> Result<DeIdRequest, ReplayError> {
    let first = events.first().ok_or(ReplayError::Empty)?;
    check_link(None, first)?;
    let AuditPayload::Created { account_id } = &first.payload else {
        return Err(ReplayError::NotCreated);
    };
    let mut request = DeIdRequest::draft(first.request_id, account_id.clone(), first.occurred_at);
    let mut prev = first;
    for event in &events[1..] {
        if event.request_id != first.request_id {
            return Err(ReplayError::WrongRequest {
                expected: first.request_id,
                found: event.request_id,
            });
        }
        check_link(Some(prev), event)?;
        let AuditPayload::Transition(transition) = &event.payload else {
            return Err(ReplayError::Transition(event.sequence_no));
        };
        request = request
            .apply(transition, event.occurred_at)
            .map_err(|_: WorkflowError| ReplayError::Transition(event.sequence_no))?;
        prev = event;
    }
    Ok(request)
}

/// Verifies a chain without rebuilding state.
pub fn verify_chain(events: &[AuditEvent]) -> Result<(), ReplayError> {
    let mut prev: Option<&AuditEvent> = None;
    for e in events {
        check_link(prev, e)?;
        prev = Some(e);
    }
    Ok(())
}

pub(super) fn link_after(events: &[AuditEvent]) -> (u64, String) {
    match events.last() {
        Some(e) => (e.sequence_no + 1, e.hash.clone()),
        None => (1, String::from(GENESIS_HASH)),
    }
}

