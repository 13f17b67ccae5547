//! DE-ID request lifecycle: state machine, hash-chained audit log and the
//! request book that enforces queue order, uniqueness and issuance.

mod audit;
mod book;
mod request;
mod state;

pub use audit::{Actor, AuditEvent, AuditPayload, GENESIS_HASH, ReplayError, replay, verify_chain};
pub use book::{Page, RequestBook, RequestSummary};
pub use request::{DeIdRequest, DecisionVerdict, OfficerDecision, StateStamp, WorkflowEvent};
pub use state::{EventKind, RequestState, next_state};

use alloc::string::String;

use crate::ids::{Cin, ParcelId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkflowError {
    #[error("event {event:?} is not allowed in state {state:?}")]
    InvalidTransition { state: RequestState, event: EventKind },
    #[error("missing or failing evidence: {0}")]
    EvidenceMissing(String),
    #[error("no properties selected")]
    EmptySelection,
    #[error("parcel {0} is not owned by the requesting citizen")]
    NotOwner(ParcelId),
    #[error("document validation incomplete or failed")]
    ValidationIncomplete,
    #[error("a rejection requires a reason")]
    ReasonRequired,
    #[error("version conflict: expected {expected}, current {actual}")]
    VersionConflict { expected: u64, actual: u64 },
    #[error("request {0} not found")]
    NotFound(u64),
    #[error("an open request already covers {cin} / {parcel_id}")]
    DuplicateRequest { cin: Cin, parcel_id: ParcelId },
    #[error("audit event out of order or broken chain: {0}")]
    Audit(ReplayError),
}
