use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Draft,
    IdentityVerified,
    PropertiesSelected,
    DocumentsValidated,
    PendingApproval,
    Approved,
    Rejected,
    Issued,
}

impl RequestState {
    pub const ALL: [RequestState; 8] = [
        RequestState::Draft,
        RequestState::IdentityVerified,
        RequestState::PropertiesSelected,
        RequestState::DocumentsValidated,
        RequestState::PendingApproval,
        RequestState::Approved,
        RequestState::Rejected,
        RequestState::Issued,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, RequestState::Rejected | RequestState::Issued)
    }
}

impl fmt::Display for RequestState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    IdentityVerified,
    PropertiesSelected,
    DocumentsValidated,
    Submitted,
    Approved,
    Rejected,
    Issued,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::IdentityVerified,
        EventKind::PropertiesSelected,
        EventKind::DocumentsValidated,
        EventKind::Submitted,
        EventKind::Approved,
        EventKind::Rejected,
        EventKind::Issued,
    ];
}

/// The legal transition table.
pub fn next_state(state: RequestState, event: EventKind) -> Option<RequestState> {
    use EventKind as E;
    use RequestState as S;
    match (state, event) {
        (S::Draft, E::IdentityVerified) => Some(S::IdentityVerified),
        (S::IdentityVerified, E::PropertiesSelected) => Some(S::PropertiesSelected),
        (S::PropertiesSelected, E::DocumentsValidated) => Some(S::DocumentsValidated),
        (S::DocumentsValidated, E::Submitted) => Some(S::PendingApproval),
        (S::PendingApproval, E::Approved) => Some(S::Approved),
        (S::PendingApproval, E::Rejected) => Some(S::Rejected),
        (S::Approved, E::Issued) => Some(S::Issued),
        _ => None,
    }
}
