use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::WorkflowError;
use super::state::{EventKind, RequestState, next_state};
use crate::deid::DigitalEnergyId;
use crate::ids::{Cin, ParcelId};
use crate::records::DocumentKind;
use crate::template::MatchResult;
use crate::time::Millis;
use crate::validation::ValidationReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionVerdict {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfficerDecision {
    pub officer_id: String,
    pub verdict: DecisionVerdict,
    #[serde(default)]
    pub reason: String,
    pub decided_at: Millis,
}

/// A transition together with the evidence it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkflowEvent {
    IdentityVerified { cin: Cin, match_result: MatchResult },
    PropertiesSelected { parcels: Vec<ParcelId> },
    DocumentsValidated { reports: Vec<ValidationReport> },
    Submitted,
    Approved { decision: OfficerDecision },
    Rejected { decision: OfficerDecision },
    Issued { deids: Vec<DigitalEnergyId> },
}

impl WorkflowEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            WorkflowEvent::IdentityVerified { .. } => EventKind::IdentityVerified,
            WorkflowEvent::PropertiesSelected { .. } => EventKind::PropertiesSelected,
            WorkflowEvent::DocumentsValidated { .. } => EventKind::DocumentsValidated,
            WorkflowEvent::Submitted => EventKind::Submitted,
            WorkflowEvent::Approved { .. } => EventKind::Approved,
            WorkflowEvent::Rejected { .. } => EventKind::Rejected,
            WorkflowEvent::Issued { .. } => EventKind::Issued,
        }
    }

    pub fn summary(&self) -> String {
        match self {
            WorkflowEvent::IdentityVerified { cin, match_result } => {
                format!("identity {cin} verified, score {:.4}", match_result.score)
            }
            WorkflowEvent::PropertiesSelected { parcels } => format!("{} parcel(s) selected", parcels.len()),
            WorkflowEvent::DocumentsValidated { reports } => {
                let valid = reports.iter().filter(|r| r.is_valid()).count();
                format!("{valid}/{} document(s) valid", reports.len())
            }
            WorkflowEvent::Submitted => String::from("submitted for approval"),
            WorkflowEvent::Approved { decision } => format!("approved by {}", decision.officer_id),
            WorkflowEvent::Rejected { decision } => {
                format!("rejected by {}: {}", decision.officer_id, decision.reason)
            }
            WorkflowEvent::Issued { deids } => format!("{} DE-ID(s) issued", deids.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateStamp {
    pub state: RequestState,
    pub at: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeIdRequest {
    pub request_id: u64,
    pub account_id: String,
    pub cin: Option<Cin>,
    pub state: RequestState,
    pub match_result: Option<MatchResult>,
    pub selected_parcels: Vec<ParcelId>,
    pub validation_reports: Vec<ValidationReport>,
    pub decision: Option<OfficerDecision>,
    pub deids: Vec<DigitalEnergyId>,
    pub version: u64,
    pub timestamps: Vec<StateStamp>,
}

fn evidence(what: &str) -> WorkflowError {
    WorkflowError::EvidenceMissing(String::from(what))
}

impl DeIdRequest {
    /// A fresh draft at version 1 (its creation is the first audit event).
    pub fn draft(request_id: u64, account_id: impl Into<String>, at: Millis) -> Self {
        DeIdRequest {
            request_id,
            account_id: account_id.into(),
            cin: None,
            state: RequestState::Draft,
            match_result: None,
            selected_parcels: Vec::new(),
            validation_reports: Vec::new(),
            decision: None,
            deids: Vec::new(),
            version: 1,
            timestamps: alloc::vec![StateStamp { state: RequestState::Draft, at }],
        }
    }

    pub fn submitted_at(&self) -> Option<Millis> {
        self.timestamps
            .iter()
            .find(|s| s.state == RequestState::PendingApproval)
            .map(|s| s.at)
    }

    /// Every selected parcel has one valid report per document kind.
    pub fn validation_complete(&self) -> bool {
        !self.selected_parcels.is_empty()
            && self.reports_cover_selection(&self.validation_reports)
            && self.validation_reports.iter().all(ValidationReport::is_valid)
    }

    fn reports_cover_selection(&self, reports: &[ValidationReport]) -> bool {
        let per_parcel = DocumentKind::ALL.len();
        reports.len() == per_parcel * self.selected_parcels.len()
            && self.selected_parcels.iter().all(|p| {
                reports.iter().filter(|r| r.subject_id == p.as_str()).count() == per_parcel
            })
    }

    /// Checks the transition table and the event's evidence, returning the
    /// successor. Does not consult anything outside the request.
    pub fn apply(&self, event: &WorkflowEvent, at: Millis) -> Result<DeIdRequest, WorkflowError> {
        let kind = event.kind();
        let target = next_state(self.state, kind).ok_or(WorkflowError::InvalidTransition {
            state: self.state,
            event: kind,
        })?;
        let mut next = self.clone();
        match event {
            WorkflowEvent::IdentityVerified { cin, match_result } => {
                if !match_result.is_match || match_result.score < match_result.threshold {
                    return Err(evidence("passing biometric match"));
                }
                next.cin = Some(cin.clone());
                next.match_result = Some(*match_result);
            }
            WorkflowEvent::PropertiesSelected { parcels } => {
                let set: BTreeSet<ParcelId> = parcels.iter().cloned().collect();
                if set.is_empty() {
                    return Err(WorkflowError::EmptySelection);
                }
                next.selected_parcels = set.into_iter().collect();
            }
            WorkflowEvent::DocumentsValidated { reports } => {
                if reports.iter().any(|r| !r.is_consistent()) || !self.reports_cover_selection(reports) {
                    return Err(evidence("one report per document kind for every selected parcel"));
                }
                next.validation_reports = reports.clone();
            }
            WorkflowEvent::Submitted => {
                if !self.validation_complete() {
                    return Err(WorkflowError::ValidationIncomplete);
                }
            }
            WorkflowEvent::Approved { decision } => {
                if decision.verdict != DecisionVerdict::Approve {
                    return Err(evidence("approve verdict"));
                }
                next.decision = Some(decision.clone());
            }
            WorkflowEvent::Rejected { decision } => {
                if decision.verdict != DecisionVerdict::Reject {
                    return Err(evidence("reject verdict"));
                }
                if decision.reason.trim().is_empty() {
                    return Err(WorkflowError::ReasonRequired);
                }
                next.decision = Some(decision.clone());
            }
            WorkflowEvent::Issued { deids } => {
                let cin = self.cin.as_ref().ok_or_else(|| evidence("verified CIN"))?;
                let mut parcels: Vec<&ParcelId> = deids.iter().map(|d| &d.parcel_id).collect();
                parcels.sort();
                let covers = parcels.len() == self.selected_parcels.len()
                    && parcels.iter().zip(&self.selected_parcels).all(|(a, b)| *a == b);
                let bound = deids.iter().all(|d| &d.cin == cin && d.regenerates());
                if !covers || !bound {
                    return Err(evidence("one DE-ID per selected parcel bound to the verified CIN"));
                }
                next.deids = deids.clone();
            }
        }
        next.state = target;
        next.version += 1;
        next.timestamps.push(StateStamp { state: target, at });
        Ok(next)
    }

    /// Structural invariants that must hold in every reachable state.
    pub fn invariants_hold(&self) -> bool {
        let selected_ok = self.state < RequestState::PropertiesSelected || !self.selected_parcels.is_empty();
        let decided = matches!(
            self.state,
            RequestState::Approved | RequestState::Rejected | RequestState::Issued
        );
        let stamps_ok = self.timestamps.len() as u64 == self.version
            && self.timestamps.last().map(|s| s.state) == Some(self.state);
        selected_ok && decided == self.decision.is_some() && stamps_ok
    }
}
