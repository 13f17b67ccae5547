//! In-memory request store.
//!
//! Mutations are split into `plan_*` (pure: validate and produce the audit
//! events that would be appended) and [`RequestBook::commit`], so a caller
//! can make the events durable before they take effect. The convenience
//! methods without the prefix do both.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::audit::{Actor, AuditEvent, AuditPayload, ReplayError, check_link, link_after};
use super::request::{DeIdRequest, DecisionVerdict, OfficerDecision, WorkflowEvent};
use super::state::RequestState;
use super::WorkflowError;
use crate::deid::DigitalEnergyId;
use crate::ids::{Cin, ParcelId, PropertyType};
use crate::time::Millis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSummary {
    pub request_id: u64,
    pub account_id: String,
    pub cin: Option<Cin>,
    pub state: RequestState,
    pub selected_parcels: Vec<ParcelId>,
    pub submitted_at: Option<Millis>,
    pub version: u64,
}

impl From<&DeIdRequest> for RequestSummary {
    fn from(r: &DeIdRequest) -> Self {
        RequestSummary {
            request_id: r.request_id,
            account_id: r.account_id.clone(),
            cin: r.cin.clone(),
            state: r.state,
            selected_parcels: r.selected_parcels.clone(),
            submitted_at: r.submitted_at(),
            version: r.version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<RequestSummary>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "StoredBook", into = "StoredBook")]
pub struct RequestBook {
    requests: BTreeMap<u64, DeIdRequest>,
    audit: BTreeMap<u64, Vec<AuditEvent>>,
    /// (submitted_at, request_id) of every pending request.
    queue: BTreeSet<(Millis, u64)>,
    issued: BTreeMap<(Cin, ParcelId), String>,
    deids: BTreeMap<String, DigitalEnergyId>,
    next_request_id: u64,
    next_nonce: u64,
}

/// Serialized form. The queue and issuance indexes are derived from the
/// requests on load.
#[derive(Serialize, Deserialize)]
struct StoredBook {
    requests: BTreeMap<u64, DeIdRequest>,
    audit: BTreeMap<u64, Vec<AuditEvent>>,
    next_request_id: u64,
    next_nonce: u64,
}

impl From<RequestBook> for StoredBook {
    fn from(b: RequestBook) -> Self {
        StoredBook {
            requests: b.requests,
            audit: b.audit,
            next_request_id: b.next_request_id,
            next_nonce: b.next_nonce,
        }
    }
}

impl From<StoredBook> for RequestBook {
    fn from(s: StoredBook) -> Self {
        let mut book = RequestBook {
            requests: BTreeMap::new(),
            audit: s.audit,
            next_request_id: s.next_request_id,
            next_nonce: s.next_nonce,
            ..Default::default()
        };
        for (id, r) in &s.requests {
            if r.state == RequestState::PendingApproval {
                book.queue.insert((r.submitted_at().unwrap_or_default(), *id));
            }
            for d in &r.deids {
                book.issued.insert((d.cin.clone(), d.parcel_id.clone()), d.deid.clone());
                book.deids.insert(d.deid.clone(), d.clone());
            }
        }
        book.requests = s.requests;
        book
    }
}

impl PartialEq for RequestBook {
    fn eq(&self, other: &Self) -> bool {
        self.requests == other.requests
            && self.audit == other.audit
            && self.queue == other.queue
            && self.issued == other.issued
            && self.deids == other.deids
            && self.next_request_id == other.next_request_id
            && self.next_nonce == other.next_nonce
    }
}

impl RequestBook {
    pub fn new() -> Self {
        RequestBook {
            next_request_id: 1,
            next_nonce: 1,
            ..Default::default()
        }
    }

    /// Rebuilds a book from audit events in log order.
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a AuditEvent>) -> Result<Self, WorkflowError> {
        let mut book = RequestBook::new();
        for e in events {
            book.commit(core::slice::from_ref(e))?;
        }
        Ok(book)
    }

    pub fn get(&self, request_id: u64) -> Option<&DeIdRequest> {
        self.requests.get(&request_id)
    }

    pub fn requests(&self) -> impl Iterator<Item = &DeIdRequest> {
        self.requests.values()
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn requests_for_account<'a>(&'a self, account_id: &'a str) -> impl Iterator<Item = &'a DeIdRequest> {
        self.requests.values().filter(move |r| r.account_id == account_id)
    }

    pub fn audit_trail(&self, request_id: u64) -> Result<&[AuditEvent], WorkflowError> {
        self.audit
            .get(&request_id)
            .map(Vec::as_slice)
            .ok_or(WorkflowError::NotFound(request_id))
    }

    /// Every audit event, grouped by request.
    pub fn all_events(&self) -> impl Iterator<Item = &AuditEvent> {
        self.audit.values().flatten()
    }

    pub fn deid(&self, deid: &str) -> Option<&DigitalEnergyId> {
        self.deids.get(deid)
    }

    pub fn issued_deids(&self) -> impl Iterator<Item = &DigitalEnergyId> {
        self.deids.values()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    fn request(&self, request_id: u64) -> Result<&DeIdRequest, WorkflowError> {
        self.requests.get(&request_id).ok_or(WorkflowError::NotFound(request_id))
    }

    fn check_version(request: &DeIdRequest, expected: Option<u64>) -> Result<(), WorkflowError> {
        match expected {
            Some(v) if v != request.version => Err(WorkflowError::VersionConflict {
                expected: v,
                actual: request.version,
            }),
            _ => Ok(()),
        }
    }

    /// Book-level rules: open-request uniqueness per (cin, parcel) and
    /// single issuance per (cin, parcel).
    fn check_context(&self, request: &DeIdRequest, event: &WorkflowEvent) -> Result<(), WorkflowError> {
        match event {
            WorkflowEvent::PropertiesSelected { parcels } => {
                let Some(cin) = &request.cin else { return Ok(()) };
                for parcel_id in parcels {
                    let clash = self.requests.values().any(|other| {
                        other.request_id != request.request_id
                            && other.state != RequestState::Rejected
                            && other.cin.as_ref() == Some(cin)
                            && other.selected_parcels.contains(parcel_id)
                    }) || self.issued.contains_key(&(cin.clone(), parcel_id.clone()));
                    if clash {
                        return Err(WorkflowError::DuplicateRequest {
                            cin: cin.clone(),
                            parcel_id: parcel_id.clone(),
                        });
                    }
                }
                Ok(())
            }
            WorkflowEvent::Issued { deids } => {
                for d in deids {
                    if self.issued.contains_key(&(d.cin.clone(), d.parcel_id.clone()))
                        || self.deids.contains_key(&d.deid)
                    {
                        return Err(WorkflowError::DuplicateRequest {
                            cin: d.cin.clone(),
                            parcel_id: d.parcel_id.clone(),
                        });
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn plan_create(&self, account_id: &str, at: Millis) -> Vec<AuditEvent> {
        let event = AuditEvent::new(
            self.next_request_id,
            1,
            Actor::Citizen(String::from(account_id)),
            AuditPayload::Created {
                account_id: String::from(account_id),
            },
            at,
            super::GENESIS_HASH,
        );
        alloc::vec![event]
    }

    /// Validates `event` against the request and the book and returns the
    /// audit event that records it.
    pub fn plan_transition(
        &self,
        request_id: u64,
        event: WorkflowEvent,
        actor: Actor,
        expected_version: Option<u64>,
        at: Millis,
    ) -> Result<Vec<AuditEvent>, WorkflowError> {
        let request = self.request(request_id)?;
        Self::check_version(request, expected_version)?;
        request.apply(&event, at)?;
        self.check_context(request, &event)?;
        let (seq, prev) = link_after(&self.audit[&request_id]);
        Ok(alloc::vec![AuditEvent::new(
            request_id,
            seq,
            actor,
            AuditPayload::Transition(event),
            at,
            &prev,
        )])
    }

    /// Appends planned events. Each one is re-checked against the chain,
    /// the transition table and the book rules, so replaying a log through
    /// here cannot produce a state the live path would refuse.
    pub fn commit(&mut self, events: &[AuditEvent]) -> Result<(), WorkflowError> {
        for event in events {
            self.commit_one(event)?;
        }
        Ok(())
    }

    fn commit_one(&mut self, event: &AuditEvent) -> Result<(), WorkflowError> {
        let id = event.request_id;
        match &event.payload {
            AuditPayload::Created { account_id } => {
                if self.requests.contains_key(&id) {
                    return Err(WorkflowError::Audit(ReplayError::Sequence {
                        expected: self.audit[&id].len() as u64 + 1,
                        found: event.sequence_no,
                    }));
                }
                check_link(None, event).map_err(WorkflowError::Audit)?;
                let request = DeIdRequest::draft(id, account_id.clone(), event.occurred_at);
                self.requests.insert(id, request);
                self.audit.insert(id, alloc::vec![event.clone()]);
                self.next_request_id = self.next_request_id.max(id + 1);
            }
            AuditPayload::Transition(transition) => {
                let current = self.request(id)?;
                check_link(self.audit[&id].last(), event).map_err(WorkflowError::Audit)?;
                let next = current.apply(transition, event.occurred_at)?;
                self.check_context(current, transition)?;
                let was_pending = current.state == RequestState::PendingApproval;
                if was_pending {
                    self.queue.remove(&(current.submitted_at().unwrap_or_default(), id));
                }
                if next.state == RequestState::PendingApproval {
                    self.queue.insert((event.occurred_at, id));
                }
                if let WorkflowEvent::Issued { deids } = transition {
                    for d in deids {
                        self.issued.insert((d.cin.clone(), d.parcel_id.clone()), d.deid.clone());
                        self.deids.insert(d.deid.clone(), d.clone());
                        self.next_nonce = self.next_nonce.max(d.nonce + 1);
                    }
                }
                self.requests.insert(id, next);
                self.audit.get_mut(&id).expect("request exists").push(event.clone());
            }
        }
        Ok(())
    }

    pub fn create(&mut self, account_id: &str, at: Millis) -> u64 {
        let events = self.plan_create(account_id, at);
        let id = events[0].request_id;
        self.commit(&events).expect("fresh id");
        id
    }

    pub fn transition(
        &mut self,
        request_id: u64,
        event: WorkflowEvent,
        actor: Actor,
        expected_version: Option<u64>,
        at: Millis,
    ) -> Result<&DeIdRequest, WorkflowError> {
        let events = self.plan_transition(request_id, event, actor, expected_version, at)?;
        self.commit(&events)?;
        Ok(&self.requests[&request_id])
    }

    /// Plans property selection after checking each parcel's owner through
    /// `owner_of`.
    pub fn plan_attach_properties(
        &self,
        request_id: u64,
        parcel_ids: &[ParcelId],
        owner_of: impl Fn(&ParcelId) -> Option<Cin>,
        expected_version: Option<u64>,
        at: Millis,
    ) -> Result<Vec<AuditEvent>, WorkflowError> {
        let request = self.request(request_id)?;
        if request.state != RequestState::IdentityVerified {
            return Err(WorkflowError::InvalidTransition {
                state: request.state,
                event: super::EventKind::PropertiesSelected,
            });
        }
        if parcel_ids.is_empty() {
            return Err(WorkflowError::EmptySelection);
        }
        let cin = request.cin.as_ref();
        if let Some(p) = parcel_ids.iter().find(|p| owner_of(p).as_ref() != cin) {
            return Err(WorkflowError::NotOwner(p.clone()));
        }
        let mut parcels = parcel_ids.to_vec();
        parcels.sort();
        parcels.dedup();
        let actor = Actor::Citizen(request.account_id.clone());
        self.plan_transition(
            request_id,
            WorkflowEvent::PropertiesSelected { parcels },
            actor,
            expected_version,
            at,
        )
    }

    pub fn attach_properties(
        &mut self,
        request_id: u64,
        parcel_ids: &[ParcelId],
        owner_of: impl Fn(&ParcelId) -> Option<Cin>,
        at: Millis,
    ) -> Result<&DeIdRequest, WorkflowError> {
        let events = self.plan_attach_properties(request_id, parcel_ids, owner_of, None, at)?;
        self.commit(&events)?;
        Ok(&self.requests[&request_id])
    }

    pub fn submit_for_approval(&mut self, request_id: u64, at: Millis) -> Result<&DeIdRequest, WorkflowError> {
        let actor = Actor::Citizen(self.request(request_id)?.account_id.clone());
        self.transition(request_id, WorkflowEvent::Submitted, actor, None, at)
    }

    /// Pending requests oldest-first, `page` counted from 0.
    pub fn list_pending(&self, page: usize, page_size: usize) -> Page {
        let page_size = page_size.max(1);
        let items = self
            .queue
            .iter()
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .map(|(_, id)| RequestSummary::from(&self.requests[id]))
            .collect();
        Page {
            page,
            page_size,
            total: self.queue.len(),
            items,
        }
    }

    pub fn plan_decide(
        &self,
        officer_id: &str,
        request_id: u64,
        verdict: DecisionVerdict,
        reason: &str,
        expected_version: u64,
        at: Millis,
    ) -> Result<Vec<AuditEvent>, WorkflowError> {
        let request = self.request(request_id)?;
        Self::check_version(request, Some(expected_version))?;
        let decision = OfficerDecision {
            officer_id: String::from(officer_id),
            verdict,
            reason: String::from(reason.trim()),
            decided_at: at,
        };
        let event = match verdict {
            DecisionVerdict::Approve => WorkflowEvent::Approved { decision },
            DecisionVerdict::Reject => WorkflowEvent::Rejected { decision },
        };
        self.plan_transition(
            request_id,
            event,
            Actor::Officer(String::from(officer_id)),
            Some(expected_version),
            at,
        )
    }

    pub fn decide(
        &mut self,
        officer_id: &str,
        request_id: u64,
        verdict: DecisionVerdict,
        reason: &str,
        expected_version: u64,
        at: Millis,
    ) -> Result<&DeIdRequest, WorkflowError> {
        let events = self.plan_decide(officer_id, request_id, verdict, reason, expected_version, at)?;
        self.commit(&events)?;
        Ok(&self.requests[&request_id])
    }

    /// Plans issuance of one DE-ID per selected parcel with fresh nonces.
    pub fn plan_issue(
        &self,
        request_id: u64,
        property_type_of: impl Fn(&ParcelId) -> Option<PropertyType>,
        at: Millis,
    ) -> Result<Vec<AuditEvent>, WorkflowError> {
        let request = self.request(request_id)?;
        if request.state != RequestState::Approved {
            return Err(WorkflowError::InvalidTransition {
                state: request.state,
                event: super::EventKind::Issued,
            });
        }
        let cin = request
            .cin
            .clone()
            .ok_or_else(|| WorkflowError::EvidenceMissing(String::from("verified CIN")))?;
        let mut deids = Vec::with_capacity(request.selected_parcels.len());
        for (i, parcel_id) in request.selected_parcels.iter().enumerate() {
            let property_type = property_type_of(parcel_id)
                .ok_or_else(|| WorkflowError::EvidenceMissing(alloc::format!("property type of {parcel_id}")))?;
            deids.push(DigitalEnergyId::issue(
                cin.clone(),
                parcel_id.clone(),
                property_type,
                self.next_nonce + i as u64,
                at,
            ));
        }
        self.plan_transition(request_id, WorkflowEvent::Issued { deids }, Actor::System, None, at)
    }

    pub fn issue(
        &mut self,
        request_id: u64,
        property_type_of: impl Fn(&ParcelId) -> Option<PropertyType>,
        at: Millis,
    ) -> Result<&DeIdRequest, WorkflowError> {
        let events = self.plan_issue(request_id, property_type_of, at)?;
        self.commit(&events)?;
        Ok(&self.requests[&request_id])
    }
}
