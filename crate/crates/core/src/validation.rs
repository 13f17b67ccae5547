//! Rule-based identity and document validation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::ids::{Cin, validate_cin_format};
use crate::records::{CitizenIdentity, PropertyDocument, integrity_code};
use crate::template::{FaceTemplate, MatchResult, match_templates};

/// Documents and identity cards older than this fail validation.
pub const VALIDITY_YEARS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Named checks plus the verdict derived from them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub subject_id: String,
    pub checks: Vec<CheckOutcome>,
    pub verdict: Verdict,
}

impl ValidationReport {
    pub fn from_checks(subject_id: impl Into<String>, checks: Vec<CheckOutcome>) -> Self {
        let verdict = if checks.iter().all(|c| c.passed) {
            Verdict::Valid
        } else {
            Verdict::Invalid
        };
        ValidationReport {
            subject_id: subject_id.into(),
            checks,
            verdict,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.verdict == Verdict::Valid
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Verdict agrees with the checks.
    pub fn is_consistent(&self) -> bool {
        self.is_valid() == self.checks.iter().all(|c| c.passed)
    }
}

fn outcome(name: &str, passed: bool, detail: impl Into<String>) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail: detail.into(),
    }
}

fn oldest_valid(today: NaiveDate) -> NaiveDate {
    today
        .checked_sub_months(Months::new(12 * VALIDITY_YEARS))
        .unwrap_or(NaiveDate::MIN)
}

pub const CHECK_INTEGRITY: &str = "integrity";
pub const CHECK_NOT_EXPIRED: &str = "not_expired";
pub const CHECK_OWNER: &str = "owner";
pub const CHECK_REQUIRED_FIELDS: &str = "required_fields";

/// Runs the document checks. Failures are report content, never errors.
pub fn validate_document(doc: &PropertyDocument, expected_owner_cin: &Cin, today: NaiveDate) -> ValidationReport {
    let mut checks = Vec::with_capacity(4);

    let recomputed = integrity_code(&doc.parcel_id, doc.kind, &doc.fields);
    checks.push(outcome(
        CHECK_INTEGRITY,
        recomputed == doc.integrity_code,
        if recomputed == doc.integrity_code {
            String::from("integrity code matches")
        } else {
            format!("stored {} recomputed {}", doc.integrity_code, recomputed)
        },
    ));

    let expiry = match doc.field("issue_date").map(|d| d.parse::<NaiveDate>()) {
        Some(Ok(issued)) if issued > today => (false, format!("issue date {issued} is in the future")),
        Some(Ok(issued)) if issued < oldest_valid(today) => {
            (false, format!("issued {issued}, older than {VALIDITY_YEARS} years"))
        }
        Some(Ok(issued)) => (true, format!("issued {issued}")),
        Some(Err(_)) => (false, String::from("issue date unparseable")),
        None => (false, String::from("issue date missing")),
    };
    checks.push(outcome(CHECK_NOT_EXPIRED, expiry.0, expiry.1));

    let owner = doc.field("owner_cin");
    checks.push(outcome(
        CHECK_OWNER,
        owner == Some(expected_owner_cin.as_str()),
        match owner {
            Some(o) if o == expected_owner_cin.as_str() => String::from("owner matches"),
            Some(o) => format!("owner {o} differs from {expected_owner_cin}"),
            None => String::from("owner field missing"),
        },
    ));

    let missing: Vec<&str> = doc
        .kind
        .required_fields()
        .iter()
        .copied()
        .filter(|k| doc.field(k).is_none_or(|v| v.trim().is_empty()))
        .collect();
    checks.push(outcome(
        CHECK_REQUIRED_FIELDS,
        missing.is_empty(),
        if missing.is_empty() {
            String::from("all required fields present")
        } else {
            format!("missing: {}", missing.join(", "))
        },
    ));

    ValidationReport::from_checks(doc.parcel_id.as_str(), checks)
}

/// What a citizen uploads at the identity step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CinSubmission {
    pub cin: String,
    pub full_name: String,
    pub date_of_birth: NaiveDate,
    pub probe_template: FaceTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub report: ValidationReport,
    pub match_result: Option<MatchResult>,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.report.is_valid() && self.match_result.is_some_and(|m| m.is_match)
    }
}

fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Compares a submission against the registry record for the same CIN.
pub fn verify_identity(
    submission: &CinSubmission,
    record: &CitizenIdentity,
    threshold: f64,
    today: NaiveDate,
) -> IdentityCheck {
    let mut checks = Vec::with_capacity(5);
    let cin_ok = match validate_cin_format(&submission.cin) {
        Ok(cin) => cin == record.cin,
        Err(_) => false,
    };
    checks.push(outcome("cin", cin_ok, if cin_ok { "cin matches record" } else { "cin differs from record" }));
    let name_ok = normalize_name(&submission.full_name) == normalize_name(&record.full_name);
    checks.push(outcome("full_name", name_ok, if name_ok { "name matches" } else { "name differs" }));
    let dob_ok = submission.date_of_birth == record.date_of_birth;
    checks.push(outcome("date_of_birth", dob_ok, if dob_ok { "date of birth matches" } else { "date of birth differs" }));
    let card_ok = record.cin_expiry >= today;
    checks.push(outcome(
        "cin_not_expired",
        card_ok,
        format!("card expires {}", record.cin_expiry),
    ));
    let match_result = match_templates(&submission.probe_template, &record.reference_template, threshold).ok();
    checks.push(match match_result {
        Some(m) => outcome("biometric", m.is_match, format!("score {:.4} threshold {:.4}", m.score, m.threshold)),
        None => outcome("biometric", false, "template dimension mismatch"),
    });
    IdentityCheck {
        report: ValidationReport::from_checks(record.cin.as_str(), checks),
        match_result,
    }
}
