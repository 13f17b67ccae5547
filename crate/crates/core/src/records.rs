//! Registry record types shared by the simulator, the validator and the service.

use alloc::collections::BTreeMap;
use alloc::string::String;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ids::{Cin, ParcelId, PropertyType};
use crate::template::FaceTemplate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitizenIdentity {
    pub cin: Cin,
    pub full_name: String,
    pub date_of_birth: NaiveDate,
    pub reference_template: FaceTemplate,
    pub cin_expiry: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub region: String,
    pub locality: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parcel {
    pub parcel_id: ParcelId,
    pub owner_cin: Cin,
    pub property_type: PropertyType,
    pub area_m2: f64,
    pub location: Location,
}

/// Meter bound to a parcel by the utility operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterBinding {
    pub parcel_id: ParcelId,
    pub meter_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentKind {
    CadastralPlan,
    OwnershipCertificate,
}

impl DocumentKind {
    pub const ALL: [DocumentKind; 2] = [DocumentKind::CadastralPlan, DocumentKind::OwnershipCertificate];

    pub fn as_str(self) -> &'static str {
        match self {
            DocumentKind::CadastralPlan => "cadastral_plan",
            DocumentKind::OwnershipCertificate => "ownership_certificate",
        }
    }

    /// Payload keys every document of this kind must carry.
    pub fn required_fields(self) -> &'static [&'static str] {
        match self {
            DocumentKind::CadastralPlan => {
                &["issuer", "issue_date", "owner_cin", "boundary_summary", "area_m2"]
            }
            DocumentKind::OwnershipCertificate => {
                &["issuer", "issue_date", "owner_cin", "owner_name", "owner_attestation"]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    IntegrityMismatch,
    ExpiredIssueDate,
    OwnerMismatch,
}

/// Ground truth recorded by defect injection.
///
/// A defect that is not `detectable` was injected as a self-consistent
/// forgery: the payload was altered and the integrity code re-sealed, so no
/// rule can observe it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefectTag {
    pub kind: DefectKind,
    pub detectable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyDocument {
    pub parcel_id: ParcelId,
    pub kind: DocumentKind,
    pub fields: BTreeMap<String, String>,
    pub integrity_code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect: Option<DefectTag>,
}

impl PropertyDocument {
    /// Builds a document and seals it with its integrity code.
    pub fn sealed(parcel_id: ParcelId, kind: DocumentKind, fields: BTreeMap<String, String>) -> Self {
        let integrity_code = integrity_code(&parcel_id, kind, &fields);
        PropertyDocument {
            parcel_id,
            kind,
            fields,
            integrity_code,
            defect: None,
        }
    }

    pub fn reseal(&mut self) {
        self.integrity_code = integrity_code(&self.parcel_id, self.kind, &self.fields);
    }

    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }
}

fn frame(hasher: &mut Sha256, bytes: &[u8]) {
    hasher.update((bytes.len() as u32).to_be_bytes());
    hasher.update(bytes);
}

/// First 8 bytes of SHA-256 over the length-prefixed parcel id, kind and
/// key-sorted payload, lowercase hex.
pub fn integrity_code(parcel_id: &ParcelId, kind: DocumentKind, fields: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    frame(&mut hasher, parcel_id.as_str().as_bytes());
    frame(&mut hasher, kind.as_str().as_bytes());
    for (k, v) in fields {
        frame(&mut hasher, k.as_bytes());
        frame(&mut hasher, v.as_bytes());
    }
    let digest = hasher.finalize();
    data_encoding::HEXLOWER.encode(&digest[..8])
}
