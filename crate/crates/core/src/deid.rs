//! Digital Energy ID synthesis, grammar and signed QR payloads.
//!
//! Grammar (all uppercase ASCII):
//!
//! ```text
//! deid   = "DE-" region "-" ptype "-" body "-" check
//! region = 2DIGIT                    ; from the parcel's title number
//! ptype  = "H" / "A" / "C"           ; household, agricultural, commercial
//! body   = 16( %x41-5A / %x32-37 )   ; RFC 4648 base32 of 10 hash bytes
//! check  = 2DIGIT                    ; MOD 97-10 over "DE" region ptype body
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use data_encoding::BASE32_NOPAD;
use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkdigit::{compute_check_digits, verify_check_digits};
use crate::ids::{Cin, ParcelId, PropertyType};
use crate::time::Millis;

pub const URI_PREFIX: &str = "nourid://deid/";
/// Bytes of HMAC-SHA256 carried in the URI.
pub const URI_MAC_LEN: usize = 10;
const BODY_HASH_LEN: usize = 10;
const BODY_LEN: usize = 16;
const DEID_LEN: usize = 3 + 2 + 1 + 1 + 1 + BODY_LEN + 1 + 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeidError {
    #[error("malformed DE-ID {0:?}")]
    Malformed(String),
    #[error("DE-ID check digits do not verify")]
    CheckDigits,
}

/// Issued identifier binding a verified identity to one parcel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitalEnergyId {
    pub deid: String,
    pub cin: Cin,
    pub parcel_id: ParcelId,
    pub property_type: PropertyType,
    pub nonce: u64,
    pub issued_at: Millis,
    pub check_digits: u8,
}

fn frame(hasher: &mut Sha256, bytes: &[u8]) {
    hasher.update((bytes.len() as u32).to_be_bytes());
    hasher.update(bytes);
}

/// SHA-256 over length-prefixed `cin`, `parcel_id` and the big-endian nonce.
pub fn body_digest(cin: &Cin, parcel_id: &ParcelId, nonce: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    frame(&mut hasher, cin.as_str().as_bytes());
    frame(&mut hasher, parcel_id.as_str().as_bytes());
    frame(&mut hasher, &nonce.to_be_bytes());
    hasher.finalize().into()
}

/// Canonical DE-ID string for the inputs. Deterministic.
pub fn generate_deid(cin: &Cin, parcel_id: &ParcelId, property_type: PropertyType, nonce: u64) -> String {
    let digest = body_digest(cin, parcel_id, nonce);
    let body = BASE32_NOPAD.encode(&digest[..BODY_HASH_LEN]);
    let unchecked = format!("DE-{}-{}-{}", parcel_id.region(), property_type.letter(), body);
    let check = compute_check_digits(&unchecked).expect("alphanumeric by construction");
    format!("{unchecked}-{check:02}")
}

impl DigitalEnergyId {
    pub fn issue(
        cin: Cin,
        parcel_id: ParcelId,
        property_type: PropertyType,
        nonce: u64,
        issued_at: Millis,
    ) -> Self {
        let deid = generate_deid(&cin, &parcel_id, property_type, nonce);
        let check_digits = deid[deid.len() - 2..].parse().expect("two digits");
        DigitalEnergyId {
            deid,
            cin,
            parcel_id,
            property_type,
            nonce,
            issued_at,
            check_digits,
        }
    }

    /// Recomputes the string from the bound inputs.
    pub fn regenerates(&self) -> bool {
        generate_deid(&self.cin, &self.parcel_id, self.property_type, self.nonce) == self.deid
    }
}

/// Components of a well-formed DE-ID.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDeid {
    pub region: String,
    pub property_type: PropertyType,
    pub body: String,
    pub check_digits: u8,
}

impl fmt::Display for ParsedDeid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "DE-{}-{}-{}-{:02}",
            self.region,
            self.property_type.letter(),
            self.body,
            self.check_digits
        )
    }
}

fn is_base32(b: u8) -> bool {
    b.is_ascii_uppercase() || (b'2'..=b'7').contains(&b)
}

/// Parses and checks a DE-ID; accepts exactly the generator's output language.
pub fn parse_deid(s: &str) -> Result<ParsedDeid, DeidError> {
    let malformed = || DeidError::Malformed(String::from(s));
    let b = s.as_bytes();
    if b.len() != DEID_LEN || !s.starts_with("DE-") {
        return Err(malformed());
    }
    let region = &b[3..5];
    let ptype = b[6];
    let body = &b[8..8 + BODY_LEN];
    let check = &b[8 + BODY_LEN + 1..];
    let shape = b[5] == b'-'
        && b[7] == b'-'
        && b[8 + BODY_LEN] == b'-'
        && region.iter().all(u8::is_ascii_digit)
        && body.iter().copied().all(is_base32)
        && check.iter().all(u8::is_ascii_digit);
    if !shape {
        return Err(malformed());
    }
    let property_type = PropertyType::from_letter(ptype as char).ok_or_else(malformed)?;
    // Ten bytes encode to exactly sixteen symbols, so every body decodes.
    BASE32_NOPAD.decode(body).map_err(|_| malformed())?;
    let check_digits = (check[0] - b'0') * 10 + (check[1] - b'0');
    if !verify_check_digits(&s[..8 + BODY_LEN], check_digits).map_err(|_| malformed())? {
        return Err(DeidError::CheckDigits);
    }
    Ok(ParsedDeid {
        region: String::from(&s[3..5]),
        property_type,
        body: String::from(&s[8..8 + BODY_LEN]),
        check_digits,
    })
}

/// 32-byte symmetric issuance key.
#[derive(Clone, PartialEq, Eq)]
pub struct IssuanceKey([u8; 32]);

impl IssuanceKey {
    pub fn new(bytes: [u8; 32]) -> Self {
        IssuanceKey(bytes)
    }

    pub fn from_hex(hex: &str) -> Option<Self> {
        let bytes = data_encoding::HEXLOWER_PERMISSIVE.decode(hex.trim().as_bytes()).ok()?;
        Some(IssuanceKey(bytes.try_into().ok()?))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for IssuanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("IssuanceKey(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrPayload {
    pub uri: String,
    /// Full HMAC-SHA256 tag, kept server-side.
    pub mac: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PayloadError {
    #[error("payload signature does not verify")]
    BadSignature,
    #[error("payload is malformed")]
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedPayload {
    pub deid: String,
    pub issued_at_secs: u64,
}

type HmacSha256 = Hmac<Sha256>;

fn mac_over(key: &IssuanceKey) -> HmacSha256 {
    <HmacSha256 as KeyInit>::new_from_slice(key.as_bytes()).expect("any key length")
}

pub fn sign_payload(deid: &str, issued_at_secs: u64, key: &IssuanceKey) -> QrPayload {
    let pre = format!("{URI_PREFIX}{deid}?iat={issued_at_secs}");
    let mut mac = mac_over(key);
    mac.update(pre.as_bytes());
    let tag = mac.finalize().into_bytes();
    let uri = format!("{pre}&sig={}", BASE32_NOPAD.encode(&tag[..URI_MAC_LEN]));
    QrPayload {
        uri,
        mac: tag.to_vec(),
    }
}

/// Checks structure, DE-ID grammar and the truncated MAC of a scanned URI.
pub fn verify_payload(uri: &[u8], key: &IssuanceKey) -> Result<VerifiedPayload, PayloadError> {
    let uri = core::str::from_utf8(uri).map_err(|_| PayloadError::Malformed)?;
    let rest = uri.strip_prefix(URI_PREFIX).ok_or(PayloadError::Malformed)?;
    let (deid, query) = rest.split_once('?').ok_or(PayloadError::Malformed)?;
    let query = query.strip_prefix("iat=").ok_or(PayloadError::Malformed)?;
    let (iat, sig) = query.split_once("&sig=").ok_or(PayloadError::Malformed)?;
    let canonical_iat = !iat.is_empty()
        && iat.len() <= 19
        && iat.bytes().all(|b| b.is_ascii_digit())
        && (iat == "0" || !iat.starts_with('0'));
    if !canonical_iat {
        return Err(PayloadError::Malformed);
    }
    parse_deid(deid).map_err(|_| PayloadError::Malformed)?;
    let tag = BASE32_NOPAD
        .decode(sig.as_bytes())
        .map_err(|_| PayloadError::Malformed)?;
    if tag.len() != URI_MAC_LEN {
        return Err(PayloadError::Malformed);
    }
    let pre = &uri[..uri.len() - sig.len() - "&sig=".len()];
    let mut mac = mac_over(key);
    mac.update(pre.as_bytes());
    mac.verify_truncated_left(&tag)
        .map_err(|_| PayloadError::BadSignature)?;
    Ok(VerifiedPayload {
        deid: String::from(deid),
        issued_at_secs: iat.parse().map_err(|_| PayloadError::Malformed)?,
    })
}
