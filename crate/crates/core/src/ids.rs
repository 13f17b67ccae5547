//! Identity and cadastral identifiers.

use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Why a raw CIN string was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "snake_case")]
pub enum CinFormatError {
    #[error("CIN is empty")]
    Empty,
    #[error("CIN must be 6 to 8 characters")]
    Length,
    #[error("CIN must be 1-2 letters followed by 5-6 digits")]
    PatternMismatch,
}

impl CinFormatError {
    pub fn reason(self) -> &'static str {
        match self {
            CinFormatError::Empty => "empty",
            CinFormatError::Length => "length",
            CinFormatError::PatternMismatch => "pattern_mismatch",
        }
    }
}

/// Checks `raw` against `^[A-Z]{1,2}[0-9]{5,6}$` after trimming and
/// uppercasing, returning the canonical form.
pub fn validate_cin_format(raw: &str) -> Result<Cin, CinFormatError> {
    let canonical = raw.trim().to_ascii_uppercase();
    if canonical.is_empty() {
        return Err(CinFormatError::Empty);
    }
    if !(6..=8).contains(&canonical.len()) {
        return Err(CinFormatError::Length);
    }
    let bytes = canonical.as_bytes();
    let letters = bytes.iter().take_while(|b| b.is_ascii_uppercase()).count();
    let digits = &bytes[letters..];
    let ok = (1..=2).contains(&letters)
        && (5..=6).contains(&digits.len())
        && digits.iter().all(u8::is_ascii_digit);
    if !ok {
        return Err(CinFormatError::PatternMismatch);
    }
    Ok(Cin(canonical))
}

/// Canonical national identity card number.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Cin(String);

impl Cin {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Cin {
    type Error = CinFormatError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        validate_cin_format(&value)
    }
}

impl FromStr for Cin {
    type Err = CinFormatError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        validate_cin_format(s)
    }
}

impl From<Cin> for String {
    fn from(value: Cin) -> Self {
        value.0
    }
}

impl fmt::Display for Cin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parcel id must look like TF-<2 digits>-<6 digits>: {0:?}")]
pub struct ParcelIdError(pub String);

/// Land title identifier, `TF-<region:2 digits>-<serial:6 digits>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ParcelId(String);

impl ParcelId {
    pub fn new(region: u8, serial: u32) -> Self {
        assert!(region < 100 && serial < 1_000_000);
        ParcelId(alloc::format!("TF-{region:02}-{serial:06}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Two-digit region code.
    pub fn region(&self) -> &str {
        &self.0[3..5]
    }

    pub fn serial(&self) -> &str {
        &self.0[6..]
    }
}

impl FromStr for ParcelId {
    type Err = ParcelIdError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = s.as_bytes();
        let ok = b.len() == 12
            && s.starts_with("TF-")
            && b[5] == b'-'
            && b[3..5].iter().all(u8::is_ascii_digit)
            && b[6..].iter().all(u8::is_ascii_digit);
        if ok {
            Ok(ParcelId(s.to_string()))
        } else {
            Err(ParcelIdError(s.to_string()))
        }
    }
}

impl TryFrom<String> for ParcelId {
    type Error = ParcelIdError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<ParcelId> for String {
    fn from(value: ParcelId) -> Self {
        value.0
    }
}

impl fmt::Display for ParcelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The three ownership profiles served by the platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyType {
    Household,
    Agricultural,
    Commercial,
}

impl PropertyType {
    pub const ALL: [PropertyType; 3] = [
        PropertyType::Household,
        PropertyType::Agricultural,
        PropertyType::Commercial,
    ];

    /// Letter used inside a DE-ID.
    pub fn letter(self) -> char {
        match self {
            PropertyType::Household => 'H',
            PropertyType::Agricultural => 'A',
            PropertyType::Commercial => 'C',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'H' => Some(PropertyType::Household),
            'A' => Some(PropertyType::Agricultural),
            'C' => Some(PropertyType::Commercial),
            _ => None,
        }
    }

    /// Numeric code used as a model feature.
    pub fn code(self) -> u8 {
        match self {
            PropertyType::Household => 0,
            PropertyType::Agricultural => 1,
            PropertyType::Commercial => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PropertyType::Household => "household",
            PropertyType::Agricultural => "agricultural",
            PropertyType::Commercial => "commercial",
        }
    }
}
