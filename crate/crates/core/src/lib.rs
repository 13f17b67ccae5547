//! Algorithmic core of the NourID+ digital energy identity platform.
//!
//! Everything here is pure and allocation-only: identifiers and check
//! digits, QR symbol encoding, DE-ID synthesis and signing, biometric score
//! matching, document validation, the request workflow state machine, and
//! consumption analytics with a gradient-boosted forecaster. IO, clocks and
//! randomness-driven simulation live in the `nourid` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analytics;
pub mod checkdigit;
pub mod deid;
pub mod ids;
pub mod qr;
pub mod records;
pub mod template;
pub mod time;
pub mod validation;
pub mod workflow;

pub use ids::{Cin, ParcelId, PropertyType};
pub use time::Millis;
