//! NourID+ platform runtime: simulated registries, synthetic data, the
//! HTTP service with its durable store, and the operator CLI.

pub mod accounts;
pub mod accuracy;
pub mod config;
pub mod registry;
pub mod service;
pub mod sim;
pub mod scenario;
pub mod storage;
pub mod store;
