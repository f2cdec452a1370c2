//! Fine-grained, attribute-based read access to multi-party process messages.
//!
//! A data owner splits a message into slices, each guarded by a monotone
//! attribute policy. The stateless data manager ([`sdm`]) encrypts every slice
//! under a fresh per-message master pair, stores the resulting file in a
//! content-addressed store ([`cas`]) and registers its locator in the
//! ledger-backed registry ([`ledger`]). The stateless key manager ([`skm`])
//! issues attribute-bound keys from on-chain reader attributes and returns
//! exactly the slices a reader's key opens, with the salts needed to check
//! them against the stored hashes.

pub mod abe;
pub mod actors;
pub mod auth;
pub mod cas;
pub mod codec;
pub mod deployment;
pub mod ledger;
pub mod message;
pub mod pkcrypto;
pub mod policy;
pub mod rng;
pub mod scenario;
pub mod sdm;
pub mod service;
pub mod skm;
pub mod wire;
