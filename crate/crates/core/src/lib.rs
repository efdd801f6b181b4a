//! Enforcement of choreography control flow on a simulated append-only ledger,
//! with confidential payloads protected by multi-authority attribute-based
//! encryption over a content-addressed store.

pub mod abe;
pub mod api;
pub mod cas;
pub mod chor;
pub mod codec;
pub mod contracts;
pub mod digest;
pub mod fixtures;
pub mod identity;
pub mod ledger;
#[cfg(any(test, feature = "test-oracles"))]
pub mod oracles;
pub mod service;
