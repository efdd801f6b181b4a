//! Gateway services shared by the HTTP server, the CLI and the bindings.

mod client;
mod drafts;
mod gateway;
mod node;
mod scenario;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use sha2::{Digest as _, Sha256};

pub use client::{attest, open_envelope, GatewayClient, LocalTransport, Transport};
pub use drafts::{compose_drafts, confinement_attribute};
pub use gateway::{replay_blocks, Gateway, GatewayConfig};
pub use node::{CallResult, LedgerNode, SealMode, TxObserver};
pub use scenario::{run_scenario, ReadAttempt, ReadOutcome, ScenarioOptions, ScenarioReport, StepRecord};

use crate::abe::{AbeError, AuthorityRegistry};
use crate::cas::{CasConfig, CasError, CasStore};
use crate::contracts::standard_contracts;
use crate::identity::{AccountId, Identity};
use crate::ledger::{Ledger, LedgerError};

/// Authorities every deployment starts with: `A1` certifies process roles,
/// `A2` certifies external auditors.
pub const DEFAULT_AUTHORITIES: [&str; 2] = ["A1", "A2"];

/// Derives an authority's master seed from a deployment secret.
pub fn authority_seed(secret: &[u8], id: &str) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(b"confetty/authority-seed");
    h.update(secret);
    h.update(id.as_bytes());
    h.finalize().to_vec()
}

pub fn standard_authorities(secret: &[u8]) -> Result<AuthorityRegistry, AbeError> {
    let reg = AuthorityRegistry::new();
    for id in DEFAULT_AUTHORITIES {
        reg.add_local(id, &authority_seed(secret, id))?;
    }
    Ok(reg)
}

#[derive(Debug, thiserror::Error)]
pub enum StackError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Cas(#[from] CasError),
    #[error(transparent)]
    Authority(#[from] AbeError),
}

/// Everything needed to stand up a gateway in-process.
#[derive(Debug, Clone)]
pub struct StackConfig {
    pub cas_root: PathBuf,
    /// File-backed ledger when set, memory only otherwise.
    pub ledger_path: Option<PathBuf>,
    pub seal_mode: SealMode,
    pub relayer_seed: Vec<u8>,
    pub admins: BTreeSet<AccountId>,
    pub rng_seed: Option<u64>,
}

impl StackConfig {
    pub fn new(cas_root: impl Into<PathBuf>) -> Self {
        Self {
            cas_root: cas_root.into(),
            ledger_path: None,
            seal_mode: SealMode::Immediate,
            relayer_seed: b"confetty/relayer".to_vec(),
            admins: BTreeSet::new(),
            rng_seed: None,
        }
    }
}

pub fn build_gateway(config: StackConfig, authorities: Arc<AuthorityRegistry>) -> Result<Arc<Gateway>, StackError> {
    let ledger = match &config.ledger_path {
        Some(path) => Ledger::open(path, standard_contracts())?,
        None => Ledger::new(standard_contracts()),
    };
    let node = LedgerNode::new(ledger, Identity::from_seed(&config.relayer_seed), config.seal_mode);
    let cas = CasStore::open(&config.cas_root, CasConfig::default())?;
    Ok(Arc::new(Gateway::new(
        node,
        cas,
        authorities,
        GatewayConfig {
            admins: config.admins,
            rng_seed: config.rng_seed,
        },
    )))
}
