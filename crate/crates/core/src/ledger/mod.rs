//! Deterministic append-only ledger hosting contract state machines.
//!
//! Blocks are produced explicitly by [`Ledger::seal_block`]. The pending pool
//! is drained in submission order and every call runs sequentially; failed
//! calls still occupy their slot and leave a `CallFailed` event behind.

mod block;
mod contract;
mod file;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use thiserror::Error;

pub use block::{Block, BlockHeader, ContractId, Event, EventFilter, Tx};
pub use contract::{CallContext, CallOutput, Contract, ContractError};
pub use file::{load_blocks, verify_ledger_file, LedgerFileError};

use crate::codec::NamedArgs;
use crate::digest::Digest;
use crate::identity::AccountId;
use contract::ContractMap;
use file::LedgerFile;

pub const CALL_FAILED_TOPIC: &str = "CallFailed";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubmitError {
    #[error("malformed transaction: {0}")]
    Malformed(String),
    #[error("signature does not verify against the sender key")]
    BadSignature,
    #[error("bad nonce: expected {expected}, got {got}")]
    BadNonce { expected: u64, got: u64 },
    #[error("unknown contract `{0}`")]
    UnknownContract(ContractId),
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("height {height} out of range (head is {head})")]
    OutOfRange { height: u64, head: u64 },
    #[error("chain verification failed: {0}")]
    ChainCorrupt(VerificationReport),
    #[error(transparent)]
    File(#[from] LedgerFileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiptStatus {
    Accepted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxReceipt {
    pub tx_id: Digest,
    pub status: ReceiptStatus,
    /// Encoded transaction size, the cost proxy.
    pub size_bytes: usize,
}

/// Result of executing one sealed transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxOutcome {
    pub tx_id: Digest,
    pub block_height: u64,
    pub result: Result<NamedArgs, ContractError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub height: u64,
    pub reason: String,
}

/// Outcome of recomputing every digest and link of a chain.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerificationReport {
    pub blocks_checked: u64,
    pub divergence: Option<Divergence>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.divergence.is_none()
    }

    pub fn divergent_height(&self) -> Option<u64> {
        self.divergence.as_ref().map(|d| d.height)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.divergence {
            None => write!(f, "CLEAN ({} blocks)", self.blocks_checked),
            Some(d) => write!(f, "DIVERGENCE at height {}: {}", d.height, d.reason),
        }
    }
}

pub struct Ledger {
    blocks: Vec<Block>,
    pool: Vec<Tx>,
    contracts: ContractMap,
    /// Next expected nonce per sender, counting pending transactions.
    next_nonce: HashMap<AccountId, u64>,
    events: Vec<Event>,
    outcomes: HashMap<Digest, TxOutcome>,
    file: Option<LedgerFile>,
}

impl fmt::Debug for Ledger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ledger")
            .field("height", &self.height())
            .field("pending", &self.pool.len())
            .field("contracts", &self.contracts.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Ledger {
    /// In-memory ledger with a genesis block over the given contracts.
    pub fn new(contracts: Vec<Box<dyn Contract>>) -> Self {
        let contracts: ContractMap = contracts.into_iter().map(|c| (c.id(), c)).collect();
        let mut ledger = Self {
            blocks: Vec::new(),
            pool: Vec::new(),
            contracts,
            next_nonce: HashMap::new(),
            events: Vec::new(),
            outcomes: HashMap::new(),
            file: None,
        };
        let genesis = Block::new(0, Digest::ZERO, Vec::new(), ledger.state_root());
        ledger.blocks.push(genesis);
        ledger
    }

    /// Opens (or creates) a file-backed ledger. Existing blocks are verified
    /// and re-executed to rebuild contract state.
    pub fn open(path: &Path, contracts: Vec<Box<dyn Contract>>) -> Result<Self, LedgerError> {
        let mut ledger = if path.exists() && std::fs::metadata(path)?.len() > 0 {
            Self::from_blocks(load_blocks(path)?, contracts)?
        } else {
            let ledger = Self::new(contracts);
            LedgerFile::create(path)?.append(&ledger.blocks[0])?;
            ledger
        };
        ledger.file = Some(LedgerFile::open_append(path)?);
        Ok(ledger)
    }

    /// Rebuilds a ledger by re-executing `blocks` from genesis over fresh
    /// contract state. Fails if the chain does not verify or any recomputed
    /// state root differs from the recorded one.
    pub fn from_blocks(blocks: Vec<Block>, contracts: Vec<Box<dyn Contract>>) -> Result<Self, LedgerError> {
        let report = verify_blocks(&blocks);
        if !report.is_clean() {
            return Err(LedgerError::ChainCorrupt(report));
        }
        let mut ledger = Self::new(contracts);
        if blocks.first().map(|b| b.state_root) != Some(ledger.blocks[0].state_root) {
            return Err(LedgerError::ChainCorrupt(state_root_divergence(0)));
        }
        ledger.blocks.truncate(0);
        ledger.blocks.push(blocks[0].clone());
        for block in blocks.into_iter().skip(1) {
            for tx in &block.txs {
                ledger.next_nonce.insert(tx.sender, tx.nonce + 1);
            }
            ledger.execute_block(block.height, &block.txs);
            if ledger.state_root() != block.state_root {
                return Err(LedgerError::ChainCorrupt(state_root_divergence(block.height)));
            }
            ledger.blocks.push(block);
        }
        Ok(ledger)
    }

    /// Fresh, empty-state copies of the hosted contracts.
    pub fn fresh_contracts(&self) -> Vec<Box<dyn Contract>> {
        self.contracts.values().map(|c| c.fresh()).collect()
    }

    pub fn submit_tx(&mut self, tx: Tx) -> Result<TxReceipt, SubmitError> {
        if tx.recomputed_id() != tx.tx_id {
            return Err(SubmitError::Malformed("tx_id does not match contents".into()));
        }
        if tx.sender_key.account() != tx.sender {
            return Err(SubmitError::Malformed("sender is not the digest of sender_key".into()));
        }
        if !tx.signature_valid() {
            return Err(SubmitError::BadSignature);
        }
        let expected = self.next_nonce(&tx.sender);
        if tx.nonce != expected {
            return Err(SubmitError::BadNonce {
                expected,
                got: tx.nonce,
            });
        }
        if !self.contracts.contains_key(&tx.contract) {
            return Err(SubmitError::UnknownContract(tx.contract.clone()));
        }
        self.next_nonce.insert(tx.sender, expected + 1);
        let receipt = TxReceipt {
            tx_id: tx.tx_id,
            status: ReceiptStatus::Accepted,
            size_bytes: tx.encoded_len(),
        };
        self.pool.push(tx);
        Ok(receipt)
    }

    /// Seals the pending pool into a block. No-op on an empty pool.
    pub fn seal_block(&mut self) -> Result<Option<BlockHeader>, LedgerError> {
        if self.pool.is_empty() {
            return Ok(None);
        }
        self.force_seal().map(Some)
    }

    /// Seals a block even when the pool is empty.
    pub fn force_seal(&mut self) -> Result<BlockHeader, LedgerError> {
        let txs = std::mem::take(&mut self.pool);
        let height = self.height() + 1;
        self.execute_block(height, &txs);
        let prev = self.blocks.last().expect("genesis exists").block_hash;
        let block = Block::new(height, prev, txs, self.state_root());
        if let Some(file) = self.file.as_mut() {
            file.append(&block)?;
        }
        let header = block.header();
        self.blocks.push(block);
        Ok(header)
    }

    fn execute_block(&mut self, height: u64, txs: &[Tx]) {
        let mut event_index = self
            .events
            .last()
            .filter(|e| e.block_height == height)
            .map_or(0, |e| e.index + 1);
        for tx in txs {
            let mut contract = self
                .contracts
                .remove(&tx.contract)
                .expect("contract presence checked at submit");
            let ctx = CallContext {
                sender: tx.sender,
                tx_id: tx.tx_id,
                block_height: height,
                others: &self.contracts,
            };
            let result = contract.execute(&ctx, &tx.call, &tx.args);
            self.contracts.insert(tx.contract.clone(), contract);
            let emitted = match &result {
                Ok(out) => out.events.clone(),
                Err(err) => vec![(
                    CALL_FAILED_TOPIC.to_owned(),
                    NamedArgs::new()
                        .with_str("call", &tx.call)
                        .with_str("code", &err.code)
                        .with_str("detail", &err.detail),
                )],
            };
            for (topic, payload) in emitted {
                self.events.push(Event {
                    block_height: height,
                    index: event_index,
                    tx_id: tx.tx_id,
                    contract: tx.contract.clone(),
                    topic,
                    payload,
                });
                event_index += 1;
            }
            self.outcomes.insert(
                tx.tx_id,
                TxOutcome {
                    tx_id: tx.tx_id,
                    block_height: height,
                    result: result.map(|o| o.ret),
                },
            );
        }
    }

    pub fn state_root(&self) -> Digest {
        Digest::of_encoded(|e| {
            for (id, c) in &self.contracts {
                e.str(id.as_str()).bytes(&c.state_bytes());
            }
        })
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn get_block(&self, height: u64) -> Result<&Block, LedgerError> {
        self.blocks
            .get(height as usize)
            .ok_or(LedgerError::OutOfRange {
                height,
                head: self.height(),
            })
    }

    pub fn get_chain_head(&self) -> BlockHeader {
        self.blocks.last().expect("genesis exists").header()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn pending(&self) -> usize {
        self.pool.len()
    }

    pub fn next_nonce(&self, account: &AccountId) -> u64 {
        self.next_nonce.get(account).copied().unwrap_or(0)
    }

    pub fn verify_chain(&self) -> VerificationReport {
        verify_blocks(&self.blocks)
    }

    pub fn query_events(&self, filter: &EventFilter) -> Vec<Event> {
        self.events.iter().filter(|e| filter.matches(e)).cloned().collect()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn outcome(&self, tx_id: &Digest) -> Option<&TxOutcome> {
        self.outcomes.get(tx_id)
    }

    pub fn contract<T: 'static>(&self, id: &ContractId) -> Option<&T> {
        self.contracts.get(id).and_then(|c| c.as_any().downcast_ref())
    }
}

fn state_root_divergence(height: u64) -> VerificationReport {
    VerificationReport {
        blocks_checked: height + 1,
        divergence: Some(Divergence {
            height,
            reason: "re-executed state root differs from recorded state root".into(),
        }),
    }
}

/// Recomputes every transaction id, signature, nonce sequence, block hash and
/// predecessor link. Reports the first divergent height.
pub fn verify_blocks(blocks: &[Block]) -> VerificationReport {
    let mut nonces: BTreeMap<AccountId, u64> = BTreeMap::new();
    let diverge = |height: u64, reason: String| VerificationReport {
        blocks_checked: height + 1,
        divergence: Some(Divergence { height, reason }),
    };
    if blocks.is_empty() {
        return diverge(0, "missing genesis block".into());
    }
    for (i, block) in blocks.iter().enumerate() {
        let h = i as u64;
        if block.height != h {
            return diverge(h, format!("stored height {} at position {h}", block.height));
        }
        if h == 0 {
            if block.prev_hash != Digest::ZERO {
                return diverge(0, "genesis prev_hash is not zero".into());
            }
            if !block.txs.is_empty() {
                return diverge(0, "genesis carries transactions".into());
            }
        } else if block.prev_hash != blocks[i - 1].block_hash {
            return diverge(h, "prev_hash does not link to predecessor".into());
        }
        for (pos, tx) in block.txs.iter().enumerate() {
            if tx.recomputed_id() != tx.tx_id {
                return diverge(h, format!("tx {pos}: tx_id does not match contents"));
            }
            if !tx.signature_valid() {
                return diverge(h, format!("tx {pos}: signature invalid"));
            }
            let expected = nonces.get(&tx.sender).copied().unwrap_or(0);
            if tx.nonce != expected {
                return diverge(h, format!("tx {pos}: nonce {} but expected {expected}", tx.nonce));
            }
            nonces.insert(tx.sender, expected + 1);
        }
        if block.recomputed_hash() != block.block_hash {
            return diverge(h, "block_hash does not match contents".into());
        }
    }
    VerificationReport {
        blocks_checked: blocks.len() as u64,
        divergence: None,
    }
}

impl From<std::io::Error> for LedgerError {
    fn from(e: std::io::Error) -> Self {
        LedgerError::File(LedgerFileError::Io(e))
    }
}

#[cfg(test)]
mod tests;
