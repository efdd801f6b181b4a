//! A ledger shared between request handlers, with a relayer account that
//! signs every transaction the gateway submits.

use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use crate::api::ApiError;
use crate::codec::NamedArgs;
use crate::digest::Digest;
use crate::identity::Identity;
use crate::ledger::{ContractId, Ledger, Tx};

/// When the node turns pending transactions into blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SealMode {
    /// Seal right after each submission, so callers read their own writes.
    Immediate,
    /// A background timer seals at this interval; callers wait for it.
    Interval(Duration),
}

impl std::str::FromStr for SealMode {
    type Err = String;

    /// `immediate`, or an interval such as `2s` or `500ms`.
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "immediate" {
            return Ok(SealMode::Immediate);
        }
        let (num, unit) = s.trim().split_at(s.trim().find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len()));
        let n: u64 = num.parse().map_err(|_| format!("bad seal interval `{s}`"))?;
        let d = match unit {
            "ms" => Duration::from_millis(n),
            "s" | "" => Duration::from_secs(n),
            _ => return Err(format!("bad seal interval unit in `{s}`")),
        };
        if d.is_zero() {
            return Err("seal interval must be positive".into());
        }
        Ok(SealMode::Interval(d))
    }
}

/// Observer hook for every transaction handed to the ledger.
pub type TxObserver = Box<dyn Fn(&Tx) + Send + Sync>;

/// Result of one contract call that made it into a block.
#[derive(Debug, Clone)]
pub struct CallResult {
    pub tx_id: Digest,
    pub block_height: u64,
    pub ret: NamedArgs,
}

pub struct LedgerNode {
    ledger: Mutex<Ledger>,
    sealed: Condvar,
    relayer: Identity,
    mode: SealMode,
    observer: RwLock<Option<TxObserver>>,
}

impl std::fmt::Debug for LedgerNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LedgerNode")
            .field("relayer", &self.relayer.account())
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

const CALL_TIMEOUT: Duration = Duration::from_secs(30);

impl LedgerNode {
    pub fn new(ledger: Ledger, relayer: Identity, mode: SealMode) -> Arc<Self> {
        let node = Arc::new(Self {
            ledger: Mutex::new(ledger),
            sealed: Condvar::new(),
            relayer,
            mode,
            observer: RwLock::new(None),
        });
        if let SealMode::Interval(every) = mode {
            let weak = Arc::downgrade(&node);
            thread::spawn(move || loop {
                thread::sleep(every);
                let Some(node) = weak.upgrade() else { break };
                node.seal_now();
            });
        }
        node
    }

    pub fn relayer(&self) -> &Identity {
        &self.relayer
    }

    pub fn set_observer(&self, observer: Option<TxObserver>) {
        *self.observer.write().expect("observer lock") = observer;
    }

    /// Locks the ledger for reading or manual operation.
    pub fn lock(&self) -> MutexGuard<'_, Ledger> {
        self.ledger.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn read<T>(&self, f: impl FnOnce(&Ledger) -> T) -> T {
        f(&self.lock())
    }

    /// Seals pending transactions, if any, and wakes waiting callers.
    pub fn seal_now(&self) {
        let mut ledger = self.lock();
        if let Err(e) = ledger.seal_block() {
            eprintln!("seal failed: {e}");
        }
        self.sealed.notify_all();
    }

    /// Submits a relayed contract call and waits until its block is sealed.
    /// Contract rejections come back as errors carrying the contract's code.
    pub fn call(&self, contract: &ContractId, call: &str, args: NamedArgs) -> Result<CallResult, ApiError> {
        let mut ledger = self.lock();
        let nonce = ledger.next_nonce(&self.relayer.account());
        let tx = Tx::new_signed(&self.relayer, contract.clone(), call, args, nonce);
        if let Some(observe) = self.observer.read().expect("observer lock").as_ref() {
            observe(&tx);
        }
        let receipt = ledger
            .submit_tx(tx)
            .map_err(|e| ApiError::new("LedgerRejected", e.to_string()))?;
        if self.mode == SealMode::Immediate {
            ledger
                .seal_block()
                .map_err(|e| ApiError::new("LedgerError", e.to_string()))?;
        }
        let deadline = Instant::now() + CALL_TIMEOUT;
        loop {
            if let Some(outcome) = ledger.outcome(&receipt.tx_id) {
                return match &outcome.result {
                    Ok(ret) => Ok(CallResult {
                        tx_id: receipt.tx_id,
                        block_height: outcome.block_height,
                        ret: ret.clone(),
                    }),
                    Err(e) => Err(ApiError::from(e.clone()).with_details(serde_json::json!({
                        "tx_id": receipt.tx_id,
                        "block_height": outcome.block_height,
                    }))),
                };
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(ApiError::new("LedgerError", "timed out waiting for the block to seal"));
            }
            ledger = self
                .sealed
                .wait_timeout(ledger, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_mode_parses() {
        assert_eq!("immediate".parse::<SealMode>().unwrap(), SealMode::Immediate);
        assert_eq!("2s".parse::<SealMode>().unwrap(), SealMode::Interval(Duration::from_secs(2)));
        assert_eq!("250ms".parse::<SealMode>().unwrap(), SealMode::Interval(Duration::from_millis(250)));
        assert!("0s".parse::<SealMode>().is_err());
        assert!("soon".parse::<SealMode>().is_err());
    }
}
