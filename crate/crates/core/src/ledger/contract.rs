use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;

use crate::codec::{DecodeError, NamedArgs};
use crate::digest::Digest;
use crate::identity::AccountId;

use super::block::ContractId;

/// A deterministic state machine hosted by the ledger.
///
/// Implementations must validate before mutating: a call that returns `Err`
/// must leave the state untouched.
pub trait Contract: Send + Sync + 'static {
    fn id(&self) -> ContractId;

    fn execute(
        &mut self,
        ctx: &CallContext<'_>,
        call: &str,
        args: &NamedArgs,
    ) -> Result<CallOutput, ContractError>;

    /// Canonical encoding of the full contract state; hashed into the block
    /// state root.
    fn state_bytes(&self) -> Vec<u8>;

    /// A new instance of the same contract with empty state, used for replay.
    fn fresh(&self) -> Box<dyn Contract>;

    fn as_any(&self) -> &dyn Any;
}

pub(crate) type ContractMap = BTreeMap<ContractId, Box<dyn Contract>>;

/// Execution context for one call. Other deployed contracts are readable.
pub struct CallContext<'a> {
    pub sender: AccountId,
    pub tx_id: Digest,
    pub block_height: u64,
    pub(crate) others: &'a ContractMap,
}

impl CallContext<'_> {
    pub fn view<T: 'static>(&self, id: &ContractId) -> Option<&T> {
        self.others.get(id).and_then(|c| c.as_any().downcast_ref())
    }
}

#[derive(Debug, Default, Clone)]
pub struct CallOutput {
    pub ret: NamedArgs,
    pub events: Vec<(String, NamedArgs)>,
}

impl CallOutput {
    pub fn new(ret: NamedArgs) -> Self {
        Self {
            ret,
            events: Vec::new(),
        }
    }

    pub fn event(mut self, topic: &str, payload: NamedArgs) -> Self {
        self.events.push((topic.to_owned(), payload));
        self
    }
}

/// Contract-level rejection. Recorded on-chain as a `CallFailed` event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractError {
    pub code: String,
    pub detail: String,
}

impl ContractError {
    pub fn new(code: &str, detail: impl Into<String>) -> Self {
        Self {
            code: code.to_owned(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for ContractError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.detail)
    }
}

impl std::error::Error for ContractError {}

impl From<DecodeError> for ContractError {
    fn from(e: DecodeError) -> Self {
        ContractError::new("BadArguments", e.to_string())
    }
}
