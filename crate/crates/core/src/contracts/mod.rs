//! On-ledger state machines: the process contract enforcing choreography
//! control flow and the confidentiality contract notarizing confidential
//! operations.

mod auth;
mod confidentiality;
mod process;

use crate::codec::NamedArgs;
use crate::digest::Digest;
use crate::identity::AccountId;
use crate::ledger::{Contract, ContractError, ContractId};

pub use auth::{RequestAuth, AUTH_ARG};
pub use confidentiality::{
    grant_signing_message, ConfidentialityContract, GrantRecord, PolicyRecord, StoreRecord,
};
pub use process::{
    bind_role_message, InstanceState, InstanceStatus, MessageBody, MessageRecord, ProcessContract,
    ProcessRecord,
};

pub const PROCESS_CONTRACT: &str = "process";
pub const CONFIDENTIALITY_CONTRACT: &str = "confidentiality";

pub fn process_contract_id() -> ContractId {
    ContractId::new(PROCESS_CONTRACT)
}

pub fn confidentiality_contract_id() -> ContractId {
    ContractId::new(CONFIDENTIALITY_CONTRACT)
}

/// Both contracts with empty state, ready for a new ledger.
pub fn standard_contracts() -> Vec<Box<dyn Contract>> {
    vec![
        Box::new(ProcessContract::new()),
        Box::new(ConfidentialityContract::new()),
    ]
}

/// Attribute name conjoined into every policy of a process.
pub fn confinement_attribute_name(process_id: &Digest) -> String {
    format!("inst_{}", process_id.short(8))
}

/// Digests and account ids travel as hex text so event payloads stay readable.
pub(crate) fn digest_arg(args: &NamedArgs, name: &str) -> Result<Digest, ContractError> {
    args.str(name)?
        .parse()
        .map_err(|_| ContractError::new("BadArguments", format!("`{name}` is not a hex digest")))
}

pub(crate) fn account_arg(args: &NamedArgs, name: &str) -> Result<AccountId, ContractError> {
    digest_arg(args, name).map(AccountId)
}
