//! Relayed request authorization.
//!
//! The gateway signs ledger transactions with its own relayer key. A call made
//! on behalf of a participant carries the participant's detached request
//! signature in the `auth` argument, and the contract treats the signer of
//! that record as the caller. Calls without the argument act for the
//! transaction sender directly.

use std::collections::BTreeMap;

use crate::codec::{DecodeError, Decoder, Encoder, NamedArgs};
use crate::digest::Digest;
use crate::identity::{request_signing_message, AccountId, Identity, PublicKey, Signature};
use crate::ledger::{CallContext, ContractError};

pub const AUTH_ARG: &str = "auth";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestAuth {
    pub public_key: PublicKey,
    pub endpoint: String,
    pub body_digest: Digest,
    pub nonce: u64,
    pub signature: Signature,
}

impl RequestAuth {
    pub fn sign(identity: &Identity, endpoint: &str, body: &[u8], nonce: u64) -> Self {
        let body_digest = Digest::of(body);
        let signature = identity.sign(&request_signing_message(endpoint, &body_digest, nonce));
        Self {
            public_key: identity.public_key(),
            endpoint: endpoint.to_owned(),
            body_digest,
            nonce,
            signature,
        }
    }

    pub fn account(&self) -> AccountId {
        self.public_key.account()
    }

    pub fn signature_valid(&self) -> bool {
        self.public_key.verify(
            &request_signing_message(&self.endpoint, &self.body_digest, self.nonce),
            &self.signature,
        )
    }

    fn request_digest(&self) -> Digest {
        Digest::of_encoded(|e| {
            e.str(&self.endpoint).raw(&self.body_digest.0);
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.raw(&self.public_key.0)
            .str(&self.endpoint)
            .raw(&self.body_digest.0)
            .u64(self.nonce)
            .raw(&self.signature.0);
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let out = Self {
            public_key: PublicKey(dec.array()?),
            endpoint: dec.str()?,
            body_digest: Digest::decode(&mut dec)?,
            nonce: dec.u64()?,
            signature: Signature(dec.array()?),
        };
        dec.finish()?;
        Ok(out)
    }

    /// Attaches this record to a call's arguments.
    pub fn attach(&self, mut args: NamedArgs) -> NamedArgs {
        args.insert_raw(AUTH_ARG, self.to_bytes());
        args
    }
}

/// Highest request nonce seen per caller.
///
/// A request may fan out into several calls on the same contract, so a nonce
/// equal to the last one is accepted when it names the same request.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct AuthNonces(BTreeMap<AccountId, (u64, Digest)>);

/// The caller resolved for one call, plus the nonce update to apply on success.
pub(crate) struct Caller {
    pub account: AccountId,
    pending: Option<(AccountId, u64, Digest)>,
}

impl AuthNonces {
    /// Resolves the effective caller. `allowed` lists the endpoints that may
    /// authorize this call. Nothing is mutated until [`AuthNonces::commit`].
    pub fn resolve(
        &self,
        ctx: &CallContext<'_>,
        args: &NamedArgs,
        allowed: &[String],
    ) -> Result<Caller, ContractError> {
        if !args.contains(AUTH_ARG) {
            return Ok(Caller {
                account: ctx.sender,
                pending: None,
            });
        }
        let auth = RequestAuth::from_bytes(args.raw(AUTH_ARG)?)
            .map_err(|e| ContractError::new("BadAuth", format!("malformed request authorization: {e}")))?;
        if !allowed.iter().any(|e| e == &auth.endpoint) {
            return Err(ContractError::new(
                "BadAuth",
                format!("request for `{}` cannot authorize this call", auth.endpoint),
            ));
        }
        if !auth.signature_valid() {
            return Err(ContractError::new("BadAuth", "request signature does not verify"));
        }
        let account = auth.account();
        let request = auth.request_digest();
        if let Some((last, last_request)) = self.0.get(&account) {
            let replay = auth.nonce < *last || (auth.nonce == *last && request != *last_request);
            if replay {
                return Err(ContractError::new(
                    "BadAuth",
                    format!("request nonce {} is not above {last}", auth.nonce),
                ));
            }
        }
        Ok(Caller {
            account,
            pending: Some((account, auth.nonce, request)),
        })
    }

    pub fn commit(&mut self, caller: &Caller) {
        if let Some((account, nonce, request)) = caller.pending {
            self.0.insert(account, (nonce, request));
        }
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.0.len() as u32);
        for (account, (nonce, request)) in &self.0 {
            account.encode(enc);
            enc.u64(*nonce).raw(&request.0);
        }
    }
}
