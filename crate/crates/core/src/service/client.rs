//! Typed, signing client over any transport.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value as Json;

use super::gateway::Gateway;
use crate::abe::{decrypt, ABKey, Attribute, AuthorityInfo, CiphertextEnvelope};
use crate::api::*;
use crate::contracts::{bind_role_message, grant_signing_message, RequestAuth};
use crate::digest::Digest;
use crate::identity::{AccountId, Identity};
use crate::ledger::BlockHeader;

/// Carries a request to a gateway and returns its JSON answer.
pub trait Transport: Send + Sync {
    fn send(&self, req: ApiRequest) -> Result<Json, ApiError>;
}

/// In-process transport straight into a [`Gateway`].
#[derive(Debug, Clone)]
pub struct LocalTransport(pub Arc<Gateway>);

impl Transport for LocalTransport {
    fn send(&self, req: ApiRequest) -> Result<Json, ApiError> {
        self.0.handle(&req)
    }
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, req: ApiRequest) -> Result<Json, ApiError> {
        (**self).send(req)
    }
}

/// Microsecond clock that never repeats or goes backwards within a process.
fn next_nonce(last: &AtomicU64) -> u64 {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_micros() as u64);
    let mut prev = last.load(Ordering::Relaxed);
    loop {
        let next = now.max(prev + 1);
        match last.compare_exchange_weak(prev, next, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return next,
            Err(p) => prev = p,
        }
    }
}

static LAST_NONCE: AtomicU64 = AtomicU64::new(0);

pub struct GatewayClient<T: Transport> {
    transport: T,
    identity: Option<Identity>,
}

impl<T: Transport> std::fmt::Debug for GatewayClient<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GatewayClient")
            .field("account", &self.identity.as_ref().map(Identity::account))
            .finish_non_exhaustive()
    }
}

fn decode<R: DeserializeOwned>(v: Json) -> Result<R, ApiError> {
    serde_json::from_value(v).map_err(|e| ApiError::internal(format!("unexpected gateway response: {e}")))
}

impl<T: Transport> GatewayClient<T> {
    pub fn new(transport: T, identity: Option<Identity>) -> Self {
        Self { transport, identity }
    }

    pub fn anonymous(transport: T) -> Self {
        Self::new(transport, None)
    }

    pub fn identity(&self) -> Option<&Identity> {
        self.identity.as_ref()
    }

    pub fn account(&self) -> Option<AccountId> {
        self.identity.as_ref().map(Identity::account)
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn signer(&self) -> Result<&Identity, ApiError> {
        self.identity
            .as_ref()
            .ok_or_else(|| ApiError::new("Unauthorized", "this operation needs an identity"))
    }

    pub fn get_json(&self, path: &str, query: &[(&str, String)]) -> Result<Json, ApiError> {
        self.transport.send(ApiRequest {
            method: Method::Get,
            path: path.to_owned(),
            query: query.iter().map(|(k, v)| ((*k).to_owned(), v.clone())).collect(),
            body: Vec::new(),
            auth: None,
        })
    }

    fn get<R: DeserializeOwned>(&self, path: &str) -> Result<R, ApiError> {
        decode(self.get_json(path, &[])?)
    }

    /// Signs and posts `body` to `path`.
    pub fn post_json(&self, path: &str, body: &impl Serialize) -> Result<Json, ApiError> {
        let identity = self.signer()?;
        let body = serde_json::to_vec(body).map_err(ApiError::internal)?;
        let auth = RequestAuth::sign(identity, &endpoint("POST", path), &body, next_nonce(&LAST_NONCE));
        self.transport.send(ApiRequest {
            method: Method::Post,
            path: path.to_owned(),
            query: Default::default(),
            body,
            auth: Some(auth),
        })
    }

    fn post<R: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> Result<R, ApiError> {
        decode(self.post_json(path, body)?)
    }

    pub fn health(&self) -> Result<Json, ApiError> {
        self.get_json("/health", &[])
    }

    pub fn configure(&self, req: &ConfigureRequest) -> Result<ConfigureResponse, ApiError> {
        self.post("/processes", req)
    }

    pub fn process(&self, pid: &Digest) -> Result<ProcessView, ApiError> {
        self.get(&format!("/processes/{pid}"))
    }

    pub fn confirm_policies(&self, pid: &Digest, policies: Vec<PolicyEntry>) -> Result<ConfirmResponse, ApiError> {
        self.post(&format!("/processes/{pid}/policies"), &ConfirmRequest { policies })
    }

    /// Confirms every draft unchanged. Fails on the first rejected policy.
    pub fn confirm_drafts(&self, pid: &Digest, drafts: &[PolicyDraft]) -> Result<ConfirmResponse, ApiError> {
        let entries = drafts
            .iter()
            .map(|d| PolicyEntry {
                task_id: d.task_id.clone(),
                policy: d.policy.clone(),
            })
            .collect();
        let res = self.confirm_policies(pid, entries)?;
        if let Some(err) = res.results.iter().find_map(|r| r.error.clone()) {
            return Err(err);
        }
        Ok(res)
    }

    pub fn register(&self, attestation: Attestation) -> Result<RegisterResponse, ApiError> {
        let pid = attestation.process_id;
        self.post(&format!("/processes/{pid}/participants"), &RegisterRequest { attestation })
    }

    pub fn instantiate(&self, pid: &Digest) -> Result<InstantiateResponse, ApiError> {
        self.post(&format!("/processes/{pid}/instances"), &serde_json::json!({}))
    }

    pub fn transact(&self, iid: &Digest, task_id: &str, payload: Json) -> Result<TransactResponse, ApiError> {
        self.post(
            &format!("/instances/{iid}/tasks/{task_id}"),
            &TransactRequest {
                payload,
                visibility: None,
            },
        )
    }

    pub fn store(&self, iid: &Digest, task_id: &str, payload: Json) -> Result<StoreResponse, ApiError> {
        self.post(
            "/confidential/messages",
            &StoreRequest {
                instance_id: *iid,
                task_id: task_id.to_owned(),
                payload,
            },
        )
    }

    pub fn inspect(&self, iid: &Digest) -> Result<InstanceView, ApiError> {
        self.get(&format!("/instances/{iid}"))
    }

    pub fn request_key_raw(&self) -> Result<KeyResponse, ApiError> {
        self.post("/keys/requests", &serde_json::json!({}))
    }

    /// Requests and unseals this identity's attribute key.
    pub fn request_key(&self) -> Result<ABKey, ApiError> {
        let res = self.request_key_raw()?;
        let sealed = hex::decode(&res.sealed_key).map_err(ApiError::internal)?;
        let raw = self
            .signer()?
            .open_sealed(&sealed)
            .map_err(|e| ApiError::new("MalformedKey", e.to_string()))?;
        ABKey::from_bytes(&raw).map_err(|e| ApiError::new("MalformedKey", e.to_string()))
    }

    pub fn read_raw(&self, mid: &Digest) -> Result<ReadResponse, ApiError> {
        self.post(&format!("/confidential/messages/{mid}/read"), &serde_json::json!({}))
    }

    /// Fetches a confidential message and decrypts it with `key`.
    pub fn read(&self, mid: &Digest, key: &ABKey) -> Result<Json, ApiError> {
        open_envelope(&self.read_raw(mid)?, key)
    }

    pub fn epoch(&self) -> Result<u64, ApiError> {
        Ok(self.get::<EpochResponse>("/epoch")?.epoch)
    }

    pub fn bump_epoch(&self) -> Result<u64, ApiError> {
        Ok(self.post::<EpochResponse>("/epochs", &serde_json::json!({}))?.epoch)
    }

    pub fn authorities(&self) -> Result<Vec<AuthorityInfo>, ApiError> {
        self.get("/authorities")
    }

    pub fn add_authority(&self, id: &str, seed: &[u8]) -> Result<AuthorityInfo, ApiError> {
        self.post(
            "/authorities",
            &AddAuthorityRequest {
                id: id.to_owned(),
                seed: hex::encode(seed),
            },
        )
    }

    pub fn set_authority(&self, id: &str, enabled: bool) -> Result<AuthorityInfo, ApiError> {
        self.post(&format!("/authorities/{id}"), &SetAuthorityRequest { enabled })
    }

    pub fn head(&self) -> Result<BlockHeader, ApiError> {
        self.get("/ledger/head")
    }

    pub fn blocks(&self) -> Result<Vec<BlockHeader>, ApiError> {
        self.get("/ledger/blocks")
    }

    pub fn block(&self, height: u64) -> Result<BlockView, ApiError> {
        self.get(&format!("/ledger/blocks/{height}"))
    }

    pub fn events(&self, query: &[(&str, String)]) -> Result<Vec<EventView>, ApiError> {
        decode(self.get_json("/ledger/events", query)?)
    }

    pub fn verify(&self) -> Result<VerifyView, ApiError> {
        self.get("/ledger/verify")
    }

    pub fn replay(&self) -> Result<ReplayView, ApiError> {
        self.get("/ledger/replay")
    }
}

/// Decrypts a read response and parses the JSON payload.
pub fn open_envelope(read: &ReadResponse, key: &ABKey) -> Result<Json, ApiError> {
    let bytes = hex::decode(&read.envelope).map_err(|_| ApiError::new("TamperedEnvelope", "envelope is not hex"))?;
    let env = CiphertextEnvelope::from_bytes(&bytes).map_err(|e| ApiError::new("TamperedEnvelope", e.to_string()))?;
    let plain = decrypt(&env, key).map_err(|e| {
        let code = match e {
            crate::abe::AbeError::PolicyNotSatisfied => "PolicyNotSatisfied",
            _ => "TamperedEnvelope",
        };
        ApiError::new(code, e.to_string()).with_details(serde_json::json!({ "policy": read.policy }))
    })?;
    serde_json::from_slice(&plain).map_err(|e| ApiError::new("TamperedEnvelope", format!("plaintext is not JSON: {e}")))
}

/// Certifier side of registration: signs the role binding (for participant
/// roles) and the attribute grant.
pub fn attest(
    certifier: &Identity,
    process_id: &Digest,
    role: &str,
    account: &AccountId,
    attributes: &BTreeSet<Attribute>,
    epoch: u64,
    bind_role: bool,
) -> Attestation {
    Attestation {
        process_id: *process_id,
        role: role.to_owned(),
        account: *account,
        certifier_key: certifier.public_key(),
        role_signature: bind_role.then(|| certifier.sign(&bind_role_message(process_id, role, account))),
        attributes: attributes.iter().map(ToString::to_string).collect(),
        epoch,
        grant_signature: certifier.sign(&grant_signing_message(account, attributes, epoch)),
    }
}
