//! Wire types of the gateway HTTP API, shared by the server, the clients and
//! the in-process transport.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chor::Visibility;
use crate::contracts::RequestAuth;
use crate::digest::Digest;
use crate::identity::{AccountId, PublicKey, Signature};

pub const HEADER_ACCOUNT: &str = "x-confetty-account";
pub const HEADER_KEY: &str = "x-confetty-key";
pub const HEADER_NONCE: &str = "x-confetty-nonce";
pub const HEADER_SIGNATURE: &str = "x-confetty-signature";

/// Machine-readable API failure. `code` is stable; `message` is for humans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status_for(code),
            code: code.to_owned(),
            message: message.into(),
            details: serde_json::Value::Null,
        }
    }

    pub fn with_details(mut self, details: serde_json::Value) -> Self {
        self.details = details;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new("BadRequest", message)
    }

    pub fn internal(message: impl fmt::Display) -> Self {
        Self::new("Internal", message.to_string())
    }
}

impl From<crate::ledger::ContractError> for ApiError {
    fn from(e: crate::ledger::ContractError) -> Self {
        ApiError::new(&e.code, e.detail)
    }
}

/// HTTP status for an error code.
pub fn status_for(code: &str) -> u16 {
    match code {
        "BadRequest" | "BadArguments" | "SchemaViolation" | "PolicyParseError" | "BadPolicy" | "EmptyPlaintext"
        | "MalformedKey" | "UnknownCall" => 400,
        "Unauthorized" | "BadAuth" => 401,
        "NotOwner" | "WrongInitiator" | "BadAttestation" | "NotParticipant" | "NotCertifier" | "WrongAccount"
        | "NotAdmin" | "NoGrants" | "PolicyNotSatisfied" => 403,
        "UnknownProcess" | "UnknownInstance" | "UnknownMessage" | "NotFound" | "UnknownAuthority" | "UnknownRole"
        | "UnknownTask" | "OutOfRange" | "UnknownFixture" => 404,
        "NotEnabled" | "RoleTaken" | "AlreadyRegistered" | "DuplicateDeploy" | "DuplicateStore"
        | "InstanceCompleted" | "UnboundRoles" | "DuplicateAuthority" | "StaleEpoch" | "NoPolicy"
        | "PolicyMismatch" | "NotNotarized" | "UnboundVariable" | "TypeMismatch" | "NoRoute" | "GatewayLivelock" => 409,
        "SpecInvalid" | "InvalidSpec" => 422,
        "AuthorityUnavailable" | "TransportError" => 503,
        _ => 500,
    }
}

/// Method and path of a request, as signed by the caller: `"POST /processes"`.
pub fn endpoint(method: &str, path: &str) -> String {
    format!("{method} {path}")
}

/// Header values carrying a detached request signature.
pub fn auth_headers(auth: &RequestAuth) -> Vec<(&'static str, String)> {
    vec![
        (HEADER_ACCOUNT, auth.account().to_string()),
        (HEADER_KEY, auth.public_key.to_string()),
        (HEADER_NONCE, auth.nonce.to_string()),
        (HEADER_SIGNATURE, auth.signature.to_string()),
    ]
}

/// Rebuilds and verifies a request signature from headers. Returns `None`
/// for unsigned requests.
pub fn parse_auth_headers(
    header: impl Fn(&str) -> Option<String>,
    endpoint: &str,
    body: &[u8],
) -> Result<Option<RequestAuth>, ApiError> {
    let Some(key) = header(HEADER_KEY) else {
        return Ok(None);
    };
    let unauthorized = |m: &str| ApiError::new("Unauthorized", m.to_owned());
    let public_key: PublicKey = key.parse().map_err(|_| unauthorized("malformed account key"))?;
    let nonce: u64 = header(HEADER_NONCE)
        .ok_or_else(|| unauthorized("missing request nonce"))?
        .parse()
        .map_err(|_| unauthorized("malformed request nonce"))?;
    let signature: Signature = header(HEADER_SIGNATURE)
        .ok_or_else(|| unauthorized("missing request signature"))?
        .parse()
        .map_err(|_| unauthorized("malformed request signature"))?;
    let auth = RequestAuth {
        public_key,
        endpoint: endpoint.to_owned(),
        body_digest: Digest::of(body),
        nonce,
        signature,
    };
    if let Some(account) = header(HEADER_ACCOUNT) {
        if account != auth.account().to_string() {
            return Err(unauthorized("account header does not match the key"));
        }
    }
    if !auth.signature_valid() {
        return Err(unauthorized("request signature does not verify"));
    }
    Ok(Some(auth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
        }
    }
}

/// Transport-neutral request, as seen by the gateway router.
#[derive(Debug, Clone)]
pub struct ApiRequest {
    pub method: Method,
    pub path: String,
    pub query: BTreeMap<String, String>,
    pub body: Vec<u8>,
    pub auth: Option<RequestAuth>,
}

impl ApiRequest {
    pub fn endpoint(&self) -> String {
        endpoint(self.method.as_str(), &self.path)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigureRequest {
    /// Choreography document text, stored verbatim.
    pub spec: String,
    /// Non-participant readers and the attribute standing for each.
    #[serde(default)]
    pub custom_roles: BTreeMap<String, String>,
    pub certifiers: Vec<AccountId>,
    #[serde(default)]
    pub deploy_nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDraft {
    pub task_id: String,
    pub policy: String,
    pub editable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigureResponse {
    pub process_id: Digest,
    pub spec_locator: String,
    pub confinement_attribute: String,
    pub drafts: Vec<PolicyDraft>,
    pub tx_id: Digest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub task_id: String,
    pub policy: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfirmRequest {
    pub policies: Vec<PolicyEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfirmResult {
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_locator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfirmResponse {
    pub results: Vec<ConfirmResult>,
}

/// A certifier's signed statement that `account` plays `role` and holds
/// `attributes` for `epoch`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attestation {
    pub process_id: Digest,
    pub role: String,
    pub account: AccountId,
    pub certifier_key: PublicKey,
    /// Present for choreography participants; custom roles are granted only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role_signature: Option<Signature>,
    pub attributes: Vec<String>,
    pub epoch: u64,
    pub grant_signature: Signature,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub attestation: Attestation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub role: String,
    pub account: AccountId,
    pub bound: bool,
    pub granted: Vec<String>,
    pub duplicate_grant: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstantiateResponse {
    pub instance_id: Digest,
    pub enabled: Vec<String>,
    pub status: String,
    pub state_digest: Digest,
    pub tx_id: Digest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransactRequest {
    pub payload: serde_json::Value,
    /// Defaults to the visibility declared by the task's message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<Visibility>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransactResponse {
    pub message_id: Digest,
    pub visibility: Visibility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ciphertext_locator: Option<String>,
    pub enabled: Vec<String>,
    pub status: String,
    pub state_digest: Digest,
    pub tx_id: Digest,
    pub block_height: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreRequest {
    pub instance_id: Digest,
    pub task_id: String,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreResponse {
    pub message_id: Digest,
    pub ciphertext_locator: String,
    pub policy_locator: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnabledTask {
    pub task_id: String,
    pub initiator: String,
    pub recipient: String,
    pub account: Option<AccountId>,
    pub visibility: Visibility,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MessageView {
    pub message_id: Digest,
    pub task_id: String,
    pub sender: AccountId,
    pub visibility: Visibility,
    pub block_height: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ciphertext_locator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_locator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventView {
    pub block_height: u64,
    pub index: u32,
    pub tx_id: Digest,
    pub contract: String,
    pub topic: String,
    pub payload: BTreeMap<String, String>,
}

impl From<&crate::ledger::Event> for EventView {
    fn from(e: &crate::ledger::Event) -> Self {
        Self {
            block_height: e.block_height,
            index: e.index,
            tx_id: e.tx_id,
            contract: e.contract.as_str().to_owned(),
            topic: e.topic.clone(),
            payload: e.payload.to_text_map(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceView {
    pub instance_id: Digest,
    pub process_id: Digest,
    pub status: String,
    pub enabled: Vec<EnabledTask>,
    pub marking: BTreeMap<String, u32>,
    pub bindings: BTreeMap<String, AccountId>,
    pub variables: BTreeMap<String, serde_json::Value>,
    pub message_log: Vec<MessageView>,
    pub events: Vec<EventView>,
    pub state_digest: Digest,
}

impl InstanceView {
    pub fn enabled_ids(&self) -> Vec<String> {
        self.enabled.iter().map(|t| t.task_id.clone()).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoleView {
    pub role: String,
    pub attribute: String,
    pub account: Option<AccountId>,
    pub custom: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisteredPolicy {
    pub task_id: String,
    pub policy: String,
    pub policy_locator: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessView {
    pub process_id: Digest,
    pub owner: AccountId,
    pub model_id: String,
    pub spec_locator: String,
    pub roles: Vec<RoleView>,
    pub certifiers: Vec<AccountId>,
    pub confinement_attribute: String,
    pub policies: Vec<RegisteredPolicy>,
    pub drafts: Vec<PolicyDraft>,
    pub instances: Vec<Digest>,
    pub epoch: u64,
}

impl ProcessView {
    pub fn role(&self, role: &str) -> Option<&RoleView> {
        self.roles.iter().find(|r| r.role == role)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyResponse {
    /// The merged key, sealed to the caller's account key, hex encoded.
    pub sealed_key: String,
    pub entries: usize,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReadResponse {
    pub message_id: Digest,
    pub instance_id: Digest,
    pub task_id: String,
    pub policy: String,
    pub ciphertext_locator: String,
    /// Envelope bytes, hex encoded. Decryption happens on the caller's side.
    pub envelope: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TxView {
    pub tx_id: Digest,
    pub sender: AccountId,
    pub contract: String,
    pub call: String,
    pub nonce: u64,
    pub size_bytes: usize,
    pub args: BTreeMap<String, String>,
    /// `ACCEPTED`, or the failure code of a rejected call.
    pub outcome: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockView {
    pub height: u64,
    pub prev_hash: Digest,
    pub block_hash: Digest,
    pub state_root: Digest,
    pub txs: Vec<TxView>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyView {
    pub clean: bool,
    pub blocks_checked: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergent_height: Option<u64>,
    pub report: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayView {
    pub clean: bool,
    pub instances: usize,
    pub identical: bool,
    pub state_root_matches: bool,
    pub mismatched: Vec<Digest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AddAuthorityRequest {
    pub id: String,
    /// Hex-encoded seed of at least 32 bytes.
    pub seed: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetAuthorityRequest {
    pub enabled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochResponse {
    pub epoch: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::Identity;

    #[test]
    fn headers_round_trip_through_parse() {
        let id = Identity::from_seed(b"alice");
        let body = br#"{"a":1}"#;
        let auth = RequestAuth::sign(&id, "POST /processes", body, 42);
        let headers: BTreeMap<_, _> = auth_headers(&auth).into_iter().collect();
        let parsed = parse_auth_headers(|h| headers.get(h).cloned(), "POST /processes", body)
            .unwrap()
            .unwrap();
        assert_eq!(parsed, auth);
    }

    #[test]
    fn body_or_endpoint_change_breaks_the_signature() {
        let id = Identity::from_seed(b"alice");
        let auth = RequestAuth::sign(&id, "POST /processes", b"{}", 1);
        let headers: BTreeMap<_, _> = auth_headers(&auth).into_iter().collect();
        let get = |h: &str| headers.get(h).cloned();
        assert_eq!(
            parse_auth_headers(get, "POST /processes", b"{ }").unwrap_err().code,
            "Unauthorized"
        );
        assert_eq!(
            parse_auth_headers(get, "POST /keys/requests", b"{}").unwrap_err().code,
            "Unauthorized"
        );
        assert!(parse_auth_headers(|_| None, "POST /processes", b"{}").unwrap().is_none());
    }

    #[test]
    fn error_codes_map_to_statuses() {
        assert_eq!(ApiError::new("NotEnabled", "").status, 409);
        assert_eq!(ApiError::new("UnknownInstance", "").status, 404);
        assert_eq!(ApiError::new("WrongInitiator", "").status, 403);
        assert_eq!(ApiError::new("SpecInvalid", "").status, 422);
        assert_eq!(ApiError::new("Whatever", "").status, 500);
    }
}
