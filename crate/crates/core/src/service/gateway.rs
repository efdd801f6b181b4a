//! Process and confidentiality interfaces behind one transport-neutral
//! request router.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, RwLock};

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value as Json;

use super::drafts::{compose_drafts, confinement_attribute};
use super::node::{CallResult, LedgerNode};
use crate::abe::{encrypt, parse_policy, AbeError, Attribute, AuthorityInfo, AuthorityRegistry, CiphertextEnvelope};
use crate::api::*;
use crate::cas::{CasError, CasStore, Locator};
use crate::chor::{parse_choreography, ChorError, Visibility};
use crate::codec::NamedArgs;
use crate::contracts::{
    bind_role_message, confidentiality_contract_id, grant_signing_message, process_contract_id,
    standard_contracts, ConfidentialityContract, InstanceState, InstanceStatus, MessageBody, ProcessContract,
    ProcessRecord, RequestAuth,
};
use crate::digest::Digest;
use crate::identity::{seal_to, AccountId};
use crate::ledger::{EventFilter, Ledger, TxOutcome};

#[derive(Debug, Clone, Default)]
pub struct GatewayConfig {
    /// Accounts allowed to manage the authority registry.
    pub admins: BTreeSet<AccountId>,
    /// Seeds the encryption RNG for reproducible runs. Random when `None`.
    pub rng_seed: Option<u64>,
}

pub struct Gateway {
    node: Arc<LedgerNode>,
    cas: CasStore,
    authorities: Arc<AuthorityRegistry>,
    admins: RwLock<BTreeSet<AccountId>>,
    rng: Mutex<StdRng>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("node", &self.node)
            .field("cas", &self.cas.root())
            .field("authorities", &self.authorities.len())
            .finish_non_exhaustive()
    }
}

fn cas_error(e: CasError) -> ApiError {
    match e {
        CasError::IntegrityViolation(l) => ApiError::new("TamperedEnvelope", format!("stored object {l} was modified")),
        CasError::NotFound(l) => ApiError::new("NotFound", format!("no stored object {l}")),
        other => ApiError::internal(other),
    }
}

fn abe_error(e: AbeError) -> ApiError {
    let code = match &e {
        AbeError::AuthorityUnavailable(_) => "AuthorityUnavailable",
        AbeError::UnknownAuthority(_) => "UnknownAuthority",
        AbeError::DuplicateAuthority(_) => "DuplicateAuthority",
        AbeError::PolicyNotSatisfied => "PolicyNotSatisfied",
        AbeError::TamperedEnvelope(_) => "TamperedEnvelope",
        AbeError::MalformedKey(_) => "MalformedKey",
        AbeError::Syntax(_) => "PolicyParseError",
        AbeError::EmptyPlaintext | AbeError::EncryptionFailed(_) => "EncryptionFailed",
        AbeError::WeakSeed(_) => "BadRequest",
        AbeError::UngrantedAttribute(_) | AbeError::ForeignAttribute { .. } => "NoGrants",
    };
    let details = match &e {
        AbeError::AuthorityUnavailable(id) | AbeError::UnknownAuthority(id) => serde_json::json!({ "authority": id }),
        _ => Json::Null,
    };
    ApiError::new(code, e.to_string()).with_details(details)
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

fn to_json<T: Serialize>(v: T) -> Result<Json, ApiError> {
    serde_json::to_value(v).map_err(ApiError::internal)
}

fn parse_digest(s: &str, what: &str) -> Result<Digest, ApiError> {
    s.parse().map_err(|_| ApiError::bad_request(format!("`{s}` is not a {what} id")))
}

/// The caller's signature must cover exactly this endpoint.
fn check_auth(auth: &RequestAuth, endpoint: &str) -> Result<AccountId, ApiError> {
    if auth.endpoint != endpoint {
        return Err(ApiError::new(
            "Unauthorized",
            format!("request signed for `{}`, not `{endpoint}`", auth.endpoint),
        ));
    }
    if !auth.signature_valid() {
        return Err(ApiError::new("Unauthorized", "request signature does not verify"));
    }
    Ok(auth.account())
}

fn require_auth(req: &ApiRequest) -> Result<&RequestAuth, ApiError> {
    let auth = req
        .auth
        .as_ref()
        .ok_or_else(|| ApiError::new("Unauthorized", format!("`{}` requires a signed request", req.endpoint())))?;
    if auth.body_digest != Digest::of(&req.body) {
        return Err(ApiError::new("Unauthorized", "request signature does not cover this body"));
    }
    Ok(auth)
}

fn status_of(inst: &InstanceState) -> &'static str {
    inst.status.as_str()
}

impl Gateway {
    pub fn new(node: Arc<LedgerNode>, cas: CasStore, authorities: Arc<AuthorityRegistry>, config: GatewayConfig) -> Self {
        let rng = match config.rng_seed {
            Some(seed) => StdRng::seed_from_u64(seed),
            None => StdRng::from_entropy(),
        };
        Self {
            node,
            cas,
            authorities,
            admins: RwLock::new(config.admins),
            rng: Mutex::new(rng),
        }
    }

    pub fn node(&self) -> &Arc<LedgerNode> {
        &self.node
    }

    pub fn cas(&self) -> &CasStore {
        &self.cas
    }

    pub fn authorities(&self) -> &Arc<AuthorityRegistry> {
        &self.authorities
    }

    pub fn add_admin(&self, account: AccountId) {
        self.admins.write().expect("admin lock").insert(account);
    }

    fn rng(&self) -> std::sync::MutexGuard<'_, StdRng> {
        self.rng.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn process_call(&self, call: &str, args: NamedArgs) -> Result<CallResult, ApiError> {
        self.node.call(&process_contract_id(), call, args)
    }

    fn conf_call(&self, call: &str, args: NamedArgs) -> Result<CallResult, ApiError> {
        self.node.call(&confidentiality_contract_id(), call, args)
    }

    /// Runs `f` against both contracts under the ledger lock.
    fn with_state<T>(&self, f: impl FnOnce(&ProcessContract, &ConfidentialityContract) -> T) -> T {
        self.node.read(|ledger| {
            let p = ledger
                .contract::<ProcessContract>(&process_contract_id())
                .expect("process contract deployed");
            let c = ledger
                .contract::<ConfidentialityContract>(&confidentiality_contract_id())
                .expect("confidentiality contract deployed");
            f(p, c)
        })
    }

    fn process_record(&self, pid: &Digest) -> Result<ProcessRecord, ApiError> {
        self.with_state(|p, _| p.process(pid).cloned())
            .ok_or_else(|| ApiError::new("UnknownProcess", format!("no process {pid}")))
    }

    fn instance_state(&self, iid: &Digest) -> Result<(InstanceState, ProcessRecord), ApiError> {
        self.with_state(|p, _| {
            let inst = p.instance(iid)?.clone();
            let rec = p.process(&inst.process_id)?.clone();
            Some((inst, rec))
        })
        .ok_or_else(|| ApiError::new("UnknownInstance", format!("no instance {iid}")))
    }

    // Configure

    pub fn configure(&self, auth: &RequestAuth, req: ConfigureRequest) -> Result<ConfigureResponse, ApiError> {
        check_auth(auth, "POST /processes")?;
        let model = parse_choreography(&req.spec).map_err(|e| {
            let details = match &e {
                ChorError::Invalid(issues) => serde_json::json!({ "issues": issues }),
                _ => Json::Null,
            };
            ApiError::new("SpecInvalid", e.to_string()).with_details(details)
        })?;
        let mut custom_roles = BTreeMap::new();
        for (role, attr) in &req.custom_roles {
            let attr: Attribute = attr
                .parse()
                .map_err(|e| ApiError::bad_request(format!("custom role `{role}`: {e}")))?;
            if model.is_participant(role) {
                return Err(ApiError::new(
                    "SpecInvalid",
                    format!("custom role `{role}` is already a participant"),
                ));
            }
            custom_roles.insert(role.clone(), attr);
        }
        let spec_locator = self.cas.put(req.spec.as_bytes()).map_err(cas_error)?;
        let args = NamedArgs::new()
            .with_str("spec_locator", &spec_locator.to_string())
            .with_bytes("spec_doc", req.spec.as_bytes())
            .with_list("certifiers", &req.certifiers.iter().map(ToString::to_string).collect::<Vec<_>>())
            .with_list(
                "custom_roles",
                &custom_roles.iter().map(|(r, a)| format!("{r}={a}")).collect::<Vec<_>>(),
            )
            .with_u64("deploy_nonce", req.deploy_nonce);
        let res = self.process_call("deploy_process", auth.attach(args))?;
        let process_id = parse_digest(&res.ret.str("process_id").map_err(ApiError::internal)?, "process")?;
        Ok(ConfigureResponse {
            process_id,
            spec_locator: spec_locator.to_string(),
            confinement_attribute: confinement_attribute(&process_id).to_string(),
            drafts: compose_drafts(&model, &process_id, &custom_roles),
            tx_id: res.tx_id,
        })
    }

    pub fn confirm_policies(&self, auth: &RequestAuth, pid: &Digest, req: ConfirmRequest) -> Result<ConfirmResponse, ApiError> {
        let caller = check_auth(auth, &format!("POST /processes/{pid}/policies"))?;
        let rec = self.process_record(pid)?;
        if rec.owner != caller {
            return Err(ApiError::new("NotOwner", "only the process owner confirms policies"));
        }
        let mut results = Vec::new();
        for entry in req.policies {
            let outcome = (|| {
                let tree = parse_policy(&entry.policy).map_err(|e| {
                    ApiError::new("PolicyParseError", e.to_string())
                        .with_details(serde_json::json!({ "offset": e.offset }))
                })?;
                // Stored in its normalized rendering so equal policies share a locator.
                let text = tree.render();
                let locator = self.cas.put(text.as_bytes()).map_err(cas_error)?;
                let args = NamedArgs::new()
                    .with_str("process_id", &pid.to_hex())
                    .with_str("task_id", &entry.task_id)
                    .with_str("policy", &text)
                    .with_str("policy_locator", &locator.to_string());
                self.conf_call("register_policy", auth.attach(args))?;
                Ok::<_, ApiError>(locator)
            })();
            results.push(match outcome {
                Ok(loc) => ConfirmResult {
                    task_id: entry.task_id,
                    policy_locator: Some(loc.to_string()),
                    error: None,
                },
                Err(e) => ConfirmResult {
                    task_id: entry.task_id,
                    policy_locator: None,
                    error: Some(e),
                },
            });
        }
        Ok(ConfirmResponse { results })
    }

    // Instantiate

    pub fn register_participant(
        &self,
        auth: &RequestAuth,
        pid: &Digest,
        req: RegisterRequest,
    ) -> Result<RegisterResponse, ApiError> {
        let caller = check_auth(auth, &format!("POST /processes/{pid}/participants"))?;
        let att = req.attestation;
        if att.process_id != *pid {
            return Err(ApiError::bad_request("attestation names another process"));
        }
        if att.account != caller {
            return Err(ApiError::new("WrongAccount", "accounts register themselves"));
        }
        let rec = self.process_record(pid)?;
        if !rec.is_role(&att.role) {
            return Err(ApiError::new("UnknownRole", format!("`{}` is not a role of this process", att.role)));
        }
        let attributes = att
            .attributes
            .iter()
            .map(|a| a.parse::<Attribute>())
            .collect::<Result<BTreeSet<_>, _>>()
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let bad = || ApiError::new("BadAttestation", "attestation is not signed by a registered certifier");
        if !rec.certifiers.contains(&att.certifier_key.account()) {
            return Err(bad());
        }
        if !att
            .certifier_key
            .verify(&grant_signing_message(&caller, &attributes, att.epoch), &att.grant_signature)
        {
            return Err(bad());
        }
        let participant = rec.model.is_participant(&att.role);
        if participant {
            let sig = att.role_signature.as_ref().ok_or_else(bad)?;
            if !att.certifier_key.verify(&bind_role_message(pid, &att.role, &caller), sig) {
                return Err(bad());
            }
            let args = NamedArgs::new()
                .with_str("process_id", &pid.to_hex())
                .with_str("role", &att.role)
                .with_str("account", &caller.to_string())
                .with_str("certifier_key", &att.certifier_key.to_string())
                .with_bytes("attestation", &sig.0);
            self.process_call("bind_role", auth.attach(args))?;
        }
        let granted: Vec<String> = attributes.iter().map(ToString::to_string).collect();
        let args = NamedArgs::new()
            .with_str("process_id", &pid.to_hex())
            .with_str("user", &caller.to_string())
            .with_list("attributes", &granted)
            .with_u64("epoch", att.epoch)
            .with_str("certifier_key", &att.certifier_key.to_string())
            .with_bytes("attestation", &att.grant_signature.0);
        let res = self.conf_call("record_grant", auth.attach(args))?;
        Ok(RegisterResponse {
            role: att.role,
            account: caller,
            bound: participant,
            granted,
            duplicate_grant: res.ret.str("duplicate").is_ok_and(|d| d == "true"),
        })
    }

    pub fn instantiate(&self, auth: &RequestAuth, pid: &Digest) -> Result<InstantiateResponse, ApiError> {
        check_auth(auth, &format!("POST /processes/{pid}/instances"))?;
        self.process_record(pid)?;
        let args = NamedArgs::new().with_str("process_id", &pid.to_hex());
        let res = self.process_call("create_instance", auth.attach(args))?;
        let iid = parse_digest(&res.ret.str("instance_id").map_err(ApiError::internal)?, "instance")?;
        let (inst, rec) = self.instance_state(&iid)?;
        Ok(InstantiateResponse {
            instance_id: iid,
            enabled: rec.model.enabled_tasks(&inst.marking),
            status: status_of(&inst).to_owned(),
            state_digest: inst.digest(),
            tx_id: res.tx_id,
        })
    }

    // Transact

    pub fn transact(
        &self,
        auth: &RequestAuth,
        iid: &Digest,
        task_id: &str,
        req: TransactRequest,
    ) -> Result<TransactResponse, ApiError> {
        let caller = check_auth(auth, &format!("POST /instances/{iid}/tasks/{task_id}"))?;
        let (inst, rec) = self.instance_state(iid)?;
        let declared = rec
            .model
            .task_message(task_id)
            .map(|m| m.visibility)
            .ok_or_else(|| ApiError::new("NotEnabled", format!("`{task_id}` is not a task of this process")))?;
        let visibility = req.visibility.unwrap_or(declared);

        let mut args = NamedArgs::new()
            .with_str("instance_id", &iid.to_hex())
            .with_str("task_id", task_id)
            .with_str("visibility", visibility.as_str());
        let mut ciphertext_locator = None;
        match visibility {
            Visibility::Public => {
                args = args.with_str("payload", &serde_json::to_string(&req.payload).map_err(ApiError::internal)?);
            }
            Visibility::Confidential => {
                // Nothing is encrypted or notarized for a move the contract
                // would refuse anyway.
                self.precheck_move(&inst, &rec, &caller, task_id)?;
                if declared != Visibility::Confidential {
                    return Err(ApiError::new("SchemaViolation", format!("`{task_id}` carries a PUBLIC message")));
                }
                let stored = self.store_confidential_inner(auth, iid, task_id, &req.payload)?;
                args = args.with_str("ciphertext_locator", &stored.ciphertext_locator);
                ciphertext_locator = Some(stored.ciphertext_locator);
            }
        }
        let res = self.process_call("execute_task", auth.attach(args))?;
        let ret = &res.ret;
        let get = |k: &str| ret.str(k).map_err(ApiError::internal);
        Ok(TransactResponse {
            message_id: parse_digest(&get("message_id")?, "message")?,
            visibility,
            ciphertext_locator,
            enabled: ret.list("enabled").map_err(ApiError::internal)?,
            status: get("status")?,
            state_digest: parse_digest(&get("state_digest")?, "state")?,
            tx_id: res.tx_id,
            block_height: res.block_height,
        })
    }

    fn precheck_move(&self, inst: &InstanceState, rec: &ProcessRecord, caller: &AccountId, task_id: &str) -> Result<(), ApiError> {
        if inst.status == InstanceStatus::Completed {
            return Err(ApiError::new("InstanceCompleted", "instance is completed"));
        }
        let task = rec.model.task(task_id).expect("checked by caller");
        if inst.bindings.get(&task.initiator) != Some(caller) {
            return Err(ApiError::new(
                "WrongInitiator",
                format!("`{task_id}` is initiated by the {} role", task.initiator),
            ));
        }
        if !rec.model.enabled_tasks(&inst.marking).iter().any(|t| t == task_id) {
            return Err(ApiError::new("NotEnabled", format!("`{task_id}` is not enabled")));
        }
        Ok(())
    }

    pub fn store_confidential(&self, auth: &RequestAuth, req: StoreRequest) -> Result<StoreResponse, ApiError> {
        check_auth(auth, "POST /confidential/messages")?;
        self.store_confidential_inner(auth, &req.instance_id, &req.task_id, &req.payload)
    }

    /// Encrypts under the registered policy, stores the envelope and
    /// notarizes it. The payload must satisfy the task's schema.
    fn store_confidential_inner(
        &self,
        auth: &RequestAuth,
        iid: &Digest,
        task_id: &str,
        payload: &Json,
    ) -> Result<StoreResponse, ApiError> {
        let (inst, rec) = self.instance_state(iid)?;
        let message = rec
            .model
            .task_message(task_id)
            .ok_or_else(|| ApiError::new("UnknownTask", format!("`{task_id}` is not a task of this process")))?;
        message
            .check_payload(payload)
            .map_err(|m| ApiError::new("SchemaViolation", m))?;
        let (policy_locator, epoch) = self
            .with_state(|_, c| c.policy(&inst.process_id, task_id).map(|p| (p.policy_locator, c.epoch())))
            .ok_or_else(|| ApiError::new("NoPolicy", format!("no policy registered for `{task_id}`")))?;
        let policy_text = self.cas.get(&policy_locator).map_err(cas_error)?;
        let policy = parse_policy(&String::from_utf8_lossy(&policy_text))
            .map_err(|e| ApiError::internal(format!("registered policy no longer parses: {e}")))?;

        let plaintext = serde_json::to_vec(payload).map_err(ApiError::internal)?;
        let envelope = {
            let mut rng = self.rng();
            encrypt(&plaintext, &policy, self.authorities.as_ref(), epoch, &mut *rng).map_err(abe_error)?
        };
        let ciphertext = self.cas.put(&envelope.to_bytes()).map_err(cas_error)?;
        let args = NamedArgs::new()
            .with_str("instance_id", &iid.to_hex())
            .with_str("task_id", task_id)
            .with_str("ciphertext_locator", &ciphertext.to_string())
            .with_str("policy_locator", &policy_locator.to_string());
        let res = self
            .conf_call("notarize_store", auth.attach(args))
            .map_err(|e| ApiError::new("NotarizationFailed", e.to_string()).with_details(serde_json::json!({ "cause": e.code })))?;
        Ok(StoreResponse {
            message_id: parse_digest(&res.ret.str("message_id").map_err(ApiError::internal)?, "message")?,
            ciphertext_locator: ciphertext.to_string(),
            policy_locator: policy_locator.to_string(),
        })
    }

    // Inspect

    pub fn inspect(&self, iid: &Digest) -> Result<InstanceView, ApiError> {
        let (inst, rec) = self.instance_state(iid)?;
        let iid_hex = iid.to_hex();
        let (stores, events) = self.node.read(|ledger| {
            let conf = ledger
                .contract::<ConfidentialityContract>(&confidentiality_contract_id())
                .expect("confidentiality contract deployed");
            let stores: BTreeMap<Digest, (Locator, String)> = inst
                .message_log
                .iter()
                .filter_map(|m| {
                    let s = conf.store(&m.message_id)?;
                    let policy = conf.policy(&inst.process_id, &m.task_id).map(|p| p.policy.clone())?;
                    Some((m.message_id, (s.policy_locator, policy)))
                })
                .collect();
            let events: Vec<EventView> = ledger
                .events()
                .iter()
                .filter(|e| e.payload.str("instance_id").is_ok_and(|i| i == iid_hex))
                .map(EventView::from)
                .collect();
            (stores, events)
        });
        let model = &rec.model;
        let enabled = model
            .enabled_tasks(&inst.marking)
            .into_iter()
            .map(|t| {
                let def = model.task(&t).expect("enabled task exists");
                EnabledTask {
                    account: inst.bindings.get(&def.initiator).copied(),
                    initiator: def.initiator.clone(),
                    recipient: def.recipient.clone(),
                    visibility: model.task_message(&t).map_or(Visibility::Public, |m| m.visibility),
                    task_id: t,
                }
            })
            .collect();
        let message_log = inst
            .message_log
            .iter()
            .map(|m| {
                let mut view = MessageView {
                    message_id: m.message_id,
                    task_id: m.task_id.clone(),
                    sender: m.sender,
                    visibility: m.body.visibility(),
                    block_height: m.block_height,
                    payload: None,
                    ciphertext_locator: None,
                    policy_locator: None,
                    policy: None,
                };
                match &m.body {
                    MessageBody::Public(fields) => {
                        view.payload = Some(Json::Object(
                            fields.iter().map(|(k, v)| (k.clone(), v.to_json())).collect(),
                        ));
                    }
                    MessageBody::Confidential(loc) => {
                        view.ciphertext_locator = Some(loc.to_string());
                        if let Some((pl, text)) = stores.get(&m.message_id) {
                            view.policy_locator = Some(pl.to_string());
                            view.policy = Some(text.clone());
                        }
                    }
                }
                view
            })
            .collect();
        Ok(InstanceView {
            instance_id: *iid,
            process_id: inst.process_id,
            status: status_of(&inst).to_owned(),
            enabled,
            marking: inst.marking.labelled(model),
            bindings: inst.bindings.clone(),
            variables: inst.variables.iter().map(|(k, v)| (k.clone(), v.to_json())).collect(),
            message_log,
            events,
            state_digest: inst.digest(),
        })
    }

    pub fn process_view(&self, pid: &Digest) -> Result<ProcessView, ApiError> {
        let rec = self.process_record(pid)?;
        let (policies, instances, epoch) = self.with_state(|p, c| {
            let policies: Vec<RegisteredPolicy> = c
                .policies_of(pid)
                .map(|r| RegisteredPolicy {
                    task_id: r.task_id.clone(),
                    policy: r.policy.clone(),
                    policy_locator: r.policy_locator.to_string(),
                })
                .collect();
            let instances: Vec<Digest> = p
                .instances()
                .values()
                .filter(|i| i.process_id == *pid)
                .map(|i| i.instance_id)
                .collect();
            (policies, instances, c.epoch())
        });
        let mut roles: Vec<RoleView> = rec
            .model
            .participants()
            .iter()
            .map(|r| RoleView {
                role: r.clone(),
                attribute: rec.role_attribute(r).to_string(),
                account: rec.bindings.get(r).copied(),
                custom: false,
            })
            .collect();
        roles.extend(rec.custom_roles.iter().map(|(r, a)| RoleView {
            role: r.clone(),
            attribute: a.to_string(),
            account: rec.bindings.get(r).copied(),
            custom: true,
        }));
        Ok(ProcessView {
            process_id: *pid,
            owner: rec.owner,
            model_id: rec.model.id().to_owned(),
            spec_locator: rec.spec_locator.to_string(),
            roles,
            certifiers: rec.certifiers.iter().copied().collect(),
            confinement_attribute: confinement_attribute(pid).to_string(),
            policies,
            drafts: compose_drafts(&rec.model, pid, &rec.custom_roles),
            instances,
            epoch,
        })
    }

    // Keys and reads

    pub fn request_key(&self, auth: &RequestAuth) -> Result<KeyResponse, ApiError> {
        let user = check_auth(auth, "POST /keys/requests")?;
        // Notarized whether or not anything is issued.
        self.conf_call("notarize_key_request", auth.attach(NamedArgs::new()))?;
        let by_epoch = self.with_state(|_, c| c.granted_by_epoch(&user));
        if by_epoch.is_empty() {
            return Err(ApiError::new("NoGrants", format!("{user} holds no attribute grants")));
        }
        let mut key = crate::abe::ABKey::empty(user);
        for (epoch, attrs) in &by_epoch {
            let partial = self.authorities.issue(&user, attrs, attrs, *epoch).map_err(abe_error)?;
            key.merge(partial).map_err(abe_error)?;
        }
        let sealed = {
            let mut rng = self.rng();
            seal_to(&auth.public_key, &key.to_bytes(), &mut *rng).map_err(ApiError::internal)?
        };
        Ok(KeyResponse {
            sealed_key: hex::encode(sealed),
            entries: key.len(),
            attributes: key.attributes(),
        })
    }

    pub fn read_confidential(&self, auth: &RequestAuth, mid: &Digest) -> Result<ReadResponse, ApiError> {
        check_auth(auth, &format!("POST /confidential/messages/{mid}/read"))?;
        let (store, policy) = self
            .with_state(|p, c| {
                let s = c.store(mid)?.clone();
                let pid = p.instance(&s.instance_id)?.process_id;
                let policy = c.policy(&pid, &s.task_id)?.policy.clone();
                Some((s, policy))
            })
            .ok_or_else(|| ApiError::new("UnknownMessage", format!("no stored message {mid}")))?;
        // The read is on the ledger before any ciphertext leaves.
        self.conf_call(
            "notarize_read",
            auth.attach(NamedArgs::new().with_str("message_id", &mid.to_hex())),
        )?;
        let bytes = self.cas.get(&store.ciphertext_locator).map_err(cas_error)?;
        CiphertextEnvelope::from_bytes(&bytes).map_err(abe_error)?;
        Ok(ReadResponse {
            message_id: *mid,
            instance_id: store.instance_id,
            task_id: store.task_id,
            policy,
            ciphertext_locator: store.ciphertext_locator.to_string(),
            envelope: hex::encode(bytes),
        })
    }

    pub fn bump_epoch(&self, auth: &RequestAuth) -> Result<EpochResponse, ApiError> {
        check_auth(auth, "POST /epochs")?;
        let res = self.conf_call("bump_epoch", auth.attach(NamedArgs::new()))?;
        Ok(EpochResponse {
            epoch: res.ret.u64("epoch").map_err(ApiError::internal)?,
        })
    }

    pub fn epoch(&self) -> EpochResponse {
        EpochResponse {
            epoch: self.with_state(|_, c| c.epoch()),
        }
    }

    // Authorities

    pub fn list_authorities(&self) -> Vec<AuthorityInfo> {
        self.authorities.list()
    }

    fn require_admin(&self, auth: &RequestAuth, endpoint: &str) -> Result<(), ApiError> {
        let caller = check_auth(auth, endpoint)?;
        if !self.admins.read().expect("admin lock").contains(&caller) {
            return Err(ApiError::new("NotAdmin", format!("{caller} is not an administrator")));
        }
        Ok(())
    }

    pub fn add_authority(&self, auth: &RequestAuth, req: AddAuthorityRequest) -> Result<AuthorityInfo, ApiError> {
        self.require_admin(auth, "POST /authorities")?;
        let seed = hex::decode(&req.seed).map_err(|_| ApiError::bad_request("seed must be hex"))?;
        self.authorities.add_local(&req.id, &seed).map_err(abe_error)
    }

    pub fn set_authority(&self, auth: &RequestAuth, id: &str, req: SetAuthorityRequest) -> Result<AuthorityInfo, ApiError> {
        self.require_admin(auth, &format!("POST /authorities/{id}"))?;
        self.authorities.set_enabled(id, req.enabled).map_err(abe_error)?;
        self.authorities
            .list()
            .into_iter()
            .find(|a| a.id == id)
            .ok_or_else(|| ApiError::new("UnknownAuthority", id.to_owned()))
    }

    // Ledger reads

    pub fn head(&self) -> crate::ledger::BlockHeader {
        self.node.read(|l| l.get_chain_head())
    }

    fn block_view(ledger: &Ledger, h: u64) -> Result<BlockView, ApiError> {
        let block = ledger
            .get_block(h)
            .map_err(|e| ApiError::new("OutOfRange", e.to_string()))?;
        let txs = block
            .txs
            .iter()
            .map(|tx| TxView {
                tx_id: tx.tx_id,
                sender: tx.sender,
                contract: tx.contract.as_str().to_owned(),
                call: tx.call.clone(),
                nonce: tx.nonce,
                size_bytes: tx.encoded_len(),
                args: tx.args.to_text_map(),
                outcome: match ledger.outcome(&tx.tx_id) {
                    Some(TxOutcome { result: Ok(_), .. }) => "ACCEPTED".to_owned(),
                    Some(TxOutcome { result: Err(e), .. }) => e.code.clone(),
                    None => "PENDING".to_owned(),
                },
            })
            .collect();
        Ok(BlockView {
            height: block.height,
            prev_hash: block.prev_hash,
            block_hash: block.block_hash,
            state_root: block.state_root,
            txs,
        })
    }

    pub fn block(&self, h: u64) -> Result<BlockView, ApiError> {
        self.node.read(|l| Self::block_view(l, h))
    }

    pub fn blocks(&self) -> Vec<crate::ledger::BlockHeader> {
        self.node.read(|l| l.blocks().iter().map(|b| b.header()).collect())
    }

    pub fn events(&self, filter: &EventFilter) -> Vec<EventView> {
        self.node.read(|l| l.query_events(filter).iter().map(EventView::from).collect())
    }

    pub fn verify(&self) -> VerifyView {
        let report = self.node.read(|l| l.verify_chain());
        VerifyView {
            clean: report.is_clean(),
            blocks_checked: report.blocks_checked,
            divergent_height: report.divergent_height(),
            report: report.to_string(),
        }
    }

    /// Re-executes the chain from genesis and compares every instance state
    /// with the live one under canonical serialization.
    pub fn replay(&self) -> ReplayView {
        let (blocks, live_root, live) = self.node.read(|l| {
            let p = l.contract::<ProcessContract>(&process_contract_id()).expect("process contract");
            let live: BTreeMap<Digest, Vec<u8>> = p.instances().iter().map(|(k, v)| (*k, v.to_bytes())).collect();
            (l.blocks().to_vec(), l.state_root(), live)
        });
        replay_blocks(blocks, live_root, &live)
    }

    // Router

    /// Dispatches a transport-neutral request to the matching operation.
    pub fn handle(&self, req: &ApiRequest) -> Result<Json, ApiError> {
        let segs: Vec<&str> = req.path.trim_matches('/').split('/').collect();
        let auth = || require_auth(req);
        match (req.method, segs.as_slice()) {
            (Method::Get, ["health"]) => Ok(serde_json::json!({ "status": "ok" })),
            (Method::Post, ["processes"]) => to_json(self.configure(auth()?, parse_body(&req.body)?)?),
            (Method::Get, ["processes", pid]) => to_json(self.process_view(&parse_digest(pid, "process")?)?),
            (Method::Post, ["processes", pid, "policies"]) => {
                to_json(self.confirm_policies(auth()?, &parse_digest(pid, "process")?, parse_body(&req.body)?)?)
            }
            (Method::Post, ["processes", pid, "participants"]) => {
                to_json(self.register_participant(auth()?, &parse_digest(pid, "process")?, parse_body(&req.body)?)?)
            }
            (Method::Post, ["processes", pid, "instances"]) => {
                to_json(self.instantiate(auth()?, &parse_digest(pid, "process")?)?)
            }
            (Method::Post, ["instances", iid, "tasks", task]) => {
                to_json(self.transact(auth()?, &parse_digest(iid, "instance")?, task, parse_body(&req.body)?)?)
            }
            (Method::Get, ["instances", iid]) => to_json(self.inspect(&parse_digest(iid, "instance")?)?),
            (Method::Post, ["confidential", "messages"]) => {
                to_json(self.store_confidential(auth()?, parse_body(&req.body)?)?)
            }
            (Method::Post, ["confidential", "messages", mid, "read"]) => {
                to_json(self.read_confidential(auth()?, &parse_digest(mid, "message")?)?)
            }
            (Method::Post, ["keys", "requests"]) => to_json(self.request_key(auth()?)?),
            (Method::Get, ["epoch"]) => to_json(self.epoch()),
            (Method::Post, ["epochs"]) => to_json(self.bump_epoch(auth()?)?),
            (Method::Get, ["authorities"]) => to_json(self.list_authorities()),
            (Method::Post, ["authorities"]) => to_json(self.add_authority(auth()?, parse_body(&req.body)?)?),
            (Method::Post, ["authorities", id]) => to_json(self.set_authority(auth()?, id, parse_body(&req.body)?)?),
            (Method::Get, ["ledger", "head"]) => to_json(self.head()),
            (Method::Get, ["ledger", "blocks"]) => to_json(self.blocks()),
            (Method::Get, ["ledger", "blocks", h]) => {
                let h: u64 = h.parse().map_err(|_| ApiError::bad_request("block height must be an integer"))?;
                to_json(self.block(h)?)
            }
            (Method::Get, ["ledger", "events"]) => to_json(self.events(&event_filter(&req.query)?)),
            (Method::Get, ["ledger", "verify"]) => to_json(self.verify()),
            (Method::Get, ["ledger", "replay"]) => to_json(self.replay()),
            _ => Err(ApiError::new("NotFound", format!("no route for {}", req.endpoint()))),
        }
    }
}

fn event_filter(query: &BTreeMap<String, String>) -> Result<EventFilter, ApiError> {
    let height = |k: &str| -> Result<Option<u64>, ApiError> {
        query
            .get(k)
            .map(|v| v.parse().map_err(|_| ApiError::bad_request(format!("`{k}` must be an integer"))))
            .transpose()
    };
    Ok(EventFilter {
        contract: query.get("contract").map(|c| crate::ledger::ContractId::new(c)),
        topic: query.get("topic").cloned(),
        from_height: height("from")?,
        to_height: height("to")?,
    })
}

/// Replays `blocks` over fresh contracts and compares instance states with
/// `live`.
pub fn replay_blocks(blocks: Vec<crate::ledger::Block>, live_root: Digest, live: &BTreeMap<Digest, Vec<u8>>) -> ReplayView {
    match Ledger::from_blocks(blocks, standard_contracts()) {
        Err(_) => ReplayView {
            clean: false,
            instances: 0,
            identical: false,
            state_root_matches: false,
            mismatched: Vec::new(),
        },
        Ok(replayed) => {
            let p = replayed
                .contract::<ProcessContract>(&process_contract_id())
                .expect("process contract");
            let again: BTreeMap<Digest, Vec<u8>> = p.instances().iter().map(|(k, v)| (*k, v.to_bytes())).collect();
            let mut mismatched: Vec<Digest> = live
                .iter()
                .filter(|(k, v)| again.get(*k) != Some(*v))
                .map(|(k, _)| *k)
                .collect();
            mismatched.extend(again.keys().filter(|k| !live.contains_key(*k)));
            ReplayView {
                clean: true,
                instances: again.len(),
                identical: mismatched.is_empty(),
                state_root_matches: replayed.state_root() == live_root,
                mismatched,
            }
        }
    }
}
