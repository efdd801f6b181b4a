//! The process contract: deploys choreographies, binds roles and enforces
//! who may fire which task.

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::auth::{AuthNonces, Caller};
use super::{account_arg, confidentiality_contract_id, digest_arg, ConfidentialityContract, PROCESS_CONTRACT};
use crate::abe::Attribute;
use crate::cas::Locator;
use crate::chor::{parse_choreography, ChorError, Choreography, Marking, Value, Vars, Visibility};
use crate::codec::{Encoder, NamedArgs};
use crate::digest::Digest;
use crate::identity::{AccountId, PublicKey, Signature};
use crate::ledger::{CallContext, CallOutput, Contract, ContractError, ContractId};

/// What a certifier signs to attest that `account` plays `role`.
pub fn bind_role_message(process_id: &Digest, role: &str, account: &AccountId) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str("confetty/bind-role").raw(&process_id.0).str(role).raw(&account.0 .0);
    enc.finish()
}

#[derive(Debug, Clone)]
pub struct ProcessRecord {
    pub process_id: Digest,
    pub owner: AccountId,
    pub spec_locator: Locator,
    pub deploy_nonce: u64,
    pub certifiers: BTreeSet<AccountId>,
    /// Readers that take no part in the choreography, with the attribute
    /// that stands for them in policies.
    pub custom_roles: BTreeMap<String, Attribute>,
    pub bindings: BTreeMap<String, AccountId>,
    pub instance_count: u64,
    pub model: Arc<Choreography>,
}

impl ProcessRecord {
    fn encode(&self, enc: &mut Encoder) {
        enc.raw(&self.process_id.0);
        self.owner.encode(enc);
        enc.str(&self.spec_locator.to_string()).u64(self.deploy_nonce);
        enc.u32(self.certifiers.len() as u32);
        for c in &self.certifiers {
            c.encode(enc);
        }
        enc.u32(self.custom_roles.len() as u32);
        for (role, attr) in &self.custom_roles {
            enc.str(role).str(&attr.to_string());
        }
        enc.u32(self.bindings.len() as u32);
        for (role, account) in &self.bindings {
            enc.str(role);
            account.encode(enc);
        }
        enc.u64(self.instance_count);
    }

    pub fn is_role(&self, role: &str) -> bool {
        self.model.is_participant(role) || self.custom_roles.contains_key(role)
    }

    /// Roles bound to `account`, participants first.
    pub fn roles_of(&self, account: &AccountId) -> Vec<String> {
        self.bindings
            .iter()
            .filter(|(_, a)| *a == account)
            .map(|(r, _)| r.clone())
            .collect()
    }

    pub fn unbound_participants(&self) -> Vec<String> {
        self.model
            .participants()
            .iter()
            .filter(|p| !self.bindings.contains_key(*p))
            .cloned()
            .collect()
    }

    /// The attribute standing for `role` in this process's policies.
    pub fn role_attribute(&self, role: &str) -> Attribute {
        self.custom_roles
            .get(role)
            .cloned()
            .unwrap_or_else(|| self.model.role_attribute(role))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceStatus {
    Running,
    Completed,
}

impl InstanceStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            InstanceStatus::Running => "RUNNING",
            InstanceStatus::Completed => "COMPLETED",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    Public(BTreeMap<String, Value>),
    Confidential(Locator),
}

impl MessageBody {
    pub fn visibility(&self) -> Visibility {
        match self {
            MessageBody::Public(_) => Visibility::Public,
            MessageBody::Confidential(_) => Visibility::Confidential,
        }
    }

    /// Canonical body bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        match self {
            MessageBody::Public(fields) => {
                enc.u8(0).u32(fields.len() as u32);
                for (k, v) in fields {
                    enc.str(k);
                    v.encode(&mut enc);
                }
            }
            MessageBody::Confidential(loc) => {
                enc.u8(1).str(&loc.to_string());
            }
        }
        enc.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageRecord {
    pub message_id: Digest,
    pub task_id: String,
    pub sender: AccountId,
    pub block_height: u64,
    pub body: MessageBody,
}

#[derive(Debug, Clone)]
pub struct InstanceState {
    pub instance_id: Digest,
    pub process_id: Digest,
    pub marking: Marking,
    pub bindings: BTreeMap<String, AccountId>,
    pub variables: Vars,
    pub message_log: Vec<MessageRecord>,
    pub status: InstanceStatus,
}

impl InstanceState {
    pub fn encode(&self, enc: &mut Encoder) {
        enc.raw(&self.instance_id.0).raw(&self.process_id.0);
        self.marking.encode(enc);
        enc.u32(self.bindings.len() as u32);
        for (role, account) in &self.bindings {
            enc.str(role);
            account.encode(enc);
        }
        enc.u32(self.variables.len() as u32);
        for (k, v) in &self.variables {
            enc.str(k);
            v.encode(enc);
        }
        enc.u32(self.message_log.len() as u32);
        for m in &self.message_log {
            enc.raw(&m.message_id.0).str(&m.task_id);
            m.sender.encode(enc);
            enc.u64(m.block_height).bytes(&m.body.to_bytes());
        }
        enc.str(self.status.as_str());
    }

    /// Canonical serialization, used for replay comparison.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.finish()
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.to_bytes())
    }

    pub fn task_trace(&self) -> Vec<String> {
        self.message_log.iter().map(|m| m.task_id.clone()).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProcessContract {
    processes: BTreeMap<Digest, ProcessRecord>,
    instances: BTreeMap<Digest, InstanceState>,
    nonces: AuthNonces,
}

fn unknown_process(id: &Digest) -> ContractError {
    ContractError::new("UnknownProcess", format!("no process {id}"))
}

fn chor_error(e: ChorError) -> ContractError {
    let code = match &e {
        ChorError::NotEnabled(_) | ChorError::UnknownElement(_) => "NotEnabled",
        ChorError::UnboundVariable(_) => "UnboundVariable",
        ChorError::TypeMismatch(_) => "TypeMismatch",
        ChorError::NoRoute(_) => "NoRoute",
        ChorError::GatewayLivelock => "GatewayLivelock",
        _ => "InvalidSpec",
    };
    ContractError::new(code, e.to_string())
}

/// Public message ids also cover the log position so a loop can repeat a
/// task with an identical payload.
pub(crate) fn public_message_id(instance: &Digest, task: &str, index: usize, body: &[u8]) -> Digest {
    Digest::of_encoded(|e| {
        e.str("confetty/public-message")
            .raw(&instance.0)
            .str(task)
            .u64(index as u64)
            .bytes(body);
    })
}

pub(crate) fn instance_id(process_id: &Digest, n: u64) -> Digest {
    Digest::of_encoded(|e| {
        e.str("confetty/instance").raw(&process_id.0).u64(n);
    })
}

pub(crate) fn process_id(spec: &Locator, owner: &AccountId, deploy_nonce: u64) -> Digest {
    Digest::of_encoded(|e| {
        e.str("confetty/process").str(&spec.to_string());
        owner.encode(e);
        e.u64(deploy_nonce);
    })
}

impl ProcessContract {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn process(&self, id: &Digest) -> Option<&ProcessRecord> {
        self.processes.get(id)
    }

    pub fn processes(&self) -> impl Iterator<Item = &ProcessRecord> {
        self.processes.values()
    }

    pub fn instance(&self, id: &Digest) -> Option<&InstanceState> {
        self.instances.get(id)
    }

    pub fn instances(&self) -> &BTreeMap<Digest, InstanceState> {
        &self.instances
    }

    pub fn model_of_instance(&self, id: &Digest) -> Option<&Choreography> {
        let inst = self.instances.get(id)?;
        self.processes.get(&inst.process_id).map(|p| p.model.as_ref())
    }

    fn deploy_process(&mut self, ctx: &CallContext<'_>, args: &NamedArgs) -> Result<CallOutput, ContractError> {
        let caller = self.nonces.resolve(ctx, args, &["POST /processes".to_owned()])?;
        let invalid = |m: String| ContractError::new("InvalidSpec", m);
        let spec_locator: Locator = args
            .str("spec_locator")?
            .parse()
            .map_err(|e| invalid(format!("bad spec locator: {e}")))?;
        let doc = args.raw("spec_doc")?;
        if !crate::cas::verify(&spec_locator, doc) {
            return Err(invalid(format!("{spec_locator} does not resolve to the supplied document")));
        }
        let text = std::str::from_utf8(doc).map_err(|_| invalid("spec document is not UTF-8".into()))?;
        let model = parse_choreography(text).map_err(|e| invalid(e.to_string()))?;

        let mut certifiers = BTreeSet::new();
        for c in args.list("certifiers")? {
            certifiers.insert(
                c.parse::<AccountId>()
                    .map_err(|_| ContractError::new("BadArguments", format!("bad certifier account `{c}`")))?,
            );
        }
        if certifiers.is_empty() {
            return Err(ContractError::new("BadArguments", "at least one certifier is required"));
        }
        let mut custom_roles = BTreeMap::new();
        for entry in args.list("custom_roles")? {
            let (role, attr) = entry
                .split_once('=')
                .ok_or_else(|| ContractError::new("BadArguments", format!("custom role `{entry}` lacks `=attribute`")))?;
            let attr: Attribute = attr
                .parse()
                .map_err(|e| ContractError::new("BadArguments", format!("custom role `{role}`: {e}")))?;
            if model.is_participant(role) {
                return Err(invalid(format!("custom role `{role}` is already a participant")));
            }
            if custom_roles.insert(role.to_owned(), attr).is_some() {
                return Err(invalid(format!("custom role `{role}` listed twice")));
            }
        }
        let deploy_nonce = if args.contains("deploy_nonce") { args.u64("deploy_nonce")? } else { 0 };
        let id = process_id(&spec_locator, &caller.account, deploy_nonce);
        if self.processes.contains_key(&id) {
            return Err(ContractError::new("DuplicateDeploy", format!("process {id} already deployed")));
        }

        let event = NamedArgs::new()
            .with_str("process_id", &id.to_hex())
            .with_str("owner", &caller.account.to_string())
            .with_str("spec_locator", &spec_locator.to_string())
            .with_str("model_id", model.id())
            .with_list("participants", model.participants())
            .with_list("custom_roles", &custom_roles.keys().collect::<Vec<_>>())
            .with_list("certifiers", &certifiers.iter().map(ToString::to_string).collect::<Vec<_>>());
        self.processes.insert(
            id,
            ProcessRecord {
                process_id: id,
                owner: caller.account,
                spec_locator,
                deploy_nonce,
                certifiers,
                custom_roles,
                bindings: BTreeMap::new(),
                instance_count: 0,
                model: Arc::new(model),
            },
        );
        self.nonces.commit(&caller);
        Ok(CallOutput::new(NamedArgs::new().with_str("process_id", &id.to_hex())).event("ProcessDeployed", event))
    }

    fn bind_role(&mut self, ctx: &CallContext<'_>, args: &NamedArgs) -> Result<CallOutput, ContractError> {
        let pid = digest_arg(args, "process_id")?;
        let caller = self
            .nonces
            .resolve(ctx, args, &[format!("POST /processes/{pid}/participants")])?;
        let role = args.str("role")?;
        let account = account_arg(args, "account")?;
        let certifier_key: PublicKey = args
            .str("certifier_key")?
            .parse()
            .map_err(|_| ContractError::new("BadArguments", "bad certifier key"))?;
        let attestation = Signature::from_slice(args.raw("attestation")?)?;

        let rec = self.processes.get(&pid).ok_or_else(|| unknown_process(&pid))?;
        if !rec.is_role(&role) {
            return Err(ContractError::new("UnknownRole", format!("`{role}` is not a role of process {pid}")));
        }
        if !rec.certifiers.contains(&certifier_key.account())
            || !certifier_key.verify(&bind_role_message(&pid, &role, &account), &attestation)
        {
            return Err(ContractError::new("BadAttestation", "attestation is not signed by a registered certifier"));
        }
        if caller.account != account {
            return Err(ContractError::new("WrongAccount", "accounts register themselves"));
        }
        if let Some(bound) = rec.bindings.get(&role) {
            return Err(ContractError::new("RoleTaken", format!("`{role}` is already bound to {bound}")));
        }

        let rec = self.processes.get_mut(&pid).expect("checked above");
        rec.bindings.insert(role.clone(), account);
        self.nonces.commit(&caller);
        let event = NamedArgs::new()
            .with_str("process_id", &pid.to_hex())
            .with_str("role", &role)
            .with_str("account", &account.to_string())
            .with_str("certifier", &certifier_key.account().to_string());
        Ok(CallOutput::new(NamedArgs::new()).event("RoleBound", event))
    }

    fn create_instance(&mut self, ctx: &CallContext<'_>, args: &NamedArgs) -> Result<CallOutput, ContractError> {
        let pid = digest_arg(args, "process_id")?;
        let caller = self
            .nonces
            .resolve(ctx, args, &[format!("POST /processes/{pid}/instances")])?;
        let rec = self.processes.get(&pid).ok_or_else(|| unknown_process(&pid))?;
        if !rec
            .roles_of(&caller.account)
            .iter()
            .any(|r| rec.model.is_participant(r))
        {
            return Err(ContractError::new(
                "NotParticipant",
                format!("{} is bound to no participant role", caller.account),
            ));
        }
        let missing = rec.unbound_participants();
        if !missing.is_empty() {
            return Err(ContractError::new("UnboundRoles", missing.join(", ")));
        }

        let id = instance_id(&pid, rec.instance_count);
        let marking = rec.model.initial_marking();
        let enabled = rec.model.enabled_tasks(&marking);
        let status = if rec.model.is_completed(&marking) {
            InstanceStatus::Completed
        } else {
            InstanceStatus::Running
        };
        let state = InstanceState {
            instance_id: id,
            process_id: pid,
            marking,
            bindings: rec.bindings.clone(),
            variables: Vars::new(),
            message_log: Vec::new(),
            status,
        };
        self.instances.insert(id, state);
        self.processes.get_mut(&pid).expect("checked above").instance_count += 1;
        self.nonces.commit(&caller);
        let event = NamedArgs::new()
            .with_str("instance_id", &id.to_hex())
            .with_str("process_id", &pid.to_hex())
            .with_str("creator", &caller.account.to_string())
            .with_list("enabled", &enabled)
            .with_str("status", status.as_str());
        Ok(CallOutput::new(NamedArgs::new().with_str("instance_id", &id.to_hex())).event("InstanceCreated", event))
    }

    fn execute_task(&mut self, ctx: &CallContext<'_>, args: &NamedArgs) -> Result<CallOutput, ContractError> {
        let iid = digest_arg(args, "instance_id")?;
        let task_id = args.str("task_id")?;
        let caller: Caller = self
            .nonces
            .resolve(ctx, args, &[format!("POST /instances/{iid}/tasks/{task_id}")])?;
        let inst = self
            .instances
            .get(&iid)
            .ok_or_else(|| ContractError::new("UnknownInstance", format!("no instance {iid}")))?;
        if inst.status == InstanceStatus::Completed {
            return Err(ContractError::new("InstanceCompleted", format!("instance {iid} is completed")));
        }
        let model = self.processes[&inst.process_id].model.clone();
        let task = model
            .task(&task_id)
            .ok_or_else(|| ContractError::new("NotEnabled", format!("`{task_id}` is not a task of this process")))?;
        if inst.bindings.get(&task.initiator) != Some(&caller.account) {
            return Err(ContractError::new(
                "WrongInitiator",
                format!("`{task_id}` is initiated by the {} role", task.initiator),
            ));
        }
        if !model.enabled_tasks(&inst.marking).contains(&task_id) {
            return Err(ContractError::new("NotEnabled", format!("`{task_id}` is not enabled")));
        }

        let message = model.task_message(&task_id).expect("resolved at parse time");
        let schema = |m: String| ContractError::new("SchemaViolation", m);
        let visibility: Visibility = args.str("visibility")?.parse().map_err(schema)?;
        if visibility != message.visibility {
            return Err(schema(format!(
                "`{task_id}` carries a {} message",
                message.visibility.as_str()
            )));
        }
        let index = inst.message_log.len();
        let (body, message_id) = match visibility {
            Visibility::Public => {
                let raw = args.str("payload")?;
                let json: serde_json::Value =
                    serde_json::from_str(&raw).map_err(|e| schema(format!("payload is not JSON: {e}")))?;
                let fields = message.check_payload(&json).map_err(schema)?;
                let body = MessageBody::Public(fields);
                let id = public_message_id(&iid, &task_id, index, &body.to_bytes());
                (body, id)
            }
            Visibility::Confidential => {
                if args.contains("payload") {
                    return Err(schema("confidential tasks carry a locator, not a payload".into()));
                }
                let locator: Locator = args
                    .str("ciphertext_locator")?
                    .parse()
                    .map_err(|e| schema(format!("bad ciphertext locator: {e}")))?;
                let id = super::confidentiality::message_id(&iid, &task_id, &locator);
                let notarized = ctx
                    .view::<ConfidentialityContract>(&confidentiality_contract_id())
                    .and_then(|c| c.store(&id))
                    .is_some_and(|s| s.instance_id == iid && s.task_id == task_id);
                if !notarized {
                    return Err(ContractError::new(
                        "NotNotarized",
                        format!("no stored ciphertext {locator} for `{task_id}`"),
                    ));
                }
                (MessageBody::Confidential(locator), id)
            }
        };

        let mut vars = inst.variables.clone();
        if let MessageBody::Public(fields) = &body {
            for (k, v) in fields {
                vars.insert(format!("{task_id}.{k}"), v.clone());
            }
        }
        let marking = model.execute(&inst.marking, &task_id, &vars).map_err(chor_error)?;
        let status = if model.is_completed(&marking) {
            InstanceStatus::Completed
        } else {
            InstanceStatus::Running
        };
        let enabled = model.enabled_tasks(&marking);

        let mut event = NamedArgs::new()
            .with_str("instance_id", &iid.to_hex())
            .with_str("task_id", &task_id)
            .with_str("sender", &caller.account.to_string())
            .with_str("message_id", &message_id.to_hex())
            .with_str("visibility", visibility.as_str())
            .with_list("enabled", &enabled)
            .with_str("status", status.as_str());
        if let MessageBody::Confidential(loc) = &body {
            event = event.with_str("ciphertext_locator", &loc.to_string());
        }
        let inst = self.instances.get_mut(&iid).expect("checked above");
        inst.variables = vars;
        inst.marking = marking;
        inst.status = status;
        inst.message_log.push(MessageRecord {
            message_id,
            task_id,
            sender: caller.account,
            block_height: ctx.block_height,
            body,
        });
        let state_digest = inst.digest();
        self.nonces.commit(&caller);
        let ret = NamedArgs::new()
            .with_str("message_id", &message_id.to_hex())
            .with_str("state_digest", &state_digest.to_hex())
            .with_list("enabled", &enabled)
            .with_str("status", status.as_str());
        Ok(CallOutput::new(ret).event("TaskExecuted", event))
    }
}

impl Contract for ProcessContract {
    fn id(&self) -> ContractId {
        ContractId::new(PROCESS_CONTRACT)
    }

    fn execute(&mut self, ctx: &CallContext<'_>, call: &str, args: &NamedArgs) -> Result<CallOutput, ContractError> {
        match call {
            "deploy_process" => self.deploy_process(ctx, args),
            "bind_role" => self.bind_role(ctx, args),
            "create_instance" => self.create_instance(ctx, args),
            "execute_task" => self.execute_task(ctx, args),
            other => Err(ContractError::new("UnknownCall", format!("process contract has no `{other}`"))),
        }
    }

    fn state_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u32(self.processes.len() as u32);
        for p in self.processes.values() {
            p.encode(&mut enc);
        }
        enc.u32(self.instances.len() as u32);
        for i in self.instances.values() {
            i.encode(&mut enc);
        }
        self.nonces.encode(&mut enc);
        enc.finish()
    }

    fn fresh(&self) -> Box<dyn Contract> {
        Box::new(Self::new())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
