//! The confidentiality contract: a notary for policies, attribute grants,
//! ciphertext locators, key requests and reads. It never sees plaintext.

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};

use super::auth::AuthNonces;
use super::{account_arg, digest_arg, process_contract_id, ProcessContract, CONFIDENTIALITY_CONTRACT};
use crate::abe::{parse_policy, Attribute};
use crate::cas::Locator;
use crate::codec::{Encoder, NamedArgs};
use crate::digest::Digest;
use crate::identity::{AccountId, PublicKey, Signature};
use crate::ledger::{CallContext, CallOutput, Contract, ContractError, ContractId};

/// What a certifier signs to grant `attributes` to `user` for `epoch`.
pub fn grant_signing_message(user: &AccountId, attributes: &BTreeSet<Attribute>, epoch: u64) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str("confetty/grant").raw(&user.0 .0).u32(attributes.len() as u32);
    for a in attributes {
        enc.str(&a.to_string());
    }
    enc.u64(epoch);
    enc.finish()
}

pub(crate) fn message_id(instance: &Digest, task: &str, ciphertext: &Locator) -> Digest {
    Digest::of_encoded(|e| {
        e.str("confetty/message")
            .raw(&instance.0)
            .str(task)
            .str(&ciphertext.to_string());
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyRecord {
    pub process_id: Digest,
    pub task_id: String,
    pub policy_locator: Locator,
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrantRecord {
    pub user: AccountId,
    pub attributes: BTreeSet<Attribute>,
    pub certifier: AccountId,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreRecord {
    pub message_id: Digest,
    pub instance_id: Digest,
    pub task_id: String,
    pub ciphertext_locator: Locator,
    pub policy_locator: Locator,
    pub sender: AccountId,
}

#[derive(Debug, Clone, Default)]
pub struct ConfidentialityContract {
    epoch: u64,
    policies: BTreeMap<(Digest, String), PolicyRecord>,
    grants: BTreeMap<AccountId, Vec<GrantRecord>>,
    stores: BTreeMap<Digest, StoreRecord>,
    key_requests: u64,
    reads: u64,
    nonces: AuthNonces,
}

fn process_view<'a>(ctx: &'a CallContext<'_>) -> Result<&'a ProcessContract, ContractError> {
    ctx.view::<ProcessContract>(&process_contract_id())
        .ok_or_else(|| ContractError::new("UnknownContract", "process contract is not deployed"))
}

impl ConfidentialityContract {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn policy(&self, process_id: &Digest, task_id: &str) -> Option<&PolicyRecord> {
        self.policies.get(&(*process_id, task_id.to_owned()))
    }

    pub fn policies_of<'a>(&'a self, process_id: &'a Digest) -> impl Iterator<Item = &'a PolicyRecord> + 'a {
        self.policies.values().filter(move |p| &p.process_id == process_id)
    }

    pub fn grants(&self, user: &AccountId) -> &[GrantRecord] {
        self.grants.get(user).map_or(&[], Vec::as_slice)
    }

    /// Attributes granted to `user`, grouped by epoch.
    pub fn granted_by_epoch(&self, user: &AccountId) -> BTreeMap<u64, BTreeSet<Attribute>> {
        let mut out: BTreeMap<u64, BTreeSet<Attribute>> = BTreeMap::new();
        for g in self.grants(user) {
            out.entry(g.epoch).or_default().extend(g.attributes.iter().cloned());
        }
        out
    }

    pub fn store(&self, message_id: &Digest) -> Option<&StoreRecord> {
        self.stores.get(message_id)
    }

    pub fn stores(&self) -> impl Iterator<Item = &StoreRecord> {
        self.stores.values()
    }

    pub fn key_request_count(&self) -> u64 {
        self.key_requests
    }

    pub fn read_count(&self) -> u64 {
        self.reads
    }

    fn register_policy(&mut self, ctx: &CallContext<'_>, args: &NamedArgs) -> Result<CallOutput, ContractError> {
        let pid = digest_arg(args, "process_id")?;
        let caller = self
            .nonces
            .resolve(ctx, args, &[format!("POST /processes/{pid}/policies")])?;
        let task_id = args.str("task_id")?;
        let text = args.str("policy")?;
        let locator: Locator = args
            .str("policy_locator")?
            .parse()
            .map_err(|e| ContractError::new("BadPolicy", format!("bad policy locator: {e}")))?;

        let process = process_view(ctx)?
            .process(&pid)
            .ok_or_else(|| ContractError::new("UnknownProcess", format!("no process {pid}")))?;
        if process.owner != caller.account {
            return Err(ContractError::new("NotOwner", "only the process owner registers policies"));
        }
        if process.model.task_message(&task_id).map(|m| m.visibility) != Some(crate::chor::Visibility::Confidential) {
            return Err(ContractError::new("UnknownTask", format!("`{task_id}` is not a confidential task")));
        }
        if !crate::cas::verify(&locator, text.as_bytes()) {
            return Err(ContractError::new("BadPolicy", format!("{locator} does not resolve to the supplied policy")));
        }
        parse_policy(&text).map_err(|e| ContractError::new("BadPolicy", e.to_string()))?;
        let key = (pid, task_id.clone());
        if self.policies.contains_key(&key) {
            return Err(ContractError::new("AlreadyRegistered", format!("`{task_id}` already has a policy")));
        }

        self.policies.insert(
            key,
            PolicyRecord {
                process_id: pid,
                task_id: task_id.clone(),
                policy_locator: locator,
                policy: text,
            },
        );
        self.nonces.commit(&caller);
        let event = NamedArgs::new()
            .with_str("process_id", &pid.to_hex())
            .with_str("task_id", &task_id)
            .with_str("policy_locator", &locator.to_string());
        Ok(CallOutput::new(NamedArgs::new().with_str("policy_locator", &locator.to_string()))
            .event("PolicyRegistered", event))
    }

    fn record_grant(&mut self, ctx: &CallContext<'_>, args: &NamedArgs) -> Result<CallOutput, ContractError> {
        let pid = digest_arg(args, "process_id")?;
        let caller = self
            .nonces
            .resolve(ctx, args, &[format!("POST /processes/{pid}/participants")])?;
        let user = account_arg(args, "user")?;
        let epoch = args.u64("epoch")?;
        let mut attributes = BTreeSet::new();
        for a in args.list("attributes")? {
            attributes.insert(
                a.parse::<Attribute>()
                    .map_err(|e| ContractError::new("BadArguments", e.to_string()))?,
            );
        }
        if attributes.is_empty() {
            return Err(ContractError::new("BadArguments", "a grant needs at least one attribute"));
        }
        let certifier_key: PublicKey = args
            .str("certifier_key")?
            .parse()
            .map_err(|_| ContractError::new("BadArguments", "bad certifier key"))?;
        let sig = Signature::from_slice(args.raw("attestation")?)?;

        let process = process_view(ctx)?
            .process(&pid)
            .ok_or_else(|| ContractError::new("UnknownProcess", format!("no process {pid}")))?;
        let certifier = certifier_key.account();
        if !process.certifiers.contains(&certifier)
            || !certifier_key.verify(&grant_signing_message(&user, &attributes, epoch), &sig)
        {
            return Err(ContractError::new("BadAttestation", "grant is not signed by a registered certifier"));
        }
        if caller.account != user {
            return Err(ContractError::new("WrongAccount", "accounts register themselves"));
        }
        if epoch != self.epoch {
            return Err(ContractError::new(
                "StaleEpoch",
                format!("grant is for epoch {epoch}, current epoch is {}", self.epoch),
            ));
        }

        let duplicate = self
            .grants(&user)
            .iter()
            .any(|g| g.epoch == epoch && g.attributes == attributes);
        self.nonces.commit(&caller);
        if duplicate {
            return Ok(CallOutput::new(NamedArgs::new().with_str("duplicate", "true")));
        }
        let attrs: Vec<String> = attributes.iter().map(ToString::to_string).collect();
        self.grants.entry(user).or_default().push(GrantRecord {
            user,
            attributes,
            certifier,
            epoch,
        });
        let event = NamedArgs::new()
            .with_str("user", &user.to_string())
            .with_list("attributes", &attrs)
            .with_str("certifier", &certifier.to_string())
            .with_u64("epoch", epoch);
        Ok(CallOutput::new(NamedArgs::new().with_str("duplicate", "false")).event("GrantRecorded", event))
    }

    fn notarize_store(&mut self, ctx: &CallContext<'_>, args: &NamedArgs) -> Result<CallOutput, ContractError> {
        let iid = digest_arg(args, "instance_id")?;
        let task_id = args.str("task_id")?;
        let caller = self.nonces.resolve(
            ctx,
            args,
            &[
                format!("POST /instances/{iid}/tasks/{task_id}"),
                "POST /confidential/messages".to_owned(),
            ],
        )?;
        let ciphertext: Locator = args
            .str("ciphertext_locator")?
            .parse()
            .map_err(|e| ContractError::new("BadArguments", format!("bad ciphertext locator: {e}")))?;
        let policy_locator: Locator = args
            .str("policy_locator")?
            .parse()
            .map_err(|e| ContractError::new("BadArguments", format!("bad policy locator: {e}")))?;

        let processes = process_view(ctx)?;
        let inst = processes
            .instance(&iid)
            .ok_or_else(|| ContractError::new("UnknownInstance", format!("no instance {iid}")))?;
        let registered = self
            .policy(&inst.process_id, &task_id)
            .ok_or_else(|| ContractError::new("NoPolicy", format!("no policy registered for `{task_id}`")))?;
        if registered.policy_locator != policy_locator {
            return Err(ContractError::new(
                "PolicyMismatch",
                format!("`{task_id}` is governed by {}", registered.policy_locator),
            ));
        }
        let model = processes.model_of_instance(&iid).expect("instance has a process");
        let initiator = &model.task(&task_id).expect("policy implies task").initiator;
        if inst.bindings.get(initiator) != Some(&caller.account) {
            return Err(ContractError::new(
                "WrongInitiator",
                format!("`{task_id}` is initiated by the {initiator} role"),
            ));
        }
        let id = message_id(&iid, &task_id, &ciphertext);
        if self.stores.contains_key(&id) {
            return Err(ContractError::new("DuplicateStore", format!("message {id} already notarized")));
        }

        self.stores.insert(
            id,
            StoreRecord {
                message_id: id,
                instance_id: iid,
                task_id: task_id.clone(),
                ciphertext_locator: ciphertext,
                policy_locator,
                sender: caller.account,
            },
        );
        self.nonces.commit(&caller);
        let event = NamedArgs::new()
            .with_str("message_id", &id.to_hex())
            .with_str("instance_id", &iid.to_hex())
            .with_str("task_id", &task_id)
            .with_str("ciphertext_locator", &ciphertext.to_string())
            .with_str("policy_locator", &policy_locator.to_string())
            .with_str("sender", &caller.account.to_string());
        Ok(CallOutput::new(NamedArgs::new().with_str("message_id", &id.to_hex())).event("CiphertextStored", event))
    }

    fn notarize_key_request(&mut self, ctx: &CallContext<'_>, args: &NamedArgs) -> Result<CallOutput, ContractError> {
        let caller = self.nonces.resolve(ctx, args, &["POST /keys/requests".to_owned()])?;
        self.key_requests += 1;
        self.nonces.commit(&caller);
        let event = NamedArgs::new()
            .with_str("user", &caller.account.to_string())
            .with_u64("epoch", self.epoch)
            .with_u64("sequence", self.key_requests);
        Ok(CallOutput::new(NamedArgs::new()).event("KeyRequested", event))
    }

    fn notarize_read(&mut self, ctx: &CallContext<'_>, args: &NamedArgs) -> Result<CallOutput, ContractError> {
        let mid = digest_arg(args, "message_id")?;
        let caller = self
            .nonces
            .resolve(ctx, args, &[format!("POST /confidential/messages/{mid}/read")])?;
        let rec = self
            .stores
            .get(&mid)
            .ok_or_else(|| ContractError::new("UnknownMessage", format!("no stored message {mid}")))?;
        let event = NamedArgs::new()
            .with_str("user", &caller.account.to_string())
            .with_str("message_id", &mid.to_hex())
            .with_str("instance_id", &rec.instance_id.to_hex())
            .with_str("task_id", &rec.task_id);
        self.reads += 1;
        self.nonces.commit(&caller);
        Ok(CallOutput::new(NamedArgs::new()).event("ReadRequested", event))
    }

    /// Starts a new grant epoch. Keys for earlier epochs stay obtainable so
    /// auditors keep access to old envelopes.
    fn bump_epoch(&mut self, ctx: &CallContext<'_>, args: &NamedArgs) -> Result<CallOutput, ContractError> {
        let caller = self.nonces.resolve(ctx, args, &["POST /epochs".to_owned()])?;
        let is_certifier = process_view(ctx)?
            .processes()
            .any(|p| p.certifiers.contains(&caller.account));
        if !is_certifier {
            return Err(ContractError::new("NotCertifier", "only certifiers start a new epoch"));
        }
        self.epoch += 1;
        self.nonces.commit(&caller);
        let event = NamedArgs::new()
            .with_u64("epoch", self.epoch)
            .with_str("certifier", &caller.account.to_string());
        Ok(CallOutput::new(NamedArgs::new().with_u64("epoch", self.epoch)).event("EpochBumped", event))
    }
}

impl Contract for ConfidentialityContract {
    fn id(&self) -> ContractId {
        ContractId::new(CONFIDENTIALITY_CONTRACT)
    }

    fn execute(&mut self, ctx: &CallContext<'_>, call: &str, args: &NamedArgs) -> Result<CallOutput, ContractError> {
        match call {
            "register_policy" => self.register_policy(ctx, args),
            "record_grant" => self.record_grant(ctx, args),
            "notarize_store" => self.notarize_store(ctx, args),
            "notarize_key_request" => self.notarize_key_request(ctx, args),
            "notarize_read" => self.notarize_read(ctx, args),
            "bump_epoch" => self.bump_epoch(ctx, args),
            other => Err(ContractError::new(
                "UnknownCall",
                format!("confidentiality contract has no `{other}`"),
            )),
        }
    }

    fn state_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u64(self.epoch).u32(self.policies.len() as u32);
        for p in self.policies.values() {
            enc.raw(&p.process_id.0)
                .str(&p.task_id)
                .str(&p.policy_locator.to_string())
                .str(&p.policy);
        }
        enc.u32(self.grants.len() as u32);
        for (user, records) in &self.grants {
            user.encode(&mut enc);
            enc.u32(records.len() as u32);
            for g in records {
                enc.u32(g.attributes.len() as u32);
                for a in &g.attributes {
                    enc.str(&a.to_string());
                }
                g.certifier.encode(&mut enc);
                enc.u64(g.epoch);
            }
        }
        enc.u32(self.stores.len() as u32);
        for s in self.stores.values() {
            enc.raw(&s.message_id.0)
                .raw(&s.instance_id.0)
                .str(&s.task_id)
                .str(&s.ciphertext_locator.to_string())
                .str(&s.policy_locator.to_string());
            s.sender.encode(&mut enc);
        }
        enc.u64(self.key_requests).u64(self.reads);
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
