//! Plays a fixture through a gateway: configure, register, run the trace,
//! then have every identity try to read every confidential message.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::Value as Json;

use super::client::{attest, GatewayClient, Transport};
use crate::abe::Attribute;
use crate::api::{ApiError, ConfigureRequest};
use crate::chor::Visibility;
use crate::digest::Digest;
use crate::fixtures::FixtureBundle;

#[derive(Debug, Clone, Default)]
pub struct ScenarioOptions {
    /// Distinguishes repeated deployments of the same spec by one owner.
    pub deploy_nonce: u64,
    /// Skip the read matrix.
    pub skip_reads: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub task: String,
    pub sender: String,
    pub visibility: Visibility,
    pub message_id: Digest,
    pub tx_id: Digest,
    pub block_height: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", content = "value", rename_all = "snake_case")]
pub enum ReadOutcome {
    Plaintext(Json),
    Denied(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct ReadAttempt {
    pub reader: String,
    pub task: String,
    pub message_id: Digest,
    pub outcome: ReadOutcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub fixture: String,
    pub process_id: Digest,
    pub instance_id: Digest,
    pub status: String,
    pub end_marking: BTreeMap<String, u32>,
    pub steps: Vec<StepRecord>,
    /// Reader name to granted attributes, or the error code of a refused
    /// key request.
    pub keys: BTreeMap<String, Result<Vec<String>, String>>,
    pub reads: Vec<ReadAttempt>,
}

impl ScenarioReport {
    pub fn read(&self, reader: &str, task: &str) -> Option<&ReadOutcome> {
        self.reads
            .iter()
            .find(|r| r.reader == reader && r.task == task)
            .map(|r| &r.outcome)
    }
}

pub fn run_scenario<T: Transport + Clone>(
    bundle: &FixtureBundle,
    transport: &T,
    options: &ScenarioOptions,
) -> Result<ScenarioReport, ApiError> {
    let client = |name: &str| GatewayClient::new(transport.clone(), Some(bundle.identity(name).clone()));
    let owner = client(&bundle.owner);
    let certifier = bundle.certifier_identity();

    let configured = owner.configure(&ConfigureRequest {
        spec: bundle.spec.clone(),
        custom_roles: bundle.custom_roles.clone(),
        certifiers: vec![certifier.account()],
        deploy_nonce: options.deploy_nonce,
    })?;
    let pid = configured.process_id;
    owner.confirm_drafts(&pid, &configured.drafts)?;

    let view = owner.process(&pid)?;
    let confinement: Attribute = view
        .confinement_attribute
        .parse()
        .map_err(|e| ApiError::internal(format!("confinement attribute: {e}")))?;
    let epoch = owner.epoch()?;
    for member in &bundle.identities {
        let Some(role) = &member.role else { continue };
        let role_view = view
            .role(role)
            .ok_or_else(|| ApiError::new("UnknownRole", format!("fixture role `{role}` is not configured")))?;
        let role_attr: Attribute = role_view
            .attribute
            .parse()
            .map_err(|e| ApiError::internal(format!("role attribute: {e}")))?;
        let attrs: BTreeSet<Attribute> = [role_attr, confinement.clone()].into();
        let att = attest(certifier, &pid, role, &member.account, &attrs, epoch, !role_view.custom);
        client(&member.name).register(att)?;
    }

    let iid = owner.instantiate(&pid)?.instance_id;
    let mut steps = Vec::new();
    for step in &bundle.steps {
        let sender = bundle
            .holder_of(&step.initiator)
            .ok_or_else(|| ApiError::internal(format!("no fixture identity holds {}", step.initiator)))?;
        let res = client(&sender.name).transact(&iid, &step.task, step.payload.clone())?;
        steps.push(StepRecord {
            task: step.task.clone(),
            sender: sender.name.clone(),
            visibility: res.visibility,
            message_id: res.message_id,
            tx_id: res.tx_id,
            block_height: res.block_height,
        });
    }
    let final_view = owner.inspect(&iid)?;

    let mut keys = BTreeMap::new();
    let mut reads = Vec::new();
    if !options.skip_reads {
        let confidential: Vec<&StepRecord> = steps
            .iter()
            .filter(|s| s.visibility == Visibility::Confidential)
            .collect();
        for member in &bundle.identities {
            let reader = client(&member.name);
            let key = match reader.request_key() {
                Ok(k) => {
                    keys.insert(member.name.clone(), Ok(k.attributes()));
                    k
                }
                Err(e) => {
                    keys.insert(member.name.clone(), Err(e.code.clone()));
                    for s in &confidential {
                        reads.push(ReadAttempt {
                            reader: member.name.clone(),
                            task: s.task.clone(),
                            message_id: s.message_id,
                            outcome: ReadOutcome::Denied(e.code.clone()),
                        });
                    }
                    continue;
                }
            };
            for s in &confidential {
                let outcome = match reader.read(&s.message_id, &key) {
                    Ok(plain) => ReadOutcome::Plaintext(plain),
                    Err(e) => ReadOutcome::Denied(e.code),
                };
                reads.push(ReadAttempt {
                    reader: member.name.clone(),
                    task: s.task.clone(),
                    message_id: s.message_id,
                    outcome,
                });
            }
        }
    }

    Ok(ScenarioReport {
        fixture: bundle.name.clone(),
        process_id: pid,
        instance_id: iid,
        status: final_view.status,
        end_marking: final_view.marking,
        steps,
        keys,
        reads,
    })
}
