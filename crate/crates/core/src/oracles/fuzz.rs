//! Random contract-call sequences against the X-ray model, checked by the
//! token game.

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value as Json};

use super::token_game::TokenGame;
use crate::abe::Attribute;
use crate::cas::Locator;
use crate::chor::{parse_choreography, Choreography, FieldType};
use crate::codec::NamedArgs;
use crate::contracts::{
    bind_role_message, process_contract_id, standard_contracts, InstanceStatus,
    MessageBody, ProcessContract, CONFIDENTIALITY_CONTRACT, PROCESS_CONTRACT,
};
use crate::digest::Digest;
use crate::fixtures::XRAY_SPEC;
use crate::identity::Identity;
use crate::ledger::{ContractId, Ledger, Tx};

#[derive(Debug, Clone)]
pub struct FuzzConfig {
    pub sequences: usize,
    pub seed: u64,
    /// Sequences sharing one ledger. Smaller ledgers keep state roots cheap.
    pub sequences_per_ledger: usize,
    pub max_calls: usize,
    pub threads: usize,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            sequences: 10_000,
            seed: 0x5eed,
            sequences_per_ledger: 8,
            max_calls: 16,
            threads: std::thread::available_parallelism().map_or(4, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FuzzReport {
    pub sequences: usize,
    pub calls: usize,
    pub accepted: usize,
    pub completed: usize,
    /// Logs the contract accepted but the token game rejects.
    pub nonconforming: Vec<String>,
    /// Instances whose enabled set or completion differs from the oracle.
    pub state_mismatches: Vec<String>,
    /// Ledgers whose replay from genesis did not reproduce instance bytes.
    pub replay_mismatches: usize,
    pub ledgers: usize,
}

impl FuzzReport {
    fn absorb(&mut self, other: FuzzReport) {
        self.sequences += other.sequences;
        self.calls += other.calls;
        self.accepted += other.accepted;
        self.completed += other.completed;
        self.nonconforming.extend(other.nonconforming);
        self.state_mismatches.extend(other.state_mismatches);
        self.replay_mismatches += other.replay_mismatches;
        self.ledgers += other.ledgers;
    }

    pub fn is_sound(&self) -> bool {
        self.nonconforming.is_empty() && self.state_mismatches.is_empty() && self.replay_mismatches == 0
    }
}

struct World {
    ledger: Ledger,
    model: Choreography,
    oracle: TokenGame,
    roles: BTreeMap<String, Identity>,
    outsider: Identity,
    pid: Digest,
    max_calls: usize,
}

fn submit(ledger: &mut Ledger, who: &Identity, contract: &str, call: &str, args: NamedArgs) -> bool {
    let nonce = ledger.next_nonce(&who.account());
    let tx = Tx::new_signed(who, ContractId::new(contract), call, args, nonce);
    let Ok(receipt) = ledger.submit_tx(tx) else {
        return false;
    };
    ledger.seal_block().expect("in-memory seal");
    ledger.outcome(&receipt.tx_id).is_some_and(|o| o.result.is_ok())
}

impl World {
    fn new(ledger_index: usize, max_calls: usize) -> Self {
        let model = parse_choreography(XRAY_SPEC).expect("fixture model parses");
        let oracle = TokenGame::from_json(XRAY_SPEC).expect("fixture model parses");
        let roles: BTreeMap<String, Identity> = model
            .participants()
            .iter()
            .map(|r| (r.clone(), Identity::from_seed(format!("fuzz/{r}").as_bytes())))
            .collect();
        let certifier = Identity::from_seed(b"fuzz/certifier");
        let owner = roles["RadiologyDepartment"].clone();
        let mut ledger = Ledger::new(standard_contracts());

        let args = NamedArgs::new()
            .with_str("spec_locator", &Locator::for_content(XRAY_SPEC.as_bytes()).to_string())
            .with_bytes("spec_doc", XRAY_SPEC.as_bytes())
            .with_list("certifiers", &[certifier.account().to_string()])
            .with_list("custom_roles", &[] as &[&str])
            .with_u64("deploy_nonce", ledger_index as u64);
        assert!(submit(&mut ledger, &owner, PROCESS_CONTRACT, "deploy_process", args));
        let pid = ledger
            .contract::<ProcessContract>(&process_contract_id())
            .and_then(|p| p.processes().next().map(|r| r.process_id))
            .expect("deployed");
        for (role, who) in &roles {
            let sig = certifier.sign(&bind_role_message(&pid, role, &who.account()));
            let args = NamedArgs::new()
                .with_str("process_id", &pid.to_hex())
                .with_str("role", role)
                .with_str("account", &who.account().to_string())
                .with_str("certifier_key", &certifier.public_key().to_string())
                .with_bytes("attestation", &sig.0);
            assert!(submit(&mut ledger, who, PROCESS_CONTRACT, "bind_role", args));
        }
        let confidential: Vec<String> = model.confidential_tasks().map(|(e, _)| e.id.clone()).collect();
        for task in confidential {
            let text = format!("{} and inst@A1", Attribute::new(&task, "A1"));
            let args = NamedArgs::new()
                .with_str("process_id", &pid.to_hex())
                .with_str("task_id", &task)
                .with_str("policy", &text)
                .with_str("policy_locator", &Locator::for_content(text.as_bytes()).to_string());
            assert!(submit(&mut ledger, &owner, CONFIDENTIALITY_CONTRACT, "register_policy", args));
        }
        Self {
            ledger,
            model,
            oracle,
            roles,
            outsider: Identity::from_seed(b"fuzz/outsider"),
            pid,
            max_calls: max_calls.max(1),
        }
    }

    fn random_value(rng: &mut StdRng, ty: FieldType) -> Json {
        match ty {
            FieldType::Boolean => json!(rng.gen_bool(0.5)),
            FieldType::Number => json!(rng.gen_range(-5.0..45.0)),
            FieldType::String => json!(format!("v{}", rng.gen_range(0..1000))),
        }
    }

    fn payload(&self, rng: &mut StdRng, task: &str) -> Json {
        let Some(msg) = self.model.task_message(task) else {
            return json!({ "x": 1 });
        };
        let mut obj: serde_json::Map<String, Json> =
            msg.fields.iter().map(|f| (f.name.clone(), Self::random_value(rng, f.ty))).collect();
        match rng.gen_range(0..20) {
            0 if !obj.is_empty() => {
                let k = obj.keys().next().cloned().expect("non-empty");
                obj.remove(&k);
            }
            1 => {
                obj.insert("unexpected".into(), json!(true));
            }
            2 => {
                if let Some(v) = obj.values_mut().next() {
                    *v = json!([1, 2]);
                }
            }
            _ => {}
        }
        Json::Object(obj)
    }

    fn run_sequence(&mut self, rng: &mut StdRng, seq: usize, report: &mut FuzzReport) {
        let participants: Vec<Identity> = self.roles.values().cloned().collect();
        let creator = participants.choose(rng).expect("participants").clone();
        let before: BTreeSet<Digest> = self.process().instances().keys().copied().collect();
        let args = NamedArgs::new().with_str("process_id", &self.pid.to_hex());
        report.calls += 1;
        if !submit(&mut self.ledger, &creator, PROCESS_CONTRACT, "create_instance", args) {
            report.state_mismatches.push(format!("seq {seq}: create_instance rejected"));
            return;
        }
        let iid = *self
            .process()
            .instances()
            .keys()
            .find(|k| !before.contains(k))
            .expect("new instance");
        let all_tasks = self.oracle.task_ids();
        let calls = rng.gen_range(1..=self.max_calls);
        for _ in 0..calls {
            // Bias towards progress so long traces are explored too.
            let enabled: Vec<String> = self.oracle_state(&iid).map(|s| s.enabled.into_iter().collect()).unwrap_or_default();
            let task = match rng.gen_range(0..10) {
                0..=5 if !enabled.is_empty() => enabled.choose(rng).expect("non-empty").clone(),
                9 => "no_such_task".to_owned(),
                _ => all_tasks.choose(rng).expect("tasks").clone(),
            };
            let sender = match (rng.gen_range(0..10), self.model.task(&task)) {
                (0..=7, Some(t)) => self.roles[&t.initiator].clone(),
                (8, _) => self.outsider.clone(),
                _ => participants.choose(rng).expect("participants").clone(),
            };
            let confidential = self
                .model
                .task_message(&task)
                .is_some_and(|m| m.visibility == crate::chor::Visibility::Confidential);
            let mut args = NamedArgs::new()
                .with_str("instance_id", &iid.to_hex())
                .with_str("task_id", &task);
            let flip = rng.gen_range(0..20) == 0;
            if confidential != flip {
                let locator = Locator::for_content(format!("ct/{seq}/{}", rng.gen::<u64>()).as_bytes());
                if confidential && rng.gen_range(0..5) != 0 {
                    let policy_text = format!("{} and inst@A1", Attribute::new(&task, "A1"));
                    let store = NamedArgs::new()
                        .with_str("instance_id", &iid.to_hex())
                        .with_str("task_id", &task)
                        .with_str("ciphertext_locator", &locator.to_string())
                        .with_str("policy_locator", &Locator::for_content(policy_text.as_bytes()).to_string());
                    report.calls += 1;
                    submit(&mut self.ledger, &sender, CONFIDENTIALITY_CONTRACT, "notarize_store", store);
                }
                args = args
                    .with_str("visibility", "CONFIDENTIAL")
                    .with_str("ciphertext_locator", &locator.to_string());
            } else {
                let payload = self.payload(rng, &task);
                args = args
                    .with_str("visibility", "PUBLIC")
                    .with_str("payload", &payload.to_string());
            }
            report.calls += 1;
            if submit(&mut self.ledger, &sender, PROCESS_CONTRACT, "execute_task", args) {
                report.accepted += 1;
            }
        }
        self.check_instance(&iid, seq, report);
    }

    fn process(&self) -> &ProcessContract {
        self.ledger.contract(&process_contract_id()).expect("process contract")
    }

    fn log_of(&self, iid: &Digest) -> Vec<(String, Option<Json>)> {
        self.process()
            .instance(iid)
            .map(|inst| {
                inst.message_log
                    .iter()
                    .map(|m| {
                        let payload = match &m.body {
                            MessageBody::Public(fields) => Some(Json::Object(
                                fields.iter().map(|(k, v)| (k.clone(), v.to_json())).collect(),
                            )),
                            MessageBody::Confidential(_) => None,
                        };
                        (m.task_id.clone(), payload)
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    fn oracle_state(&self, iid: &Digest) -> Result<super::token_game::OracleState, String> {
        let log = self.log_of(iid);
        self.oracle.replay(log.iter().map(|(t, p)| (t.as_str(), p.as_ref())))
    }

    fn check_instance(&self, iid: &Digest, seq: usize, report: &mut FuzzReport) {
        let log = self.log_of(iid);
        let trace: Vec<&str> = log.iter().map(|(t, _)| t.as_str()).collect();
        match self.oracle_state(iid) {
            Err(why) => report.nonconforming.push(format!("seq {seq}: {why}; log {trace:?}")),
            Ok(state) => {
                let inst = self.process().instance(iid).expect("instance exists");
                let enabled: BTreeSet<String> = self.model.enabled_tasks(&inst.marking).into_iter().collect();
                let completed = inst.status == InstanceStatus::Completed;
                if completed {
                    report.completed += 1;
                }
                if enabled != state.enabled || completed != state.completed {
                    report.state_mismatches.push(format!(
                        "seq {seq}: contract enabled {enabled:?} completed {completed}, oracle {:?} {}; log {trace:?}",
                        state.enabled, state.completed
                    ));
                }
            }
        }
    }

    fn check_replay(&self) -> bool {
        let blocks = self.ledger.blocks().to_vec();
        let Ok(replayed) = Ledger::from_blocks(blocks, standard_contracts()) else {
            return false;
        };
        let bytes = |l: &Ledger| -> BTreeMap<Digest, Vec<u8>> {
            l.contract::<ProcessContract>(&process_contract_id())
                .expect("process contract")
                .instances()
                .iter()
                .map(|(k, v)| (*k, v.to_bytes()))
                .collect()
        };
        // The state root also covers the confidentiality contract.
        bytes(&replayed) == bytes(&self.ledger) && replayed.state_root() == self.ledger.state_root()
    }
}

fn run_ledger(index: usize, count: usize, cfg: &FuzzConfig) -> FuzzReport {
    let mut rng = StdRng::seed_from_u64(cfg.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut world = World::new(index, cfg.max_calls);
    let mut report = FuzzReport {
        ledgers: 1,
        ..Default::default()
    };
    for s in 0..count {
        world.run_sequence(&mut rng, index * cfg.sequences_per_ledger + s, &mut report);
        report.sequences += 1;
    }
    if !world.check_replay() {
        report.replay_mismatches += 1;
    }
    report
}

/// Runs the fuzz campaign, spreading ledgers over `cfg.threads` threads.
/// Results depend only on `cfg.seed`.
pub fn run_fuzz(cfg: &FuzzConfig) -> FuzzReport {
    let per = cfg.sequences_per_ledger.max(1);
    let ledgers: Vec<(usize, usize)> = (0..cfg.sequences.div_ceil(per))
        .map(|i| (i, per.min(cfg.sequences - i * per)))
        .collect();
    let threads = cfg.threads.max(1);
    let mut total = FuzzReport::default();
    let parts: Vec<FuzzReport> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let mine: Vec<(usize, usize)> = ledgers.iter().copied().skip(t).step_by(threads).collect();
                s.spawn(move || {
                    let mut r = FuzzReport::default();
                    for (i, n) in mine {
                        r.absorb(run_ledger(i, n, cfg));
                    }
                    r
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fuzz worker")).collect()
    });
    for p in parts {
        total.absorb(p);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_campaign_is_sound_and_reaches_completion() {
        let r = run_fuzz(&FuzzConfig {
            sequences: 64,
            threads: 2,
            ..Default::default()
        });
        assert!(r.is_sound(), "{:?} {:?}", r.nonconforming.first(), r.state_mismatches.first());
        assert_eq!(r.sequences, 64);
        assert!(r.accepted > 64, "{r:?}");
    }
}
