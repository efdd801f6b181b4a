//! Canonical X-ray assets: the choreography, seeded identities and message
//! traces. Files live under `crates/core/fixtures/`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::chor::{parse_choreography, Choreography, Visibility};
use crate::digest::Digest;
use crate::identity::{AccountId, Identity, PublicKey};

pub const XRAY_SPEC: &str = include_str!("../fixtures/xray.json");
const IDENTITIES: &str = include_str!("../fixtures/identities.json");
const TRACES: [(&str, &str); 3] = [
    ("xray-happy", include_str!("../fixtures/traces/xray-happy.json")),
    ("xray-loop", include_str!("../fixtures/traces/xray-loop.json")),
    ("xray-denied", include_str!("../fixtures/traces/xray-denied.json")),
];

/// Prefix of every confidential field value in the traces.
pub const MARKER_PREFIX: &str = "MARKER-";

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("fixture `{name}` is broken: {reason}")]
    Invalid { name: String, reason: String },
}

pub fn fixture_names() -> Vec<&'static str> {
    TRACES.iter().map(|(n, _)| *n).collect()
}

#[derive(Deserialize)]
struct IdentityFile {
    owner: String,
    certifier: String,
    custom_roles: BTreeMap<String, String>,
    identities: Vec<IdentityEntry>,
}

#[derive(Deserialize)]
struct IdentityEntry {
    name: String,
    seed: String,
    #[serde(default)]
    role: Option<String>,
}

#[derive(Deserialize)]
struct TraceFile {
    name: String,
    model: String,
    end_event: String,
    steps: Vec<TraceFileStep>,
}

#[derive(Deserialize)]
struct TraceFileStep {
    task: String,
    payload: Json,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixtureIdentity {
    pub name: String,
    pub seed: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    pub account: AccountId,
    pub public_key: PublicKey,
    #[serde(skip)]
    pub identity: Identity,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceStep {
    pub task: String,
    pub initiator: String,
    pub visibility: Visibility,
    pub payload: Json,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixtureBundle {
    pub name: String,
    pub model_id: String,
    pub spec_digest: Digest,
    pub owner: String,
    pub certifier: String,
    pub custom_roles: BTreeMap<String, String>,
    pub identities: Vec<FixtureIdentity>,
    pub steps: Vec<TraceStep>,
    pub end_event: String,
    /// Confidential plaintext strings that must never surface outside
    /// ciphertext.
    pub markers: Vec<String>,
    #[serde(skip)]
    pub spec: String,
    #[serde(skip)]
    pub model: Choreography,
}

impl FixtureBundle {
    pub fn member(&self, name: &str) -> Option<&FixtureIdentity> {
        self.identities.iter().find(|i| i.name == name)
    }

    pub fn identity(&self, name: &str) -> &Identity {
        &self.member(name).unwrap_or_else(|| panic!("fixture has no identity `{name}`")).identity
    }

    pub fn holder_of(&self, role: &str) -> Option<&FixtureIdentity> {
        self.identities.iter().find(|i| i.role.as_deref() == Some(role))
    }

    pub fn owner_identity(&self) -> &Identity {
        self.identity(&self.owner)
    }

    pub fn certifier_identity(&self) -> &Identity {
        self.identity(&self.certifier)
    }

    /// Golden-file rendering.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes") + "\n"
    }
}

fn invalid(name: &str, reason: impl Into<String>) -> FixtureError {
    FixtureError::Invalid {
        name: name.to_owned(),
        reason: reason.into(),
    }
}

fn collect_markers(v: &Json, out: &mut Vec<String>) {
    match v {
        Json::String(s) if s.starts_with(MARKER_PREFIX) => {
            if !out.contains(s) {
                out.push(s.clone());
            }
        }
        Json::Array(a) => a.iter().for_each(|x| collect_markers(x, out)),
        Json::Object(o) => o.values().for_each(|x| collect_markers(x, out)),
        _ => {}
    }
}

pub fn load_fixture(name: &str) -> Result<FixtureBundle, FixtureError> {
    let text = TRACES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| FixtureError::UnknownFixture(name.to_owned()))?;
    let trace: TraceFile = serde_json::from_str(text).map_err(|e| invalid(name, e.to_string()))?;
    if trace.name != name || trace.model != "xray.json" {
        return Err(invalid(name, "trace header does not match its file"));
    }
    let ids: IdentityFile = serde_json::from_str(IDENTITIES).map_err(|e| invalid(name, e.to_string()))?;
    let model = parse_choreography(XRAY_SPEC).map_err(|e| invalid(name, e.to_string()))?;

    let identities: Vec<FixtureIdentity> = ids
        .identities
        .into_iter()
        .map(|e| {
            let identity = Identity::from_seed(e.seed.as_bytes());
            FixtureIdentity {
                name: e.name,
                seed: e.seed,
                role: e.role,
                account: identity.account(),
                public_key: identity.public_key(),
                identity,
            }
        })
        .collect();

    let mut steps = Vec::new();
    let mut markers = Vec::new();
    for s in trace.steps {
        let task = model
            .task(&s.task)
            .ok_or_else(|| invalid(name, format!("unknown task `{}`", s.task)))?;
        let message = model.task_message(&s.task).expect("task message resolved");
        message
            .check_payload(&s.payload)
            .map_err(|m| invalid(name, format!("{}: {m}", s.task)))?;
        if message.visibility == Visibility::Confidential {
            collect_markers(&s.payload, &mut markers);
        }
        steps.push(TraceStep {
            initiator: task.initiator.clone(),
            visibility: message.visibility,
            task: s.task,
            payload: s.payload,
        });
    }
    for member in [&ids.owner, &ids.certifier] {
        if !identities.iter().any(|i| &i.name == member) {
            return Err(invalid(name, format!("no identity `{member}`")));
        }
    }

    Ok(FixtureBundle {
        name: trace.name,
        model_id: model.id().to_owned(),
        spec_digest: Digest::of(XRAY_SPEC.as_bytes()),
        owner: ids.owner,
        certifier: ids.certifier,
        custom_roles: ids.custom_roles,
        identities,
        steps,
        end_event: trace.end_event,
        markers,
        spec: XRAY_SPEC.to_owned(),
        model,
    })
}
