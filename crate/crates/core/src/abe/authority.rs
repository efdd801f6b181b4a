//! Attribute authorities and the in-process registry.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use ed25519_dalek::{Signer, SigningKey};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

use super::key::{entry_signing_message, ABKey, KeyEntry};
use super::{AbeError, Attribute};
use crate::identity::{AccountId, PublicKey, Signature};

type HmacSha256 = Hmac<Sha256>;

pub const MIN_SEED_LEN: usize = 32;

/// Secret material of one authority. Never serialized.
pub struct AuthorityKeys {
    id: String,
    master: [u8; 32],
    signing: SigningKey,
}

impl std::fmt::Debug for AuthorityKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuthorityKeys").field("id", &self.id).finish_non_exhaustive()
    }
}

/// Public view of an authority.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityInfo {
    pub id: String,
    pub verifying_key: PublicKey,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

impl AuthorityKeys {
    pub fn setup(id: &str, seed: &[u8]) -> Result<Self, AbeError> {
        if seed.len() < MIN_SEED_LEN {
            return Err(AbeError::WeakSeed(seed.len()));
        }
        Attribute::try_new("x", id).map_err(|_| AbeError::UnknownAuthority(id.to_owned()))?;
        let mut h = Sha256::new();
        h.update(b"confetty/authority-master\0");
        h.update((id.len() as u32).to_be_bytes());
        h.update(id.as_bytes());
        h.update(seed);
        let master: [u8; 32] = h.finalize().into();
        let signing = SigningKey::from_bytes(&hmac(&master, &[b"signing-key"]));
        Ok(Self {
            id: id.to_owned(),
            master,
            signing,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn info(&self) -> AuthorityInfo {
        AuthorityInfo {
            id: self.id.clone(),
            verifying_key: PublicKey(self.signing.verifying_key().to_bytes()),
            enabled: true,
        }
    }

    /// The unwrap secret for `name` at `epoch`: a keyed hash of the master.
    pub fn attribute_secret(&self, name: &str, epoch: u64) -> [u8; 32] {
        attribute_secret(&self.master, name, epoch)
    }

    pub fn attribute_public_key(&self, name: &str, epoch: u64) -> [u8; 32] {
        attribute_public_from_secret(&self.attribute_secret(name, epoch))
    }

    /// Issues a partial key for `attrs`. Every attribute must belong to this
    /// authority and appear in `granted`.
    pub fn issue_key(
        &self,
        user: &AccountId,
        attrs: &BTreeSet<Attribute>,
        granted: &BTreeSet<Attribute>,
        epoch: u64,
    ) -> Result<ABKey, AbeError> {
        let mut key = ABKey::empty(*user);
        for a in attrs {
            if a.authority != self.id {
                return Err(AbeError::ForeignAttribute {
                    authority: self.id.clone(),
                    attribute: a.clone(),
                });
            }
            if !granted.contains(a) {
                return Err(AbeError::UngrantedAttribute(a.clone()));
            }
        }
        for a in attrs {
            let secret = self.attribute_secret(&a.name, epoch);
            let public = attribute_public_from_secret(&secret);
            let sig = self.signing.sign(&entry_signing_message(user, a, epoch, &public));
            key.insert(a.clone(), epoch, KeyEntry::new(secret, Signature(sig.to_bytes())));
        }
        Ok(key)
    }
}

pub(crate) fn hmac(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        mac.update(&(p.len() as u32).to_be_bytes());
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

/// keyed-hash(master, attribute name, epoch).
pub fn attribute_secret(master: &[u8; 32], name: &str, epoch: u64) -> [u8; 32] {
    hmac(master, &[b"attribute", name.as_bytes(), &epoch.to_be_bytes()])
}

pub fn attribute_public_from_secret(secret: &[u8; 32]) -> [u8; 32] {
    XPublic::from(&StaticSecret::from(*secret)).to_bytes()
}

/// Source of attribute public keys for encryption.
pub trait PublicParams {
    fn attribute_public_key(&self, attr: &Attribute, epoch: u64) -> Result<[u8; 32], AbeError>;
}

/// Issuance interface shared by in-process and remote authorities.
pub trait AuthorityService: Send + Sync {
    fn id(&self) -> &str;
    fn info(&self) -> Result<AuthorityInfo, AbeError>;
    fn attribute_public_key(&self, name: &str, epoch: u64) -> Result<[u8; 32], AbeError>;
    fn issue(
        &self,
        user: &AccountId,
        attrs: &BTreeSet<Attribute>,
        granted: &BTreeSet<Attribute>,
        epoch: u64,
    ) -> Result<ABKey, AbeError>;
}

pub struct LocalAuthority {
    keys: AuthorityKeys,
    // Issuance is serialized per authority.
    issue_lock: std::sync::Mutex<()>,
}

impl LocalAuthority {
    pub fn new(keys: AuthorityKeys) -> Self {
        Self {
            keys,
            issue_lock: std::sync::Mutex::new(()),
        }
    }
}

impl AuthorityService for LocalAuthority {
    fn id(&self) -> &str {
        self.keys.id()
    }

    fn info(&self) -> Result<AuthorityInfo, AbeError> {
        Ok(self.keys.info())
    }

    fn attribute_public_key(&self, name: &str, epoch: u64) -> Result<[u8; 32], AbeError> {
        Ok(self.keys.attribute_public_key(name, epoch))
    }

    fn issue(
        &self,
        user: &AccountId,
        attrs: &BTreeSet<Attribute>,
        granted: &BTreeSet<Attribute>,
        epoch: u64,
    ) -> Result<ABKey, AbeError> {
        let _guard = self.issue_lock.lock().unwrap_or_else(|e| e.into_inner());
        self.keys.issue_key(user, attrs, granted, epoch)
    }
}

struct Slot {
    service: Arc<dyn AuthorityService>,
    enabled: bool,
}

/// Registered authorities by id. Disabled authorities answer nothing.
#[derive(Default)]
pub struct AuthorityRegistry {
    slots: RwLock<BTreeMap<String, Slot>>,
}

impl AuthorityRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets up and registers an in-process authority.
    pub fn add_local(&self, id: &str, seed: &[u8]) -> Result<AuthorityInfo, AbeError> {
        let mut slots = self.slots.write().expect("registry lock");
        if slots.contains_key(id) {
            return Err(AbeError::DuplicateAuthority(id.to_owned()));
        }
        let keys = AuthorityKeys::setup(id, seed)?;
        let info = keys.info();
        slots.insert(
            id.to_owned(),
            Slot {
                service: Arc::new(LocalAuthority::new(keys)),
                enabled: true,
            },
        );
        Ok(info)
    }

    pub fn add_service(&self, service: Arc<dyn AuthorityService>) -> Result<AuthorityInfo, AbeError> {
        let info = service.info()?;
        let mut slots = self.slots.write().expect("registry lock");
        if slots.contains_key(service.id()) {
            return Err(AbeError::DuplicateAuthority(service.id().to_owned()));
        }
        slots.insert(
            service.id().to_owned(),
            Slot {
                service,
                enabled: true,
            },
        );
        Ok(info)
    }

    /// Drops an authority and its secrets.
    pub fn remove(&self, id: &str) -> bool {
        self.slots.write().expect("registry lock").remove(id).is_some()
    }

    pub fn set_enabled(&self, id: &str, enabled: bool) -> Result<(), AbeError> {
        let mut slots = self.slots.write().expect("registry lock");
        let slot = slots
            .get_mut(id)
            .ok_or_else(|| AbeError::UnknownAuthority(id.to_owned()))?;
        slot.enabled = enabled;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.slots.read().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: &str) -> bool {
        self.slots.read().expect("registry lock").contains_key(id)
    }

    pub fn list(&self) -> Vec<AuthorityInfo> {
        self.slots
            .read()
            .expect("registry lock")
            .values()
            .map(|s| match s.service.info() {
                Ok(mut info) => {
                    info.enabled = s.enabled;
                    info
                }
                Err(_) => AuthorityInfo {
                    id: s.service.id().to_owned(),
                    verifying_key: PublicKey([0; 32]),
                    enabled: false,
                },
            })
            .collect()
    }

    fn service(&self, id: &str) -> Result<Arc<dyn AuthorityService>, AbeError> {
        let slots = self.slots.read().expect("registry lock");
        let slot = slots
            .get(id)
            .ok_or_else(|| AbeError::UnknownAuthority(id.to_owned()))?;
        if !slot.enabled {
            return Err(AbeError::AuthorityUnavailable(id.to_owned()));
        }
        Ok(slot.service.clone())
    }

    pub fn info(&self, id: &str) -> Result<AuthorityInfo, AbeError> {
        self.service(id)?.info()
    }

    /// Collects partial keys from every authority involved and merges them.
    /// Fails as a whole if any one authority is unavailable, so no partial
    /// key leaves the registry.
    pub fn issue(
        &self,
        user: &AccountId,
        attrs: &BTreeSet<Attribute>,
        granted: &BTreeSet<Attribute>,
        epoch: u64,
    ) -> Result<ABKey, AbeError> {
        let mut by_authority: BTreeMap<&str, BTreeSet<Attribute>> = BTreeMap::new();
        for a in attrs {
            by_authority.entry(a.authority.as_str()).or_default().insert(a.clone());
        }
        let services = by_authority
            .keys()
            .map(|id| self.service(id))
            .collect::<Result<Vec<_>, _>>()?;
        let mut key = ABKey::empty(*user);
        for (svc, subset) in services.iter().zip(by_authority.values()) {
            key.merge(svc.issue(user, subset, granted, epoch)?)?;
        }
        Ok(key)
    }
}

impl PublicParams for AuthorityRegistry {
    fn attribute_public_key(&self, attr: &Attribute, epoch: u64) -> Result<[u8; 32], AbeError> {
        self.service(&attr.authority)?
            .attribute_public_key(&attr.name, epoch)
    }
}

impl PublicParams for AuthorityKeys {
    fn attribute_public_key(&self, attr: &Attribute, epoch: u64) -> Result<[u8; 32], AbeError> {
        if attr.authority != self.id {
            return Err(AbeError::UnknownAuthority(attr.authority.clone()));
        }
        Ok(AuthorityKeys::attribute_public_key(self, &attr.name, epoch))
    }
}

impl<P: PublicParams + ?Sized> PublicParams for &P {
    fn attribute_public_key(&self, attr: &Attribute, epoch: u64) -> Result<[u8; 32], AbeError> {
        (**self).attribute_public_key(attr, epoch)
    }
}

/// A fixed map of authorities, mostly for tests.
impl PublicParams for BTreeMap<String, AuthorityKeys> {
    fn attribute_public_key(&self, attr: &Attribute, epoch: u64) -> Result<[u8; 32], AbeError> {
        let keys = self
            .get(&attr.authority)
            .ok_or_else(|| AbeError::UnknownAuthority(attr.authority.clone()))?;
        Ok(keys.attribute_public_key(&attr.name, epoch))
    }
}
