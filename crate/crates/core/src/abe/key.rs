//! Attribute-based user keys and their wire format.

use std::collections::BTreeMap;

use super::authority::{attribute_public_from_secret, AuthorityInfo};
use super::{AbeError, Attribute};
use crate::codec::{Decoder, Encoder};
use crate::digest::Digest;
use crate::identity::{AccountId, Signature};

const KEY_VERSION: u8 = 1;

#[derive(Clone, PartialEq, Eq)]
pub struct KeyEntry {
    pub(crate) secret: [u8; 32],
    pub signature: Signature,
}

impl KeyEntry {
    pub(crate) fn new(secret: [u8; 32], signature: Signature) -> Self {
        Self { secret, signature }
    }

    pub fn secret(&self) -> &[u8; 32] {
        &self.secret
    }
}

impl std::fmt::Debug for KeyEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("KeyEntry(..)")
    }
}

pub(crate) fn entry_signing_message(user: &AccountId, attr: &Attribute, epoch: u64, public: &[u8; 32]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str("confetty/key-entry")
        .raw(user.0.as_bytes())
        .str(&attr.to_string())
        .u64(epoch)
        .raw(public);
    enc.finish()
}

/// A user's attribute key: unwrap secrets per (attribute, epoch), each signed
/// by the issuing authority.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ABKey {
    user: AccountId,
    entries: BTreeMap<(Attribute, u64), KeyEntry>,
}

impl ABKey {
    pub fn empty(user: AccountId) -> Self {
        Self {
            user,
            entries: BTreeMap::new(),
        }
    }

    pub fn user(&self) -> &AccountId {
        &self.user
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn insert(&mut self, attr: Attribute, epoch: u64, entry: KeyEntry) {
        self.entries.insert((attr, epoch), entry);
    }

    pub fn entry(&self, attr: &Attribute, epoch: u64) -> Option<&KeyEntry> {
        self.entries.get(&(attr.clone(), epoch))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Attribute, u64, &KeyEntry)> {
        self.entries.iter().map(|((a, e), k)| (a, *e, k))
    }

    pub fn attributes(&self) -> Vec<String> {
        self.entries.keys().map(|(a, e)| format!("{a}#{e}")).collect()
    }

    /// Map union. Both keys must belong to the same user.
    pub fn merge(&mut self, other: ABKey) -> Result<(), AbeError> {
        if other.user != self.user {
            return Err(AbeError::MalformedKey("partial keys belong to different users".into()));
        }
        self.entries.extend(other.entries);
        Ok(())
    }

    /// Checks every entry's authority signature.
    pub fn verify(&self, authorities: &[AuthorityInfo]) -> Result<(), AbeError> {
        for ((attr, epoch), entry) in &self.entries {
            let info = authorities
                .iter()
                .find(|a| a.id == attr.authority)
                .ok_or_else(|| AbeError::UnknownAuthority(attr.authority.clone()))?;
            let public = attribute_public_from_secret(&entry.secret);
            let msg = entry_signing_message(&self.user, attr, *epoch, &public);
            if !info.verifying_key.verify(&msg, &entry.signature) {
                return Err(AbeError::MalformedKey(format!("bad authority signature on {attr}")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(KEY_VERSION).raw(self.user.0.as_bytes()).u32(self.entries.len() as u32);
        for ((attr, epoch), entry) in &self.entries {
            enc.str(&attr.to_string())
                .u64(*epoch)
                .raw(&entry.secret)
                .raw(&entry.signature.0);
        }
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let bad = |e: &dyn std::fmt::Display| AbeError::MalformedKey(e.to_string());
        let mut dec = Decoder::new(bytes);
        let version = dec.u8().map_err(|e| bad(&e))?;
        if version != KEY_VERSION {
            return Err(AbeError::MalformedKey(format!("unsupported key version {version}")));
        }
        let user = AccountId(Digest(dec.array::<32>().map_err(|e| bad(&e))?));
        let n = dec.u32().map_err(|e| bad(&e))?;
        let mut key = ABKey::empty(user);
        for _ in 0..n {
            let attr: Attribute = dec
                .str()
                .map_err(|e| bad(&e))?
                .parse()
                .map_err(|e| bad(&e))?;
            let epoch = dec.u64().map_err(|e| bad(&e))?;
            let secret = dec.array::<32>().map_err(|e| bad(&e))?;
            let sig = Signature(dec.array::<64>().map_err(|e| bad(&e))?);
            if key.entries.insert((attr, epoch), KeyEntry::new(secret, sig)).is_some() {
                return Err(AbeError::MalformedKey("duplicate entry".into()));
            }
        }
        dec.finish().map_err(|e| bad(&e))?;
        Ok(key)
    }
}
