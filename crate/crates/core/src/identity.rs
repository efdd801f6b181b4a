//! Account keys, signatures and account-bound sealing.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::Sha256;
use thiserror::Error;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::digest::Digest;

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("invalid public key")]
    InvalidPublicKey,
    #[error("invalid identity file: {0}")]
    InvalidFile(String),
    #[error("sealed payload could not be opened")]
    SealOpen,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Account identifier: the digest of the account's verification key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(pub Digest);

impl AccountId {
    pub fn from_public_key(pk: &PublicKey) -> Self {
        AccountId(Digest::of(&pk.0))
    }

    pub fn encode(&self, enc: &mut Encoder) {
        self.0.encode(enc);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(AccountId(Digest::decode(dec)?))
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AccountId({})", self.0.short(12))
    }
}

impl FromStr for AccountId {
    type Err = crate::digest::ParseDigestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(AccountId)
    }
}

/// Ed25519 verification key bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn account(&self) -> AccountId {
        AccountId::from_public_key(self)
    }

    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        let Ok(vk) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        vk.verify(msg, &ed25519_dalek::Signature::from_bytes(&sig.0))
            .is_ok()
    }

    fn montgomery(&self) -> Result<[u8; 32], IdentityError> {
        let vk = VerifyingKey::from_bytes(&self.0).map_err(|_| IdentityError::InvalidPublicKey)?;
        Ok(vk.to_montgomery().to_bytes())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &hex::encode(self.0)[..12])
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for PublicKey {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let raw = hex::decode(s).map_err(|_| IdentityError::InvalidPublicKey)?;
        let arr: [u8; 32] = raw.try_into().map_err(|_| IdentityError::InvalidPublicKey)?;
        Ok(PublicKey(arr))
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; 64]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &hex::encode(self.0)[..12])
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for Signature {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let raw = hex::decode(s).map_err(|_| DecodeError::Invalid("signature hex"))?;
        Signature::from_slice(&raw)
    }
}

impl Signature {
    pub fn from_slice(raw: &[u8]) -> Result<Self, DecodeError> {
        raw.try_into()
            .map(Signature)
            .map_err(|_| DecodeError::Invalid("signature length"))
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// A local keypair. Never serialized into requests, the ledger or the store.
#[derive(Clone)]
pub struct Identity {
    signing: SigningKey,
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identity")
            .field("account", &self.account())
            .finish_non_exhaustive()
    }
}

#[derive(Serialize, Deserialize)]
struct IdentityFile {
    account: AccountId,
    public_key: PublicKey,
    secret_key: String,
}

impl Identity {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self {
            signing: SigningKey::generate(rng),
        }
    }

    /// Deterministic identity for fixtures and tests.
    pub fn from_seed(seed: &[u8]) -> Self {
        let secret = Digest::of_encoded(|e| {
            e.str("confetty/identity").bytes(seed);
        });
        Self {
            signing: SigningKey::from_bytes(&secret.0),
        }
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn account(&self) -> AccountId {
        self.public_key().account()
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.signing.sign(msg).to_bytes())
    }

    pub fn to_json(&self) -> String {
        let file = IdentityFile {
            account: self.account(),
            public_key: self.public_key(),
            secret_key: hex::encode(self.signing.to_bytes()),
        };
        serde_json::to_string_pretty(&file).expect("identity serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, IdentityError> {
        let file: IdentityFile =
            serde_json::from_str(text).map_err(|e| IdentityError::InvalidFile(e.to_string()))?;
        let raw = hex::decode(&file.secret_key)
            .map_err(|_| IdentityError::InvalidFile("secret_key is not hex".into()))?;
        let secret: [u8; 32] = raw
            .try_into()
            .map_err(|_| IdentityError::InvalidFile("secret_key must be 32 bytes".into()))?;
        let id = Self {
            signing: SigningKey::from_bytes(&secret),
        };
        if id.public_key() != file.public_key || id.account() != file.account {
            return Err(IdentityError::InvalidFile(
                "public key does not match secret key".into(),
            ));
        }
        Ok(id)
    }

    pub fn load(path: &Path) -> Result<Self, IdentityError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), IdentityError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Opens a payload produced by [`seal_to`] for this account.
    pub fn open_sealed(&self, sealed: &[u8]) -> Result<Vec<u8>, IdentityError> {
        if sealed.len() < 32 {
            return Err(IdentityError::SealOpen);
        }
        let (eph, ct) = sealed.split_at(32);
        let eph: [u8; 32] = eph.try_into().expect("split at 32");
        let secret = x25519_dalek::StaticSecret::from(self.signing.to_scalar_bytes());
        let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(eph));
        let own = self.public_key().montgomery()?;
        let cipher = seal_cipher(shared.as_bytes(), &eph, &own);
        cipher
            .decrypt(Nonce::from_slice(&[0u8; 12]), ct)
            .map_err(|_| IdentityError::SealOpen)
    }
}

fn seal_cipher(shared: &[u8; 32], eph: &[u8; 32], recipient: &[u8; 32]) -> ChaCha20Poly1305 {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(eph);
    salt[32..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut key = [0u8; 32];
    hk.expand(b"confetty/sealed-v1", &mut key)
        .expect("32 bytes is a valid hkdf length");
    ChaCha20Poly1305::new(&key.into())
}

/// Encrypts `plaintext` to the holder of the account key `recipient`.
///
/// Output layout: ephemeral X25519 public key (32) followed by the AEAD
/// ciphertext. The Ed25519 account key is mapped to its Montgomery form.
pub fn seal_to<R: RngCore + CryptoRng>(
    recipient: &PublicKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<Vec<u8>, IdentityError> {
    let target = recipient.montgomery()?;
    let eph = x25519_dalek::EphemeralSecret::random_from_rng(&mut *rng);
    let eph_pub = x25519_dalek::PublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&x25519_dalek::PublicKey::from(target));
    let cipher = seal_cipher(shared.as_bytes(), &eph_pub, &target);
    let ct = cipher
        .encrypt(Nonce::from_slice(&[0u8; 12]), plaintext)
        .expect("in-memory encryption cannot fail");
    let mut out = eph_pub.to_vec();
    out.extend_from_slice(&ct);
    Ok(out)
}

/// Message an account signs to authorize one gateway request.
pub fn request_signing_message(endpoint: &str, body_digest: &Digest, nonce: u64) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str("confetty/request-v1")
        .str(endpoint)
        .raw(&body_digest.0)
        .u64(nonce);
    enc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn account_id_is_digest_of_public_key() {
        let id = Identity::from_seed(b"alice");
        assert_eq!(id.account().0, Digest::of(&id.public_key().0));
    }

    #[test]
    fn signatures_verify_and_reject_tampering() {
        let id = Identity::from_seed(b"alice");
        let sig = id.sign(b"hello");
        assert!(id.public_key().verify(b"hello", &sig));
        assert!(!id.public_key().verify(b"hellp", &sig));
        let other = Identity::from_seed(b"bob");
        assert!(!other.public_key().verify(b"hello", &sig));
    }

    #[test]
    fn sealed_payload_opens_only_for_recipient() {
        let alice = Identity::from_seed(b"alice");
        let bob = Identity::from_seed(b"bob");
        let sealed = seal_to(&alice.public_key(), b"key material", &mut rand::thread_rng()).unwrap();
        assert_eq!(alice.open_sealed(&sealed).unwrap(), b"key material");
        assert!(bob.open_sealed(&sealed).is_err());
    }

    #[test]
    fn identity_file_round_trip() {
        let id = Identity::from_seed(b"carol");
        let back = Identity::from_json(&id.to_json()).unwrap();
        assert_eq!(back.account(), id.account());
        let tampered = id.to_json().replace(&id.account().to_string(), &Digest::ZERO.to_hex());
        assert!(Identity::from_json(&tampered).is_err());
    }
}
