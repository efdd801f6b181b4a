//! Policy-gated hybrid encryption.
//!
//! A fresh data key seals the payload. The key is shared down the policy
//! tree (XOR split at AND, copy at OR) and each leaf share is wrapped to the
//! leaf attribute's public key with an ephemeral X25519 exchange.

use std::collections::HashMap;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha256};
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

use super::authority::PublicParams;
use super::key::ABKey;
use super::policy::{parse_policy, PolicyTree};
use super::{AbeError, Attribute};
use crate::codec::{Decoder, Encoder};

pub const ENVELOPE_VERSION: u8 = 1;
const TAG_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrappedShare {
    /// Child indices from the root down to the leaf.
    pub path: Vec<u16>,
    pub attribute: Attribute,
    pub wrapped: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CiphertextEnvelope {
    pub policy: PolicyTree,
    pub epoch: u64,
    pub ephemeral: [u8; 32],
    pub nonce: [u8; 12],
    pub shares: Vec<WrappedShare>,
    pub ciphertext: Vec<u8>,
}

fn wrap_key(shared: &[u8; 32], ephemeral: &[u8; 32], path: &[u16], attr: &Attribute, epoch: u64) -> Key {
    let mut info = Encoder::new();
    info.str("confetty/abe-leaf").u32(path.len() as u32);
    for p in path {
        info.u16(*p);
    }
    info.str(&attr.to_string()).u64(epoch);
    let mut out = [0u8; 32];
    Hkdf::<Sha256>::new(Some(ephemeral), shared)
        .expand(&info.finish(), &mut out)
        .expect("32 bytes is a valid hkdf length");
    out.into()
}

fn xor_into(acc: &mut [u8; 32], x: &[u8; 32]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a ^= b);
}

fn share_down<R: RngCore + CryptoRng>(
    node: &PolicyTree,
    secret: [u8; 32],
    path: &mut Vec<u16>,
    rng: &mut R,
    out: &mut Vec<(Vec<u16>, Attribute, [u8; 32])>,
) {
    match node {
        PolicyTree::Attr(a) => out.push((path.clone(), a.clone(), secret)),
        PolicyTree::Or(xs) => {
            for (i, x) in xs.iter().enumerate() {
                path.push(i as u16);
                share_down(x, secret, path, rng, out);
                path.pop();
            }
        }
        PolicyTree::And(xs) => {
            // n-of-n additive split: the last share closes the XOR sum.
            let mut last = secret;
            for (i, x) in xs.iter().enumerate() {
                let share = if i + 1 == xs.len() {
                    last
                } else {
                    let mut s = [0u8; 32];
                    rng.fill_bytes(&mut s);
                    xor_into(&mut last, &s);
                    s
                };
                path.push(i as u16);
                share_down(x, share, path, rng, out);
                path.pop();
            }
        }
    }
}

/// Encrypts `plaintext` so that only keys satisfying `policy` at `epoch` can
/// recover it.
pub fn encrypt<R: RngCore + CryptoRng>(
    plaintext: &[u8],
    policy: &PolicyTree,
    params: &impl PublicParams,
    epoch: u64,
    rng: &mut R,
) -> Result<CiphertextEnvelope, AbeError> {
    if plaintext.is_empty() {
        return Err(AbeError::EmptyPlaintext);
    }
    let mut attr_keys: HashMap<Attribute, XPublic> = HashMap::new();
    for a in policy.leaves() {
        if !attr_keys.contains_key(a) {
            attr_keys.insert(a.clone(), XPublic::from(params.attribute_public_key(a, epoch)?));
        }
    }

    let mut data_key = [0u8; 32];
    rng.fill_bytes(&mut data_key);
    let mut leaves = Vec::new();
    share_down(policy, data_key, &mut Vec::new(), rng, &mut leaves);

    let mut eph_bytes = [0u8; 32];
    rng.fill_bytes(&mut eph_bytes);
    let eph = StaticSecret::from(eph_bytes);
    let ephemeral = XPublic::from(&eph).to_bytes();

    // One exchange per distinct attribute.
    let shared: HashMap<&Attribute, [u8; 32]> = attr_keys
        .iter()
        .map(|(a, pk)| (a, eph.diffie_hellman(pk).to_bytes()))
        .collect();
    let mut shares = Vec::with_capacity(leaves.len());
    for (path, attr, share) in leaves {
        let shared = shared[&attr];
        let wk = wrap_key(&shared, &ephemeral, &path, &attr, epoch);
        let wrapped = ChaCha20Poly1305::new(&wk)
            .encrypt(&Nonce::default(), share.as_slice())
            .map_err(|_| AbeError::EncryptionFailed("share wrap".into()))?;
        shares.push(WrappedShare {
            path,
            attribute: attr,
            wrapped,
        });
    }

    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    let mut env = CiphertextEnvelope {
        policy: policy.clone(),
        epoch,
        ephemeral,
        nonce,
        shares,
        ciphertext: Vec::new(),
    };
    let aad = env.header_bytes();
    env.ciphertext = ChaCha20Poly1305::new(&data_key.into())
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: plaintext,
                aad: &aad,
            },
        )
        .map_err(|_| AbeError::EncryptionFailed("payload seal".into()))?;
    Ok(env)
}

/// Recovers the plaintext if `key` holds enough attribute secrets for the
/// envelope's epoch.
pub fn decrypt(env: &CiphertextEnvelope, key: &ABKey) -> Result<Vec<u8>, AbeError> {
    let eph = XPublic::from(env.ephemeral);
    let by_path: HashMap<&[u16], &WrappedShare> = env.shares.iter().map(|s| (s.path.as_slice(), s)).collect();
    let mut dh_cache: HashMap<Attribute, Option<[u8; 32]>> = HashMap::new();

    let mut unwrap_leaf = |path: &[u16], attr: &Attribute| -> Option<[u8; 32]> {
        let rec = by_path.get(path).filter(|r| &r.attribute == attr)?;
        let shared = dh_cache
            .entry(attr.clone())
            .or_insert_with(|| {
                key.entry(attr, env.epoch)
                    .map(|e| StaticSecret::from(*e.secret()).diffie_hellman(&eph).to_bytes())
            })
            .as_ref()?;
        let wk = wrap_key(shared, &env.ephemeral, path, attr, env.epoch);
        let share = ChaCha20Poly1305::new(&wk)
            .decrypt(&Nonce::default(), rec.wrapped.as_slice())
            .ok()?;
        share.try_into().ok()
    };

    fn recover(
        node: &PolicyTree,
        path: &mut Vec<u16>,
        leaf: &mut dyn FnMut(&[u16], &Attribute) -> Option<[u8; 32]>,
    ) -> Option<[u8; 32]> {
        match node {
            PolicyTree::Attr(a) => leaf(path, a),
            PolicyTree::Or(xs) => xs.iter().enumerate().find_map(|(i, x)| {
                path.push(i as u16);
                let r = recover(x, path, leaf);
                path.pop();
                r
            }),
            PolicyTree::And(xs) => {
                let mut acc = [0u8; 32];
                for (i, x) in xs.iter().enumerate() {
                    path.push(i as u16);
                    let r = recover(x, path, leaf);
                    path.pop();
                    xor_into(&mut acc, &r?);
                }
                Some(acc)
            }
        }
    }

    let data_key = recover(&env.policy, &mut Vec::new(), &mut unwrap_leaf).ok_or(AbeError::PolicyNotSatisfied)?;
    let aad = env.header_bytes();
    ChaCha20Poly1305::new(&data_key.into())
        .decrypt(
            Nonce::from_slice(&env.nonce),
            Payload {
                msg: &env.ciphertext,
                aad: &aad,
            },
        )
        .map_err(|_| AbeError::TamperedEnvelope("payload authentication failed".into()))
}

impl CiphertextEnvelope {
    pub fn policy_text(&self) -> String {
        self.policy.render()
    }

    /// Everything before the ciphertext; authenticated as associated data.
    fn header_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_header(&mut enc);
        enc.finish()
    }

    fn encode_header(&self, enc: &mut Encoder) {
        enc.u8(ENVELOPE_VERSION)
            .str(&self.policy.render())
            .u64(self.epoch)
            .raw(&self.ephemeral)
            .raw(&self.nonce)
            .u32(self.shares.len() as u32);
        for s in &self.shares {
            enc.u16(s.path.len() as u16);
            for p in &s.path {
                enc.u16(*p);
            }
            enc.str(&s.attribute.to_string()).bytes(&s.wrapped);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_header(&mut enc);
        enc.bytes(&self.ciphertext);
        let mut out = enc.finish();
        let tag = Sha256::digest(&out);
        out.extend_from_slice(&tag);
        out
    }

    /// Checks the integrity tag before looking at anything else.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        if bytes.len() < TAG_LEN {
            return Err(AbeError::TamperedEnvelope("envelope shorter than its tag".into()));
        }
        let (body, tag) = bytes.split_at(bytes.len() - TAG_LEN);
        if Sha256::digest(body).as_slice() != tag {
            return Err(AbeError::TamperedEnvelope("integrity tag mismatch".into()));
        }
        let bad = |e: &dyn std::fmt::Display| AbeError::TamperedEnvelope(e.to_string());
        let mut dec = Decoder::new(body);
        let version = dec.u8().map_err(|e| bad(&e))?;
        if version != ENVELOPE_VERSION {
            return Err(AbeError::TamperedEnvelope(format!("unsupported version {version}")));
        }
        let policy = parse_policy(&dec.str().map_err(|e| bad(&e))?).map_err(|e| bad(&e))?;
        let epoch = dec.u64().map_err(|e| bad(&e))?;
        let ephemeral = dec.array::<32>().map_err(|e| bad(&e))?;
        let nonce = dec.array::<12>().map_err(|e| bad(&e))?;
        let n = dec.u32().map_err(|e| bad(&e))?;
        let mut shares = Vec::new();
        for _ in 0..n {
            let depth = dec.u16().map_err(|e| bad(&e))?;
            let path = (0..depth)
                .map(|_| dec.u16())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(&e))?;
            let attribute = dec
                .str()
                .map_err(|e| bad(&e))?
                .parse()
                .map_err(|e| bad(&e))?;
            let wrapped = dec.bytes().map_err(|e| bad(&e))?.to_vec();
            shares.push(WrappedShare {
                path,
                attribute,
                wrapped,
            });
        }
        let ciphertext = dec.bytes().map_err(|e| bad(&e))?.to_vec();
        dec.finish().map_err(|e| bad(&e))?;
        Ok(Self {
            policy,
            epoch,
            ephemeral,
            nonce,
            shares,
            ciphertext,
        })
    }
}
