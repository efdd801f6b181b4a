use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::identity::{AccountId, Identity};

fn rng() -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(7)
}

fn seed(tag: u8) -> [u8; 32] {
    [tag; 32]
}

fn attrs(xs: &[&str]) -> BTreeSet<Attribute> {
    xs.iter().map(|s| s.parse().unwrap()).collect()
}

fn user() -> AccountId {
    Identity::from_seed(b"abe-user").account()
}

fn authorities() -> BTreeMap<String, AuthorityKeys> {
    [("A", 1u8), ("B", 2u8)]
        .into_iter()
        .map(|(id, s)| (id.to_owned(), AuthorityKeys::setup(id, &seed(s)).unwrap()))
        .collect()
}

fn key_for(auths: &BTreeMap<String, AuthorityKeys>, user: &AccountId, set: &BTreeSet<Attribute>, epoch: u64) -> ABKey {
    let mut key = ABKey::empty(*user);
    for (id, keys) in auths {
        let mine: BTreeSet<_> = set.iter().filter(|a| &a.authority == id).cloned().collect();
        key.merge(keys.issue_key(user, &mine, set, epoch).unwrap()).unwrap();
    }
    key
}

#[test]
fn disjunction_one_branch_suffices() {
    let auths = authorities();
    let policy = parse_policy("a@A or b@B").unwrap();
    let env = encrypt(b"hello", &policy, &auths, 0, &mut rng()).unwrap();
    let key = key_for(&auths, &user(), &attrs(&["a@A"]), 0);
    assert_eq!(decrypt(&env, &key).unwrap(), b"hello");
}

#[test]
fn conjunction_needs_both() {
    let auths = authorities();
    let policy = parse_policy("a@A and b@B").unwrap();
    let env = encrypt(b"hello", &policy, &auths, 0, &mut rng()).unwrap();
    let partial = key_for(&auths, &user(), &attrs(&["a@A"]), 0);
    assert_eq!(decrypt(&env, &partial), Err(AbeError::PolicyNotSatisfied));
    let full = key_for(&auths, &user(), &attrs(&["a@A", "b@B"]), 0);
    assert_eq!(decrypt(&env, &full).unwrap(), b"hello");
}

#[test]
fn single_attribute_round_trip_through_bytes() {
    let auths = authorities();
    let policy = parse_policy("a@A").unwrap();
    let env = encrypt(b"payload", &policy, &auths, 0, &mut rng()).unwrap();
    let bytes = env.to_bytes();
    let back = CiphertextEnvelope::from_bytes(&bytes).unwrap();
    assert_eq!(back, env);
    let key = key_for(&auths, &user(), &attrs(&["a@A"]), 0);
    assert_eq!(decrypt(&back, &key).unwrap(), b"payload");
}

#[test]
fn flipped_byte_is_tampering() {
    let auths = authorities();
    let policy = parse_policy("a@A or b@B").unwrap();
    let bytes = encrypt(b"payload", &policy, &auths, 0, &mut rng()).unwrap().to_bytes();
    for i in [0, bytes.len() / 2, bytes.len() - 40, bytes.len() - 1] {
        let mut t = bytes.clone();
        t[i] ^= 0x01;
        assert!(matches!(
            CiphertextEnvelope::from_bytes(&t),
            Err(AbeError::TamperedEnvelope(_))
        ));
    }
    assert!(matches!(
        CiphertextEnvelope::from_bytes(&bytes[..10]),
        Err(AbeError::TamperedEnvelope(_))
    ));
}

#[test]
fn wrong_epoch_secret_does_not_satisfy() {
    let auths = authorities();
    let policy = parse_policy("a@A").unwrap();
    let env = encrypt(b"payload", &policy, &auths, 3, &mut rng()).unwrap();
    let stale = key_for(&auths, &user(), &attrs(&["a@A"]), 2);
    assert_eq!(decrypt(&env, &stale), Err(AbeError::PolicyNotSatisfied));
    let fresh = key_for(&auths, &user(), &attrs(&["a@A"]), 3);
    assert_eq!(decrypt(&env, &fresh).unwrap(), b"payload");
}

#[test]
fn empty_plaintext_and_unknown_authority() {
    let auths = authorities();
    let policy = parse_policy("a@A").unwrap();
    assert_eq!(encrypt(b"", &policy, &auths, 0, &mut rng()), Err(AbeError::EmptyPlaintext));
    let policy = parse_policy("a@A or z@Z").unwrap();
    assert_eq!(
        encrypt(b"x", &policy, &auths, 0, &mut rng()),
        Err(AbeError::UnknownAuthority("Z".into()))
    );
}

#[test]
fn authority_setup_rules() {
    let a = AuthorityKeys::setup("A", &seed(1)).unwrap();
    let b = AuthorityKeys::setup("B", &seed(2)).unwrap();
    assert_ne!(a.info().verifying_key, b.info().verifying_key);
    let again = AuthorityKeys::setup("A", &seed(1)).unwrap();
    assert_eq!(a.info(), again.info());
    assert_eq!(a.attribute_public_key("x", 0), again.attribute_public_key("x", 0));
    assert_eq!(AuthorityKeys::setup("A", &[0u8; 8]).unwrap_err(), AbeError::WeakSeed(8));

    let reg = AuthorityRegistry::new();
    reg.add_local("A", &seed(1)).unwrap();
    assert_eq!(
        reg.add_local("A", &seed(1)).unwrap_err(),
        AbeError::DuplicateAuthority("A".into())
    );
    reg.add_local("B", &seed(2)).unwrap();
    assert_eq!(reg.len(), 2);
}

#[test]
fn issued_entry_is_the_keyed_derivation() {
    let a = AuthorityKeys::setup("A", &seed(1)).unwrap();
    let u = user();
    let key = a.issue_key(&u, &attrs(&["Patient@A"]), &attrs(&["Patient@A"]), 5).unwrap();
    assert_eq!(key.len(), 1);
    let entry = key.entry(&"Patient@A".parse().unwrap(), 5).unwrap();
    assert_eq!(entry.secret(), &a.attribute_secret("Patient", 5));
    assert_ne!(entry.secret(), &a.attribute_secret("Patient", 4));
    key.verify(&[a.info()]).unwrap();
}

#[test]
fn issuance_checks_grants_and_governance() {
    let a = AuthorityKeys::setup("A", &seed(1)).unwrap();
    let u = user();
    assert_eq!(
        a.issue_key(&u, &attrs(&["x@A"]), &attrs(&["y@A"]), 0).unwrap_err(),
        AbeError::UngrantedAttribute("x@A".parse().unwrap())
    );
    assert!(matches!(
        a.issue_key(&u, &attrs(&["x@B"]), &attrs(&["x@B"]), 0),
        Err(AbeError::ForeignAttribute { .. })
    ));
}

#[test]
fn partial_keys_merge_by_union() {
    let auths = authorities();
    let u = user();
    let a = auths["A"].issue_key(&u, &attrs(&["p@A", "q@A"]), &attrs(&["p@A", "q@A"]), 0).unwrap();
    let b = auths["B"].issue_key(&u, &attrs(&["r@B"]), &attrs(&["r@B"]), 0).unwrap();
    let mut merged = a.clone();
    merged.merge(b.clone()).unwrap();
    assert_eq!(merged.len(), a.len() + b.len());

    let other = Identity::from_seed(b"someone else").account();
    let foreign = auths["B"].issue_key(&other, &attrs(&["r@B"]), &attrs(&["r@B"]), 0).unwrap();
    assert!(matches!(merged.merge(foreign), Err(AbeError::MalformedKey(_))));
}

#[test]
fn key_wire_format_round_trips() {
    let auths = authorities();
    let key = key_for(&auths, &user(), &attrs(&["a@A", "b@B"]), 1);
    let bytes = key.to_bytes();
    assert_eq!(ABKey::from_bytes(&bytes).unwrap(), key);
    assert!(matches!(ABKey::from_bytes(&bytes[..bytes.len() - 1]), Err(AbeError::MalformedKey(_))));
    let mut bad = bytes.clone();
    bad[0] = 9;
    assert!(matches!(ABKey::from_bytes(&bad), Err(AbeError::MalformedKey(_))));
}

#[test]
fn forged_entry_fails_verification() {
    let auths = authorities();
    let key = key_for(&auths, &user(), &attrs(&["a@A"]), 0);
    let mut bytes = key.to_bytes();
    // Last 96 bytes are secret and signature. Byte 0 of the secret is
    // partly clamped away, so flip a later one.
    let at = bytes.len() - 96 + 5;
    bytes[at] ^= 1;
    let forged = ABKey::from_bytes(&bytes).unwrap();
    let infos: Vec<_> = auths.values().map(|a| a.info()).collect();
    assert!(matches!(forged.verify(&infos), Err(AbeError::MalformedKey(_))));
}

#[test]
fn registry_issue_is_all_or_nothing() {
    let reg = AuthorityRegistry::new();
    reg.add_local("A1", &seed(1)).unwrap();
    reg.add_local("A2", &seed(2)).unwrap();
    let u = user();
    let want = attrs(&["inst_x@A1", "Ministry@A2"]);
    assert_eq!(reg.issue(&u, &want, &want, 0).unwrap().len(), 2);
    reg.set_enabled("A2", false).unwrap();
    assert_eq!(
        reg.issue(&u, &want, &want, 0).unwrap_err(),
        AbeError::AuthorityUnavailable("A2".into())
    );
    let list = reg.list();
    assert_eq!(list.iter().filter(|a| a.enabled).count(), 1);
}

#[test]
fn removing_an_authority_only_affects_its_policies() {
    let reg = AuthorityRegistry::new();
    reg.add_local("A1", &seed(1)).unwrap();
    reg.add_local("A2", &seed(2)).unwrap();
    let u = user();
    let p1 = parse_policy("x@A1").unwrap();
    let p2 = parse_policy("y@A2").unwrap();
    let e1 = encrypt(b"one", &p1, &reg, 0, &mut rng()).unwrap();
    let e2 = encrypt(b"two", &p2, &reg, 0, &mut rng()).unwrap();
    reg.remove("A2");
    let k1 = reg.issue(&u, &attrs(&["x@A1"]), &attrs(&["x@A1"]), 0).unwrap();
    assert_eq!(decrypt(&e1, &k1).unwrap(), b"one");
    assert!(reg.issue(&u, &attrs(&["y@A2"]), &attrs(&["y@A2"]), 0).is_err());
    assert_eq!(decrypt(&e2, &k1), Err(AbeError::PolicyNotSatisfied));
}

#[test]
fn ciphertext_hides_plaintext() {
    let auths = authorities();
    let policy = parse_policy("a@A and (b@B or c@A)").unwrap();
    let marker = b"MARKER-PLAINTEXT-0123456789".repeat(40);
    let bytes = encrypt(&marker, &policy, &auths, 0, &mut rng()).unwrap().to_bytes();
    assert!(!bytes.windows(27).any(|w| w == &marker[..27]));
    let ones: u32 = bytes.iter().map(|b| b.count_ones()).sum();
    let ratio = f64::from(ones) / (bytes.len() as f64 * 8.0);
    assert!((0.4..0.6).contains(&ratio), "bit balance {ratio}");
}

#[test]
fn repeated_attribute_leaves_are_handled() {
    let auths = authorities();
    let policy = parse_policy("(a@A and b@B) or (a@A and c@A)").unwrap();
    let env = encrypt(b"m", &policy, &auths, 0, &mut rng()).unwrap();
    assert_eq!(decrypt(&env, &key_for(&auths, &user(), &attrs(&["a@A", "c@A"]), 0)).unwrap(), b"m");
    assert_eq!(
        decrypt(&env, &key_for(&auths, &user(), &attrs(&["a@A"]), 0)),
        Err(AbeError::PolicyNotSatisfied)
    );
}

/// The ideal functionality forbids two users from pooling attributes to
/// satisfy a policy neither satisfies alone. This construction allows it.
#[test]
#[ignore = "known gap: the hybrid construction is not collusion resistant"]
fn colluding_users_cannot_pool_attributes() {
    let auths = authorities();
    let policy = parse_policy("a@A and b@B").unwrap();
    let env = encrypt(b"secret", &policy, &auths, 0, &mut rng()).unwrap();
    let alice = Identity::from_seed(b"alice").account();
    let bob = Identity::from_seed(b"bob").account();
    let ka = key_for(&auths, &alice, &attrs(&["a@A"]), 0);
    let kb = key_for(&auths, &bob, &attrs(&["b@B"]), 0);
    // Re-label Bob's entries as Alice's: the secrets carry no user binding.
    let mut pooled = ka.to_bytes();
    let kb_bytes = kb.to_bytes();
    let n = u32::from_be_bytes(pooled[33..37].try_into().unwrap()) + 1;
    pooled[33..37].copy_from_slice(&n.to_be_bytes());
    pooled.extend_from_slice(&kb_bytes[37..]);
    let pooled = ABKey::from_bytes(&pooled).unwrap();
    assert_eq!(decrypt(&env, &pooled), Err(AbeError::PolicyNotSatisfied));
}
