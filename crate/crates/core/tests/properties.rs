use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use confetty_core::abe::{decrypt, encrypt, parse_policy, AuthorityRegistry, PolicyTree};
use confetty_core::cas::{CasConfig, CasError, CasStore};
use confetty_core::codec::NamedArgs;
use confetty_core::identity::Identity;
use confetty_core::ledger::{verify_blocks, Block, ContractId, Ledger, Tx};
use confetty_core::oracles::formulas::{Formula, LEAVES};
use confetty_core::service::{compose_drafts, standard_authorities};

fn formula() -> impl Strategy<Value = Formula> {
    let leaf = (0..LEAVES.len()).prop_map(Formula::Leaf);
    leaf.prop_recursive(3, 8, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(l, r)| Formula::And(Box::new(l), Box::new(r))),
            (inner.clone(), inner).prop_map(|(l, r)| Formula::Or(Box::new(l), Box::new(r))),
        ]
    })
}

fn attrs_of(mask: u8) -> BTreeSet<confetty_core::abe::Attribute> {
    (0..4).filter(|i| mask & (1 << i) != 0).map(|i| LEAVES[i].parse().unwrap()).collect()
}

fn registry() -> &'static AuthorityRegistry {
    static REG: std::sync::OnceLock<AuthorityRegistry> = std::sync::OnceLock::new();
    REG.get_or_init(|| standard_authorities(b"properties").unwrap())
}

fn ledger_with(n: usize) -> Ledger {
    let mut l = Ledger::new(Vec::new());
    let who = Identity::from_seed(b"prop-ledger");
    for i in 0..n {
        let tx = Tx::new_signed(&who, ContractId::new("none"), "noop", NamedArgs::new().with_u64("i", i as u64), i as u64);
        let _ = l.submit_tx(tx);
        l.force_seal().unwrap();
    }
    l
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn policy_render_reparses_to_an_equal_tree(f in formula()) {
        let tree = parse_policy(&f.render()).unwrap();
        let again = parse_policy(&tree.render()).unwrap();
        prop_assert_eq!(&again, &tree);
        for mask in 0u8..16 {
            prop_assert_eq!(tree.satisfies(&attrs_of(mask)), f.eval(mask));
        }
    }

    #[test]
    fn decryption_succeeds_exactly_when_the_policy_is_satisfied(f in formula(), mask in 0u8..16, seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let policy: PolicyTree = parse_policy(&f.render()).unwrap();
        let env = encrypt(b"payload", &policy, registry(), 0, &mut rng).unwrap();
        let granted = attrs_of(mask);
        let user = Identity::from_seed(b"prop-user").account();
        let key = registry().issue(&user, &granted, &granted, 0).unwrap();
        let opened = decrypt(&env, &key);
        prop_assert_eq!(opened.is_ok(), f.eval(mask));
        if let Ok(pt) = opened {
            prop_assert_eq!(pt, b"payload".to_vec());
        }
    }

    #[test]
    fn locators_agree_exactly_when_contents_agree(x in proptest::collection::vec(any::<u8>(), 1..64), y in proptest::collection::vec(any::<u8>(), 1..64)) {
        let dir = tempfile::tempdir().unwrap();
        let cas = CasStore::open(dir.path(), CasConfig::default()).unwrap();
        let lx = cas.put(&x).unwrap();
        let ly = cas.put(&y).unwrap();
        prop_assert_eq!(lx == ly, x == y);
        prop_assert_eq!(cas.get(&lx).unwrap(), x);
        prop_assert_eq!(cas.get(&ly).unwrap(), y);
    }

    #[test]
    fn any_stored_byte_mutation_is_an_integrity_violation(data in proptest::collection::vec(any::<u8>(), 1..256), pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let dir = tempfile::tempdir().unwrap();
        let cas = CasStore::open(dir.path(), CasConfig::default()).unwrap();
        let loc = cas.put(&data).unwrap();
        let path = cas.object_path(&loc);
        let mut bytes = std::fs::read(&path).unwrap();
        let i = pos.index(bytes.len());
        bytes[i] ^= flip;
        std::fs::write(&path, &bytes).unwrap();
        prop_assert!(matches!(cas.get(&loc), Err(CasError::IntegrityViolation(_))));
    }

    #[test]
    fn sealed_blocks_never_change(first in 1usize..6, more in 1usize..6) {
        let mut l = ledger_with(first);
        let before: Vec<Vec<u8>> = l.blocks().iter().map(Block::to_bytes).collect();
        let who = Identity::from_seed(b"prop-ledger-2");
        for i in 0..more {
            let _ = l.submit_tx(Tx::new_signed(&who, ContractId::new("none"), "noop", NamedArgs::new(), i as u64));
            l.force_seal().unwrap();
        }
        for (h, b) in before.iter().enumerate() {
            prop_assert_eq!(&l.get_block(h as u64).unwrap().to_bytes(), b);
        }
    }

    #[test]
    fn identical_histories_give_identical_hashes(n in 1usize..8) {
        let a: Vec<_> = ledger_with(n).blocks().iter().map(|b| b.block_hash).collect();
        let b: Vec<_> = ledger_with(n).blocks().iter().map(|b| b.block_hash).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn any_bit_flip_in_history_is_detected(n in 2usize..5, pick in any::<prop::sample::Index>(), bit in 0u8..8) {
        let l = ledger_with(n);
        let mut blocks: Vec<Vec<u8>> = l.blocks().iter().map(Block::to_bytes).collect();
        let total: usize = blocks.iter().map(Vec::len).sum();
        let mut at = pick.index(total);
        for b in blocks.iter_mut() {
            if at < b.len() {
                b[at] ^= 1 << bit;
                break;
            }
            at -= b.len();
        }
        // A flip either breaks decoding or is caught by verification.
        let decoded: Result<Vec<Block>, _> = blocks.iter().map(|b| Block::from_bytes(b)).collect();
        if let Ok(decoded) = decoded {
            prop_assert!(!verify_blocks(&decoded).is_clean());
        }
    }

    #[test]
    fn drafts_depend_only_on_spec_and_custom_roles(pid_bytes in any::<[u8; 32]>(), inspector in "[A-Z][a-z]{2,8}") {
        let model = confetty_core::chor::parse_choreography(confetty_core::fixtures::XRAY_SPEC).unwrap();
        let pid = confetty_core::digest::Digest(pid_bytes);
        let roles = std::collections::BTreeMap::from([("Inspector".to_owned(), format!("{inspector}@A2").parse().unwrap())]);
        prop_assert_eq!(compose_drafts(&model, &pid, &roles), compose_drafts(&model, &pid, &roles));
    }
}
