use std::any::Any;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::identity::Identity;

/// Order-sensitive arithmetic contract: `add` and `mul` do not commute.
#[derive(Default)]
struct Counter {
    value: u64,
}

const COUNTER: &str = "counter";

impl Contract for Counter {
    fn id(&self) -> ContractId {
        ContractId::new(COUNTER)
    }

    fn execute(&mut self, _ctx: &CallContext<'_>, call: &str, args: &NamedArgs) -> Result<CallOutput, ContractError> {
        let n = args.u64("n")?;
        self.value = match call {
            "add" => self.value.wrapping_add(n),
            "mul" => self.value.wrapping_mul(n),
            other => return Err(ContractError::new("UnknownCall", other)),
        };
        Ok(CallOutput::new(NamedArgs::new().with_u64("value", self.value))
            .event("Changed", NamedArgs::new().with_u64("value", self.value)))
    }

    fn state_bytes(&self) -> Vec<u8> {
        self.value.to_be_bytes().to_vec()
    }

    fn fresh(&self) -> Box<dyn Contract> {
        Box::new(Counter::default())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

fn ledger() -> Ledger {
    Ledger::new(vec![Box::new(Counter::default())])
}

fn call(id: &Identity, nonce: u64, op: &str, n: u64) -> Tx {
    Tx::new_signed(id, ContractId::new(COUNTER), op, NamedArgs::new().with_u64("n", n), nonce)
}

fn counter(l: &Ledger) -> u64 {
    l.contract::<Counter>(&ContractId::new(COUNTER)).unwrap().value
}

/// A ledger with `blocks` sealed blocks of random counter calls.
fn populated(seed: u64, blocks: usize) -> Ledger {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users: Vec<_> = (0..3).map(|i| Identity::from_seed(&[i])).collect();
    let mut nonces = [0u64; 3];
    let mut l = ledger();
    for _ in 0..blocks {
        for _ in 0..rng.gen_range(1..5) {
            let u = rng.gen_range(0..3);
            let op = if rng.gen_bool(0.5) { "add" } else { "mul" };
            l.submit_tx(call(&users[u], nonces[u], op, rng.gen_range(0..10))).unwrap();
            nonces[u] += 1;
        }
        l.seal_block().unwrap();
    }
    l
}

#[test]
fn sequential_nonces_are_accepted() {
    let alice = Identity::from_seed(b"alice");
    let mut l = ledger();
    assert_eq!(l.submit_tx(call(&alice, 0, "add", 1)).unwrap().status, ReceiptStatus::Accepted);
    let receipt = l.submit_tx(call(&alice, 1, "add", 1)).unwrap();
    assert!(receipt.size_bytes > 0);
}

#[test]
fn replayed_nonce_is_rejected() {
    let alice = Identity::from_seed(b"alice");
    let mut l = ledger();
    let tx = call(&alice, 0, "add", 1);
    l.submit_tx(tx.clone()).unwrap();
    assert_eq!(l.submit_tx(tx), Err(SubmitError::BadNonce { expected: 1, got: 0 }));
    l.seal_block().unwrap();
    assert_eq!(
        l.submit_tx(call(&alice, 0, "add", 2)),
        Err(SubmitError::BadNonce { expected: 1, got: 0 })
    );
}

#[test]
fn undeployed_contract_is_unknown() {
    let alice = Identity::from_seed(b"alice");
    let mut l = Ledger::new(Vec::new());
    assert_eq!(
        l.submit_tx(call(&alice, 0, "add", 1)),
        Err(SubmitError::UnknownContract(ContractId::new(COUNTER)))
    );
    assert_eq!(l.pending(), 0);
}

#[test]
fn forged_signature_is_rejected() {
    let alice = Identity::from_seed(b"alice");
    let mallory = Identity::from_seed(b"mallory");
    let mut tx = call(&alice, 0, "add", 1);
    tx.signature = mallory.sign(&tx.tx_id.0);
    assert_eq!(ledger().submit_tx(tx), Err(SubmitError::BadSignature));

    let mut tx = call(&alice, 0, "add", 1);
    tx.args = NamedArgs::new().with_u64("n", 2);
    assert!(matches!(ledger().submit_tx(tx), Err(SubmitError::Malformed(_))));
}

#[test]
fn sealing_preserves_transaction_count() {
    let alice = Identity::from_seed(b"alice");
    let mut l = ledger();
    for n in 0..3 {
        l.submit_tx(call(&alice, n, "add", 1)).unwrap();
    }
    let header = l.seal_block().unwrap().unwrap();
    assert_eq!(header.height, 1);
    assert_eq!(header.tx_count, 3);
    assert_eq!(l.get_block(1).unwrap().txs.len(), 3);
}

#[test]
fn empty_pool_does_not_seal_unless_forced() {
    let mut l = ledger();
    assert_eq!(l.seal_block().unwrap(), None);
    assert_eq!(l.height(), 0);
    let forced = l.force_seal().unwrap();
    assert_eq!((forced.height, forced.tx_count), (1, 0));
}

#[test]
fn intra_block_execution_follows_submission_order() {
    let alice = Identity::from_seed(b"alice");
    let bob = Identity::from_seed(b"bob");
    let mut l = ledger();
    let ops = [(&alice, 0, "add", 3), (&bob, 0, "mul", 5), (&alice, 1, "add", 2)];
    for (who, nonce, op, n) in ops {
        l.submit_tx(call(who, nonce, op, n)).unwrap();
    }
    l.seal_block().unwrap();
    // Single-threaded reference apply.
    let expected = ops.iter().fold(0u64, |acc, (_, _, op, n)| match *op {
        "add" => acc + n,
        _ => acc * n,
    });
    assert_eq!(counter(&l), expected);
    assert_eq!(expected, 17);
}

#[test]
fn contract_failures_are_recorded_not_thrown() {
    let alice = Identity::from_seed(b"alice");
    let mut l = ledger();
    l.submit_tx(call(&alice, 0, "div", 1)).unwrap();
    l.submit_tx(call(&alice, 1, "add", 4)).unwrap();
    l.seal_block().unwrap();
    let block = l.get_block(1).unwrap();
    assert_eq!(block.txs.len(), 2);
    let failed = l.outcome(&block.txs[0].tx_id).unwrap();
    assert_eq!(failed.result.as_ref().unwrap_err().code, "UnknownCall");
    let events = l.query_events(&EventFilter::topic(CALL_FAILED_TOPIC));
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].tx_id, block.txs[0].tx_id);
    assert_eq!(counter(&l), 4);
}

#[test]
fn block_access_and_links() {
    let l = populated(1, 4);
    assert_eq!(l.get_block(0).unwrap().prev_hash, Digest::ZERO);
    assert!(l.get_block(0).unwrap().txs.is_empty());
    assert!(matches!(
        l.get_block(l.height() + 1),
        Err(LedgerError::OutOfRange { height: 5, head: 4 })
    ));
    for h in 0..l.height() {
        assert_eq!(l.get_block(h).unwrap().block_hash, l.get_block(h + 1).unwrap().prev_hash);
    }
    assert_eq!(l.get_chain_head().height, 4);
}

#[test]
fn untouched_chain_is_clean() {
    let l = populated(2, 5);
    let report = l.verify_chain();
    assert!(report.is_clean(), "{report}");
    assert_eq!(report.to_string(), "CLEAN (6 blocks)");
}

#[test]
fn flipped_argument_bytes_are_located() {
    let l = populated(3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let mut blocks = l.blocks().to_vec();
        let h = rng.gen_range(1..blocks.len());
        let tx_i = rng.gen_range(0..blocks[h].txs.len());
        let tx = &mut blocks[h].txs[tx_i];
        let mut raw = tx.args.raw("n").unwrap().to_vec();
        let byte = rng.gen_range(0..raw.len());
        raw[byte] ^= 1 << rng.gen_range(0..8);
        tx.args.insert_raw("n", raw);
        assert_eq!(verify_blocks(&blocks).divergent_height(), Some(h as u64));
    }
}

#[test]
fn reordered_transactions_are_located() {
    let alice = Identity::from_seed(b"alice");
    let bob = Identity::from_seed(b"bob");
    let mut l = ledger();
    l.submit_tx(call(&alice, 0, "add", 1)).unwrap();
    l.seal_block().unwrap();
    l.submit_tx(call(&alice, 1, "add", 1)).unwrap();
    l.submit_tx(call(&bob, 0, "mul", 2)).unwrap();
    l.seal_block().unwrap();
    let mut blocks = l.blocks().to_vec();
    blocks[2].txs.swap(0, 1);
    assert_eq!(verify_blocks(&blocks).divergent_height(), Some(2));
}

#[test]
fn any_single_bit_flip_in_a_stored_block_is_detected() {
    let l = populated(4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let h = rng.gen_range(0..=l.height()) as usize;
        let mut bytes = l.blocks()[h].to_bytes();
        let bit = rng.gen_range(0..bytes.len() * 8);
        bytes[bit / 8] ^= 1 << (bit % 8);
        match Block::from_bytes(&bytes) {
            Err(_) => {}
            Ok(mutated) => {
                let mut blocks = l.blocks().to_vec();
                blocks[h] = mutated;
                let report = verify_blocks(&blocks);
                assert!(!report.is_clean(), "bit {bit} of block {h} undetected");
            }
        }
    }
}

#[test]
fn event_queries() {
    let l = populated(5, 4);
    assert!(l.query_events(&EventFilter::topic("NoSuchTopic")).is_empty());
    assert_eq!(l.query_events(&EventFilter::default()), l.events());
    let by_contract = l.query_events(&EventFilter {
        contract: Some(ContractId::new(COUNTER)),
        from_height: Some(2),
        to_height: Some(3),
        ..Default::default()
    });
    let scanned: Vec<_> = l
        .events()
        .iter()
        .filter(|e| e.contract.as_str() == COUNTER && (2..=3).contains(&e.block_height))
        .cloned()
        .collect();
    assert_eq!(by_contract, scanned);
    // Total order by (height, index).
    let keys: Vec<_> = l.events().iter().map(|e| (e.block_height, e.index)).collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn history_is_append_only() {
    let mut l = populated(6, 3);
    let before: Vec<_> = l.blocks().iter().map(Block::to_bytes).collect();
    let extra = Identity::from_seed(b"late");
    for n in 0..5 {
        l.submit_tx(call(&extra, n, "add", 1)).unwrap();
        l.seal_block().unwrap();
    }
    for (h, bytes) in before.iter().enumerate() {
        assert_eq!(&l.get_block(h as u64).unwrap().to_bytes(), bytes);
    }
}

#[test]
fn identical_inputs_give_identical_chains() {
    let a = populated(11, 6);
    let b = populated(11, 6);
    let hashes = |l: &Ledger| l.blocks().iter().map(|b| b.block_hash).collect::<Vec<_>>();
    assert_eq!(hashes(&a), hashes(&b));
}

#[test]
fn rebuild_from_blocks_matches_live_state() {
    let l = populated(12, 6);
    let rebuilt = Ledger::from_blocks(l.blocks().to_vec(), l.fresh_contracts()).unwrap();
    assert_eq!(counter(&rebuilt), counter(&l));
    assert_eq!(rebuilt.state_root(), l.state_root());
    assert_eq!(rebuilt.events(), l.events());
}

#[test]
fn forged_state_root_is_caught_on_rebuild() {
    let l = populated(13, 3);
    let mut blocks = l.blocks().to_vec();
    let b = &mut blocks[2];
    b.state_root = Digest::of(b"forged");
    b.block_hash = b.recomputed_hash();
    let next_hash = b.block_hash;
    blocks[3].prev_hash = next_hash;
    blocks[3].block_hash = blocks[3].recomputed_hash();
    match Ledger::from_blocks(blocks, l.fresh_contracts()) {
        Err(LedgerError::ChainCorrupt(r)) => assert_eq!(r.divergent_height(), Some(2)),
        other => panic!("expected ChainCorrupt, got {other:?}"),
    }
}

#[test]
fn file_backed_ledger_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.bin");
    let alice = Identity::from_seed(b"alice");
    let head = {
        let mut l = Ledger::open(&path, vec![Box::new(Counter::default())]).unwrap();
        for n in 0..4 {
            l.submit_tx(call(&alice, n, "add", n + 1)).unwrap();
            l.seal_block().unwrap();
        }
        l.get_chain_head()
    };
    let mut l = Ledger::open(&path, vec![Box::new(Counter::default())]).unwrap();
    assert_eq!(l.get_chain_head(), head);
    assert_eq!(counter(&l), 10);
    assert_eq!(l.next_nonce(&alice.account()), 4);
    l.submit_tx(call(&alice, 4, "add", 1)).unwrap();
    l.seal_block().unwrap();
    assert!(verify_ledger_file(&path).unwrap().is_clean());
}

#[test]
fn tampered_ledger_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.bin");
    let alice = Identity::from_seed(b"alice");
    {
        let mut l = Ledger::open(&path, vec![Box::new(Counter::default())]).unwrap();
        for n in 0..3 {
            l.submit_tx(call(&alice, n, "add", 7)).unwrap();
            l.seal_block().unwrap();
        }
    }
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x80;
    std::fs::write(&path, bytes).unwrap();
    let report = verify_ledger_file(&path).unwrap();
    assert_eq!(report.divergent_height(), Some(3));
    assert!(Ledger::open(&path, vec![Box::new(Counter::default())]).is_err());
}
