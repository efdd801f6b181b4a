use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Decoder, Encoder, NamedArgs};
use crate::digest::Digest;
use crate::identity::{AccountId, Identity, PublicKey, Signature};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContractId(pub String);

impl ContractId {
    pub fn new(id: &str) -> Self {
        ContractId(id.to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContractId({})", self.0)
    }
}

/// A signed contract call.
///
/// `sender_key` travels with the transaction so any node can check the
/// signature without a separate account registry; `sender` must be its
/// digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tx {
    pub tx_id: Digest,
    pub sender: AccountId,
    pub sender_key: PublicKey,
    pub contract: ContractId,
    pub call: String,
    pub args: NamedArgs,
    pub nonce: u64,
    pub signature: Signature,
}

impl Tx {
    /// Digest of the canonical encoding of the signed fields, in field-name
    /// order: args, call, contract, nonce, sender.
    pub fn compute_id(
        sender: &AccountId,
        contract: &ContractId,
        call: &str,
        args: &NamedArgs,
        nonce: u64,
    ) -> Digest {
        Digest::of_encoded(|e| {
            e.str("args");
            args.encode(e);
            e.str("call").str(call);
            e.str("contract").str(contract.as_str());
            e.str("nonce").u64(nonce);
            e.str("sender");
            sender.encode(e);
        })
    }

    pub fn new_signed(
        signer: &Identity,
        contract: ContractId,
        call: &str,
        args: NamedArgs,
        nonce: u64,
    ) -> Self {
        let sender = signer.account();
        let tx_id = Self::compute_id(&sender, &contract, call, &args, nonce);
        Self {
            tx_id,
            sender,
            sender_key: signer.public_key(),
            contract,
            call: call.to_owned(),
            args,
            nonce,
            signature: signer.sign(&tx_id.0),
        }
    }

    pub fn recomputed_id(&self) -> Digest {
        Self::compute_id(&self.sender, &self.contract, &self.call, &self.args, self.nonce)
    }

    pub fn signature_valid(&self) -> bool {
        self.sender_key.account() == self.sender
            && self.sender_key.verify(&self.tx_id.0, &self.signature)
    }

    pub fn encode(&self, enc: &mut Encoder) {
        self.tx_id.encode(enc);
        self.sender.encode(enc);
        enc.raw(&self.sender_key.0);
        enc.str(self.contract.as_str()).str(&self.call);
        self.args.encode(enc);
        enc.u64(self.nonce).raw(&self.signature.0);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            tx_id: Digest::decode(dec)?,
            sender: AccountId::decode(dec)?,
            sender_key: PublicKey(dec.array()?),
            contract: ContractId(dec.str()?),
            call: dec.str()?,
            args: NamedArgs::decode(dec)?,
            nonce: dec.u64()?,
            signature: Signature(dec.array()?),
        })
    }

    /// Encoded size; recorded per receipt as the on-chain cost proxy.
    pub fn encoded_len(&self) -> usize {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest,
    pub state_root: Digest,
    pub block_hash: Digest,
    pub tx_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub txs: Vec<Tx>,
    pub state_root: Digest,
    pub block_hash: Digest,
}

impl Block {
    pub fn compute_hash(height: u64, prev_hash: &Digest, txs: &[Tx], state_root: &Digest) -> Digest {
        Digest::of_encoded(|e| {
            e.u64(height);
            prev_hash.encode(e);
            e.u32(txs.len() as u32);
            for tx in txs {
                tx.tx_id.encode(e);
            }
            state_root.encode(e);
        })
    }

    pub fn new(height: u64, prev_hash: Digest, txs: Vec<Tx>, state_root: Digest) -> Self {
        let block_hash = Self::compute_hash(height, &prev_hash, &txs, &state_root);
        Self {
            height,
            prev_hash,
            txs,
            state_root,
            block_hash,
        }
    }

    pub fn recomputed_hash(&self) -> Digest {
        Self::compute_hash(self.height, &self.prev_hash, &self.txs, &self.state_root)
    }

    pub fn header(&self) -> BlockHeader {
        BlockHeader {
            height: self.height,
            prev_hash: self.prev_hash,
            state_root: self.state_root,
            block_hash: self.block_hash,
            tx_count: self.txs.len(),
        }
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.height);
        self.prev_hash.encode(enc);
        enc.u32(self.txs.len() as u32);
        for tx in &self.txs {
            tx.encode(enc);
        }
        self.state_root.encode(enc);
        self.block_hash.encode(enc);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let height = dec.u64()?;
        let prev_hash = Digest::decode(&mut dec)?;
        let n = dec.u32()? as usize;
        if n > dec.remaining() {
            return Err(DecodeError::UnexpectedEnd(dec.position()));
        }
        let txs = (0..n)
            .map(|_| Tx::decode(&mut dec))
            .collect::<Result<Vec<_>, _>>()?;
        let state_root = Digest::decode(&mut dec)?;
        let block_hash = Digest::decode(&mut dec)?;
        dec.finish()?;
        Ok(Self {
            height,
            prev_hash,
            txs,
            state_root,
            block_hash,
        })
    }
}

/// A contract-emitted log entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub block_height: u64,
    /// Position among the events of its block.
    pub index: u32,
    pub tx_id: Digest,
    pub contract: ContractId,
    pub topic: String,
    pub payload: NamedArgs,
}

#[derive(Debug, Clone, Default)]
pub struct EventFilter {
    pub contract: Option<ContractId>,
    pub topic: Option<String>,
    /// Inclusive height range.
    pub from_height: Option<u64>,
    pub to_height: Option<u64>,
}

impl EventFilter {
    pub fn matches(&self, ev: &Event) -> bool {
        self.contract.as_ref().is_none_or(|c| *c == ev.contract)
            && self.topic.as_ref().is_none_or(|t| *t == ev.topic)
            && self.from_height.is_none_or(|h| ev.block_height >= h)
            && self.to_height.is_none_or(|h| ev.block_height <= h)
    }

    pub fn topic(topic: &str) -> Self {
        Self {
            topic: Some(topic.to_owned()),
            ..Default::default()
        }
    }
}
