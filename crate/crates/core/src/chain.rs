//! Append-only simulated ledger. Confirmed transactions are sealed into
//! hash-chained blocks and nothing in the API can edit or remove them.

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use crate::crypto::{digest, verify, Hash32, KeyPair, PublicKey, Signature, TlvWriter};
use crate::Tick;

pub const DEFAULT_CONFIRMATION_DELAY: Tick = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Rejected {
    #[error("submitter signature does not verify")]
    BadSignature,
    #[error("transaction already submitted")]
    Duplicate,
}

/// Transaction content before signing. Its digest is the transaction id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UnsignedTransaction {
    pub from_public_key: PublicKey,
    pub to_public_key: PublicKey,
    pub amount: u64,
    pub asset_type: String,
    pub nonce: [u8; 8],
}

impl UnsignedTransaction {
    pub fn body_bytes(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.from_public_key.0)
            .bytes(2, &self.to_public_key.0)
            .u64(3, self.amount)
            .str(4, &self.asset_type)
            .bytes(5, &self.nonce)
            .finish()
    }

    pub fn tx_id(&self) -> Hash32 {
        digest(&self.body_bytes())
    }

    pub fn sign(self, key: &KeyPair) -> ChainTransaction {
        let submitter_signature = key.sign(&self.body_bytes());
        ChainTransaction { body: self, submitter_signature }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChainTransaction {
    pub body: UnsignedTransaction,
    pub submitter_signature: Signature,
}

impl ChainTransaction {
    pub fn tx_id(&self) -> Hash32 {
        self.body.tx_id()
    }

    pub fn from_public_key(&self) -> PublicKey {
        self.body.from_public_key
    }

    pub fn to_public_key(&self) -> PublicKey {
        self.body.to_public_key
    }

    pub fn amount(&self) -> u64 {
        self.body.amount
    }

    pub fn verify_signature(&self) -> bool {
        verify(&self.body.from_public_key, &self.body.body_bytes(), &self.submitter_signature)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.body.body_bytes())
            .bytes(2, &self.submitter_signature.0)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub tick: Tick,
    pub txs: Vec<ChainTransaction>,
    pub prev_hash: Hash32,
    pub block_hash: Hash32,
}

impl Block {
    pub fn compute_hash(height: u64, tick: Tick, prev_hash: &Hash32, txs: &[ChainTransaction]) -> Hash32 {
        digest(
            &TlvWriter::new()
                .u64(1, height)
                .u64(2, tick)
                .bytes(3, &prev_hash.0)
                .list(4, txs.iter().map(ChainTransaction::to_bytes))
                .finish(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfirmationEvent {
    pub tx_id: Hash32,
    pub tx: ChainTransaction,
    pub height: u64,
    pub tick: Tick,
}

#[derive(Debug, Clone)]
pub struct Ledger {
    blocks: Vec<Block>,
    pending: VecDeque<(Tick, ChainTransaction)>,
    confirmation_delay: Tick,
    seen: BTreeSet<Hash32>,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::new(DEFAULT_CONFIRMATION_DELAY)
    }
}

impl Ledger {
    pub fn new(confirmation_delay: Tick) -> Self {
        Self {
            blocks: Vec::new(),
            pending: VecDeque::new(),
            confirmation_delay,
            seen: BTreeSet::new(),
        }
    }

    pub fn confirmation_delay(&self) -> Tick {
        self.confirmation_delay
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn submit_transaction(&mut self, tx: ChainTransaction, now: Tick) -> Result<Hash32, Rejected> {
        if !tx.verify_signature() {
            return Err(Rejected::BadSignature);
        }
        let id = tx.tx_id();
        if !self.seen.insert(id) {
            return Err(Rejected::Duplicate);
        }
        self.pending.push_back((now, tx));
        Ok(id)
    }

    /// Seals every pending transaction that has waited the confirmation
    /// delay into one block, in submission order. No block is produced when
    /// nothing is due.
    pub fn tick(&mut self, now: Tick) -> Vec<ConfirmationEvent> {
        let mut due = Vec::new();
        while let Some((submitted, _)) = self.pending.front() {
            if submitted + self.confirmation_delay > now {
                break;
            }
            due.push(self.pending.pop_front().expect("front checked").1);
        }
        if due.is_empty() {
            return Vec::new();
        }
        let height = self.blocks.len() as u64;
        let prev_hash = self.blocks.last().map(|b| b.block_hash).unwrap_or_default();
        let block_hash = Block::compute_hash(height, now, &prev_hash, &due);
        let events = due
            .iter()
            .map(|tx| ConfirmationEvent { tx_id: tx.tx_id(), tx: tx.clone(), height, tick: now })
            .collect();
        self.blocks.push(Block { height, tick: now, txs: due, prev_hash, block_hash });
        events
    }

    pub fn verify_chain(&self) -> bool {
        verify_blocks(&self.blocks)
    }

    pub fn find(&self, tx_id: &Hash32) -> Option<(&Block, &ChainTransaction)> {
        self.blocks
            .iter()
            .find_map(|b| b.txs.iter().find(|t| t.tx_id() == *tx_id).map(|t| (b, t)))
    }

    pub fn transactions(&self) -> impl Iterator<Item = (&Block, &ChainTransaction)> {
        self.blocks.iter().flat_map(|b| b.txs.iter().map(move |t| (b, t)))
    }

    /// One `tx_id,from,to,amount,asset,tick` line per confirmed transaction.
    pub fn export_lines(&self) -> Vec<String> {
        self.transactions()
            .map(|(b, t)| {
                format!(
                    "{},{},{},{},{},{}",
                    t.tx_id(),
                    t.from_public_key(),
                    t.to_public_key(),
                    t.amount(),
                    t.body.asset_type,
                    b.tick
                )
            })
            .collect()
    }
}

/// Recomputes every block hash, the links between blocks, and each
/// transaction's signature.
pub fn verify_blocks(blocks: &[Block]) -> bool {
    let mut prev = Hash32::default();
    for (i, block) in blocks.iter().enumerate() {
        if block.height != i as u64
            || block.prev_hash != prev
            || Block::compute_hash(block.height, block.tick, &block.prev_hash, &block.txs) != block.block_hash
            || !block.txs.iter().all(ChainTransaction::verify_signature)
        {
            return false;
        }
        prev = block.block_hash;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::derive_keypair;

    fn tx(from: &KeyPair, to: &KeyPair, amount: u64, nonce: u8) -> ChainTransaction {
        UnsignedTransaction {
            from_public_key: from.public_key(),
            to_public_key: to.public_key(),
            amount,
            asset_type: "SIM".into(),
            nonce: [nonce; 8],
        }
        .sign(from)
    }

    #[test]
    fn confirmation_after_delay() {
        let (a, b) = (derive_keypair(b"a"), derive_keypair(b"b"));
        let mut l = Ledger::new(3);
        let id = l.submit_transaction(tx(&a, &b, 5, 0), 10).unwrap();
        assert!(l.tick(11).is_empty());
        assert!(l.tick(12).is_empty());
        let ev = l.tick(13);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].tx_id, id);
        assert_eq!(l.blocks().len(), 1);
        assert!(l.tick(14).is_empty());
        assert_eq!(l.blocks().len(), 1);
    }

    #[test]
    fn rejects_duplicates_and_forgeries() {
        let (a, b) = (derive_keypair(b"a"), derive_keypair(b"b"));
        let mut l = Ledger::new(1);
        let t = tx(&a, &b, 5, 0);
        l.submit_transaction(t.clone(), 0).unwrap();
        assert_eq!(l.submit_transaction(t.clone(), 0), Err(Rejected::Duplicate));
        l.tick(1);
        assert_eq!(l.submit_transaction(t, 2), Err(Rejected::Duplicate));
        // signed by b while claiming to come from a
        let forged = UnsignedTransaction {
            from_public_key: a.public_key(),
            to_public_key: b.public_key(),
            amount: 9,
            asset_type: "SIM".into(),
            nonce: [1; 8],
        }
        .sign(&b);
        assert_eq!(l.submit_transaction(forged, 2), Err(Rejected::BadSignature));
    }

    #[test]
    fn same_tick_submissions_share_a_block_in_order() {
        let (a, b) = (derive_keypair(b"a"), derive_keypair(b"b"));
        let mut l = Ledger::new(2);
        let ids: Vec<_> = (0..3).map(|i| l.submit_transaction(tx(&a, &b, i, i as u8), 4).unwrap()).collect();
        let ev = l.tick(6);
        assert_eq!(ev.iter().map(|e| e.tx_id).collect::<Vec<_>>(), ids);
        assert_eq!(l.blocks().len(), 1);
    }

    #[test]
    fn replay_yields_identical_hashes() {
        let build = || {
            let (a, b) = (derive_keypair(b"a"), derive_keypair(b"b"));
            let mut l = Ledger::new(1);
            for i in 0..10u8 {
                l.submit_transaction(tx(&a, &b, i as u64, i), i as u64).unwrap();
                l.tick(i as u64 + 1);
            }
            l.blocks().iter().map(|b| b.block_hash).collect::<Vec<_>>()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn verify_chain_detects_mutation() {
        let (a, b) = (derive_keypair(b"a"), derive_keypair(b"b"));
        let mut l = Ledger::new(1);
        assert!(l.verify_chain());
        for i in 0..4u8 {
            l.submit_transaction(tx(&a, &b, 10, i), i as u64).unwrap();
            l.tick(i as u64 + 1);
        }
        assert!(l.verify_chain());
        let mut copy = l.blocks().to_vec();
        copy[1].txs[0].body.amount = 11;
        assert!(!verify_blocks(&copy));
        let mut copy = l.blocks().to_vec();
        copy.remove(2);
        assert!(!verify_blocks(&copy));
        assert_eq!(l.export_lines().len(), 4);
        assert_eq!(l.export_lines()[0].split(',').count(), 6);
    }
}
