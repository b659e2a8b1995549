//! Append-only chain of transaction digests.
//!
//! Transaction payloads live in an off-chain [`ContentStore`] keyed by their
//! digest; blocks carry only the digests. A single writer appends and seals;
//! sealed blocks are immutable and can be read concurrently.

mod export;
mod light;
mod mining;
mod tx;

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub use export::{export_chain, import_chain, ChainManifest, ImportedChain, MANIFEST_FILE, PAYLOAD_DIR};
pub use light::{light_sync, LightHeader, LightView};
pub use mining::{expected_comp_latency, survival_fastest, MinerPool};
pub use tx::{
    Author, DecodeError, Digest, LedgerTx, TradeRecord, TxKind, TxPayload, DIGEST_ALGORITHM,
    ENCODING_VERSION,
};

/// Fixed part of an encoded block: height u64, prev_hash, miner u32,
/// timestamp f64, digest count u32, block_hash.
pub const BLOCK_HEADER_BYTES: u64 = 8 + 32 + 4 + 8 + 4 + 32;
pub const DIGEST_BYTES: u64 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("replay: {author} nonce {nonce} is not above last accepted nonce {last}")]
    Replay { author: Author, nonce: u64, last: u64 },
    #[error("digest mismatch for transaction {0}")]
    DigestMismatch(Digest),
    #[error("no pending transactions to seal")]
    EmptyQueue,
    #[error("block size of {bits} bits cannot hold a header and one digest ({min} bits)")]
    BlockTooSmall { bits: u64, min: u64 },
    #[error("invalid miner pool: {0}")]
    InvalidPool(String),
    #[error("latency must be >= 0, got {0}")]
    NegativeLatency(f64),
    #[error("fork: local tip {local} at height {height} is not on the canonical chain (fork resolution unsupported)")]
    Fork { height: u64, local: Digest },
    #[error("broken chain at height {height}: {reason}")]
    BrokenChain { height: u64, reason: String },
    #[error("payload for {0} missing from the content store")]
    MissingPayload(Digest),
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for LedgerError {
    fn from(e: std::io::Error) -> Self {
        LedgerError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerBlock {
    pub height: u64,
    pub prev_hash: Digest,
    pub tx_digests: Vec<Digest>,
    pub miner_id: u32,
    pub timestamp: f64,
    pub block_hash: Digest,
}

impl LedgerBlock {
    fn new(height: u64, prev_hash: Digest, tx_digests: Vec<Digest>, miner_id: u32, timestamp: f64) -> Self {
        let block_hash = header_hash(height, &prev_hash, miner_id, timestamp, &tx_digests);
        LedgerBlock {
            height,
            prev_hash,
            tx_digests,
            miner_id,
            timestamp,
            block_hash,
        }
    }

    pub fn computed_hash(&self) -> Digest {
        header_hash(self.height, &self.prev_hash, self.miner_id, self.timestamp, &self.tx_digests)
    }

    pub fn encoded_bits(&self) -> u64 {
        8 * (BLOCK_HEADER_BYTES + DIGEST_BYTES * self.tx_digests.len() as u64)
    }
}

pub(crate) fn header_hash(height: u64, prev: &Digest, miner: u32, timestamp: f64, digests: &[Digest]) -> Digest {
    let mut h = Sha256::new();
    h.update(height.to_be_bytes());
    h.update(prev.0);
    h.update(miner.to_be_bytes());
    h.update(timestamp.to_bits().to_be_bytes());
    h.update((digests.len() as u32).to_be_bytes());
    for d in digests {
        h.update(d.0);
    }
    Digest(h.finalize().into())
}

/// How many digests fit into a block of `block_size_bits`.
pub fn block_capacity(block_size_bits: u64) -> Result<usize, LedgerError> {
    let min = 8 * (BLOCK_HEADER_BYTES + DIGEST_BYTES);
    if block_size_bits < min {
        return Err(LedgerError::BlockTooSmall {
            bits: block_size_bits,
            min,
        });
    }
    Ok(((block_size_bits / 8 - BLOCK_HEADER_BYTES) / DIGEST_BYTES) as usize)
}

/// Off-chain payload storage, content-addressed by transaction digest.
#[derive(Debug, Clone, Default)]
pub struct ContentStore {
    items: BTreeMap<Digest, Vec<u8>>,
}

impl ContentStore {
    pub fn get(&self, digest: &Digest) -> Option<&[u8]> {
        self.items.get(digest).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Digest, &[u8])> {
        self.items.iter().map(|(d, b)| (d, b.as_slice()))
    }

    /// Direct mutable access for corruption experiments.
    pub fn get_mut(&mut self, digest: &Digest) -> Option<&mut Vec<u8>> {
        self.items.get_mut(digest)
    }

    fn insert(&mut self, digest: Digest, bytes: Vec<u8>) {
        self.items.insert(digest, bytes);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub digest: Digest,
    /// Zero-based position in the pending queue.
    pub queue_position: usize,
}

/// A stored payload whose bytes no longer hash to the digest on chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corruption {
    pub digest: Digest,
    pub height: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Ledger {
    blocks: Vec<LedgerBlock>,
    pending: VecDeque<Digest>,
    store: ContentStore,
    last_nonce: HashMap<Author, u64>,
    capacity: usize,
    block_size_bits: u64,
}

impl Ledger {
    pub fn new(block_size_bits: u64) -> Result<Self, LedgerError> {
        Ok(Ledger {
            blocks: Vec::new(),
            pending: VecDeque::new(),
            store: ContentStore::default(),
            last_nonce: HashMap::new(),
            capacity: block_capacity(block_size_bits)?,
            block_size_bits,
        })
    }

    pub fn blocks(&self) -> &[LedgerBlock] {
        &self.blocks
    }

    pub fn tip(&self) -> Option<&LedgerBlock> {
        self.blocks.last()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ContentStore {
        &mut self.store
    }

    pub fn block_size_bits(&self) -> u64 {
        self.block_size_bits
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Next acceptable nonce for `author`.
    pub fn next_nonce(&self, author: Author) -> u64 {
        self.last_nonce.get(&author).map_or(0, |n| n + 1)
    }

    /// Persists the payload off-chain and queues its digest for sealing.
    pub fn append_tx(&mut self, tx: &LedgerTx) -> Result<Ack, LedgerError> {
        if let Some(&last) = self.last_nonce.get(&tx.author) {
            if tx.nonce <= last {
                return Err(LedgerError::Replay {
                    author: tx.author,
                    nonce: tx.nonce,
                    last,
                });
            }
        }
        let bytes = tx.encode();
        if Digest::of(&bytes) != tx.digest {
            return Err(LedgerError::DigestMismatch(tx.digest));
        }
        self.last_nonce.insert(tx.author, tx.nonce);
        self.store.insert(tx.digest, bytes);
        self.pending.push_back(tx.digest);
        Ok(Ack {
            digest: tx.digest,
            queue_position: self.pending.len() - 1,
        })
    }

    /// Builds and appends a transaction authored by `author` with its next nonce.
    pub fn submit(&mut self, author: Author, payload: TxPayload) -> Result<LedgerTx, LedgerError> {
        let tx = LedgerTx::new(author, self.next_nonce(author), payload);
        self.append_tx(&tx)?;
        Ok(tx)
    }

    pub fn fetch(&self, digest: &Digest) -> Option<&[u8]> {
        self.store.get(digest)
    }

    /// Drains up to one block's worth of pending digests into a new block
    /// sealed by the winner of a miner race started at `now`.
    pub fn seal_block<R: Rng + ?Sized>(
        &mut self,
        pool: &MinerPool,
        rng: &mut R,
        now: f64,
    ) -> Result<(&LedgerBlock, f64), LedgerError> {
        if self.pending.is_empty() {
            return Err(LedgerError::EmptyQueue);
        }
        let (miner, latency) = pool.race(rng);
        let take = self.pending.len().min(self.capacity);
        let digests: Vec<Digest> = self.pending.drain(..take).collect();
        let (height, prev) = match self.blocks.last() {
            Some(b) => (b.height + 1, b.block_hash),
            None => (0, Digest::ZERO),
        };
        self.blocks.push(LedgerBlock::new(height, prev, digests, miner, now + latency));
        Ok((self.blocks.last().expect("just pushed"), latency))
    }

    /// Checks hash linkage, block hashes, block sizes, and that every
    /// referenced payload is present and hashes to its digest.
    pub fn verify_chain(&self) -> Result<(), LedgerError> {
        verify_blocks(&self.blocks, self.block_size_bits)?;
        for b in &self.blocks {
            for d in &b.tx_digests {
                let bytes = self.store.get(d).ok_or(LedgerError::MissingPayload(*d))?;
                if Digest::of(bytes) != *d {
                    return Err(LedgerError::DigestMismatch(*d));
                }
            }
        }
        Ok(())
    }

    /// Every stored payload that fails digest verification, with the height
    /// of the block referencing it (if sealed).
    pub fn audit(&self) -> Vec<Corruption> {
        let mut height_of = HashMap::new();
        for b in &self.blocks {
            for d in &b.tx_digests {
                height_of.insert(*d, b.height);
            }
        }
        self.store
            .iter()
            .filter(|(d, bytes)| Digest::of(bytes) != **d)
            .map(|(d, _)| Corruption {
                digest: *d,
                height: height_of.get(d).copied(),
            })
            .collect()
    }

    /// Decoded transactions in chain order (sealed blocks only).
    pub fn transactions(&self) -> Result<Vec<LedgerTx>, LedgerError> {
        let mut out = Vec::new();
        for b in &self.blocks {
            for d in &b.tx_digests {
                let bytes = self.store.get(d).ok_or(LedgerError::MissingPayload(*d))?;
                let tx = LedgerTx::decode(bytes)?;
                if tx.digest != *d {
                    return Err(LedgerError::DigestMismatch(*d));
                }
                out.push(tx);
            }
        }
        Ok(out)
    }
}

pub(crate) fn verify_blocks(blocks: &[LedgerBlock], block_size_bits: u64) -> Result<(), LedgerError> {
    let mut prev = Digest::ZERO;
    for (i, b) in blocks.iter().enumerate() {
        let broken = |reason: &str| LedgerError::BrokenChain {
            height: b.height,
            reason: reason.to_string(),
        };
        if b.height != i as u64 {
            return Err(broken("height out of sequence"));
        }
        if b.prev_hash != prev {
            return Err(broken("prev_hash does not match parent"));
        }
        if b.computed_hash() != b.block_hash {
            return Err(broken("block_hash does not match header"));
        }
        if b.encoded_bits() > block_size_bits {
            return Err(broken("block exceeds size bound"));
        }
        prev = b.block_hash;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credits::Credits;
    use crate::scenario::streams::{stream_rng, StreamName};
    use crate::VehicleId;
    use std::collections::HashSet;

    fn reset(v: u32) -> TxPayload {
        TxPayload::BalanceReset {
            vehicle: VehicleId(v),
            t: 0.0,
            balance: Credits::from_f64(100.0),
        }
    }

    fn pool() -> MinerPool {
        MinerPool::with_rate(4, 0.5).unwrap()
    }

    #[test]
    fn fetch_returns_identical_bytes() {
        let mut l = Ledger::new(1_000_000).unwrap();
        let tx = LedgerTx::new(Author::Vehicle(VehicleId(2)), 0, reset(2));
        let ack = l.append_tx(&tx).unwrap();
        assert_eq!(ack.digest, tx.digest);
        assert_eq!(ack.queue_position, 0);
        assert_eq!(l.fetch(&tx.digest).unwrap(), tx.encode().as_slice());
    }

    #[test]
    fn replayed_nonce_is_rejected() {
        let mut l = Ledger::new(1_000_000).unwrap();
        let a = Author::Vehicle(VehicleId(1));
        l.append_tx(&LedgerTx::new(a, 3, reset(1))).unwrap();
        let err = l.append_tx(&LedgerTx::new(a, 3, reset(1))).unwrap_err();
        assert!(matches!(err, LedgerError::Replay { nonce: 3, last: 3, .. }));
        assert!(l.append_tx(&LedgerTx::new(a, 2, reset(7))).is_err());
        // other authors keep their own counters
        l.append_tx(&LedgerTx::new(Author::System, 0, reset(1))).unwrap();
    }

    #[test]
    fn tampered_digest_is_rejected() {
        let mut l = Ledger::new(1_000_000).unwrap();
        let mut tx = LedgerTx::new(Author::System, 0, reset(1));
        tx.payload = reset(2);
        assert!(matches!(l.append_tx(&tx), Err(LedgerError::DigestMismatch(_))));
        assert_eq!(l.pending_len(), 0);
    }

    #[test]
    fn thousand_appends_have_distinct_digests() {
        let mut l = Ledger::new(1_000_000).unwrap();
        let mut digests = Vec::new();
        for i in 0..1000u32 {
            digests.push(l.submit(Author::Vehicle(VehicleId(i % 7)), reset(i % 7)).unwrap().digest);
        }
        // exhaustive pairwise comparison
        for i in 0..digests.len() {
            for j in i + 1..digests.len() {
                assert_ne!(digests[i], digests[j]);
            }
        }
        assert_eq!(digests.iter().collect::<HashSet<_>>().len(), 1000);
    }

    #[test]
    fn sealing_links_blocks() {
        let mut l = Ledger::new(1_000_000).unwrap();
        let mut rng = stream_rng(3, StreamName::Mining);
        assert_eq!(l.seal_block(&pool(), &mut rng, 0.0).unwrap_err(), LedgerError::EmptyQueue);
        for h in 0..3 {
            l.submit(Author::System, reset(h)).unwrap();
            let (b, lat) = l.seal_block(&pool(), &mut rng, 10.0 * h as f64).unwrap();
            assert!(lat > 0.0);
            assert_eq!(b.timestamp, 10.0 * h as f64 + lat);
        }
        let b = l.blocks();
        assert_eq!(b[0].prev_hash, Digest::ZERO);
        assert_eq!(b[1].prev_hash, b[0].block_hash);
        assert_eq!(b[2].prev_hash, b[1].block_hash);
        l.verify_chain().unwrap();
    }

    #[test]
    fn capacity_follows_block_size() {
        let min = 8 * (BLOCK_HEADER_BYTES + DIGEST_BYTES);
        assert!(block_capacity(min - 1).is_err());
        assert_eq!(block_capacity(min).unwrap(), 1);
        let mut l = Ledger::new(min + 8 * 32).unwrap();
        assert_eq!(l.capacity(), 2);
        for v in 0..5 {
            l.submit(Author::System, reset(v)).unwrap();
        }
        let mut rng = stream_rng(1, StreamName::Mining);
        let (b, _) = l.seal_block(&pool(), &mut rng, 0.0).unwrap();
        assert_eq!(b.tx_digests.len(), 2);
        assert!(b.encoded_bits() <= min + 8 * 32);
        assert_eq!(l.pending_len(), 3);
    }

    #[test]
    fn corrupting_a_payload_flags_exactly_that_tx() {
        let mut l = Ledger::new(1_000_000).unwrap();
        let mut rng = stream_rng(5, StreamName::Mining);
        let mut all = Vec::new();
        for h in 0..3 {
            for v in 0..4 {
                all.push(l.submit(Author::Vehicle(VehicleId(v)), reset(v + h)).unwrap().digest);
            }
            l.seal_block(&pool(), &mut rng, h as f64).unwrap();
        }
        assert!(l.audit().is_empty());
        let victim = all[6];
        l.store_mut().get_mut(&victim).unwrap()[20] ^= 0x01;
        assert_eq!(l.audit(), vec![Corruption { digest: victim, height: Some(1) }]);
        assert_eq!(l.verify_chain(), Err(LedgerError::DigestMismatch(victim)));
    }

    #[test]
    fn same_mining_stream_gives_same_chain() {
        let build = || {
            let mut l = Ledger::new(1_000_000).unwrap();
            let mut rng = stream_rng(9, StreamName::Mining);
            for h in 0..5 {
                l.submit(Author::System, reset(h)).unwrap();
                l.seal_block(&pool(), &mut rng, h as f64).unwrap();
            }
            l.blocks().to_vec()
        };
        assert_eq!(build(), build());
    }
}
