//! Light-client view: block headers and digest lists, never payloads.

use serde::{Deserialize, Serialize};

use super::{header_hash, Digest, Ledger, LedgerBlock, LedgerError, BLOCK_HEADER_BYTES, DIGEST_BYTES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightHeader {
    pub height: u64,
    pub prev_hash: Digest,
    pub miner_id: u32,
    pub timestamp: f64,
    pub block_hash: Digest,
    pub tx_digests: Vec<Digest>,
}

impl From<&LedgerBlock> for LightHeader {
    fn from(b: &LedgerBlock) -> Self {
        LightHeader {
            height: b.height,
            prev_hash: b.prev_hash,
            miner_id: b.miner_id,
            timestamp: b.timestamp,
            block_hash: b.block_hash,
            tx_digests: b.tx_digests.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LightView {
    headers: Vec<LightHeader>,
}

impl LightView {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn headers(&self) -> &[LightHeader] {
        &self.headers
    }

    pub fn tip(&self) -> Option<&LightHeader> {
        self.headers.last()
    }

    /// True if `digest` is listed in a block whose header hash checks out.
    pub fn verify_inclusion(&self, digest: &Digest) -> bool {
        self.headers.iter().any(|h| {
            h.tx_digests.contains(digest)
                && header_hash(h.height, &h.prev_hash, h.miner_id, h.timestamp, &h.tx_digests) == h.block_hash
        })
    }

    /// Bytes held by the view.
    pub fn storage_bytes(&self) -> u64 {
        self.headers
            .iter()
            .map(|h| BLOCK_HEADER_BYTES + DIGEST_BYTES * h.tx_digests.len() as u64)
            .sum()
    }
}

/// Appends the full chain's blocks beyond the client's tip. Returns the
/// number of headers added.
pub fn light_sync(client: &mut LightView, full: &Ledger) -> Result<usize, LedgerError> {
    let blocks = full.blocks();
    if let Some(tip) = client.tip() {
        let on_chain = blocks
            .get(tip.height as usize)
            .is_some_and(|b| b.block_hash == tip.block_hash);
        if !on_chain {
            return Err(LedgerError::Fork {
                height: tip.height,
                local: tip.block_hash,
            });
        }
    }
    let start = client.headers.len();
    for b in &blocks[start..] {
        if b.computed_hash() != b.block_hash {
            return Err(LedgerError::BrokenChain {
                height: b.height,
                reason: "block_hash does not match header".into(),
            });
        }
        client.headers.push(LightHeader::from(b));
    }
    Ok(blocks.len() - start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credits::Credits;
    use crate::ledger::{Author, MinerPool, TradeRecord, TxPayload};
    use crate::scenario::streams::{stream_rng, StreamName};
    use crate::VehicleId;

    fn chain_of(blocks: usize, per_block: usize, big: bool) -> Ledger {
        let mut l = Ledger::new(10_000_000).unwrap();
        let pool = MinerPool::with_rate(2, 1.0).unwrap();
        let mut rng = stream_rng(11, StreamName::Mining);
        for h in 0..blocks {
            for k in 0..per_block {
                let v = VehicleId(k as u32);
                let payload = if big {
                    TxPayload::EmissionRecord {
                        vehicle: v,
                        t: h as f64,
                        period: 0,
                        timestamp: h as f64,
                        epsilon: 150.0,
                        distance_km: 3.0,
                        grams: 450.0,
                        all_idle: false,
                    }
                } else {
                    TxPayload::Settlement(TradeRecord {
                        order_id: (h * per_block + k) as u64,
                        buyer: v,
                        seller: VehicleId(99),
                        amount: Credits::from_f64(1.0),
                        t: h as f64,
                    })
                };
                l.submit(Author::Vehicle(v), payload).unwrap();
            }
            l.seal_block(&pool, &mut rng, h as f64).unwrap();
        }
        l
    }

    #[test]
    fn inclusion_and_non_inclusion() {
        let full = chain_of(4, 3, false);
        let mut view = LightView::new();
        assert_eq!(light_sync(&mut view, &full).unwrap(), 4);
        let known = full.blocks()[2].tx_digests[1];
        assert!(view.verify_inclusion(&known));
        assert!(!view.verify_inclusion(&Digest::of(b"never appended")));
        // incremental sync picks up only new blocks
        assert_eq!(light_sync(&mut view, &full).unwrap(), 0);
    }

    #[test]
    fn storage_is_linear_in_blocks_and_blind_to_payload_size() {
        let mut sizes = Vec::new();
        for big in [false, true] {
            let full = chain_of(100, 5, big);
            let mut view = LightView::new();
            light_sync(&mut view, &full).unwrap();
            sizes.push(view.storage_bytes());
            let payload_bytes: usize = full.store().iter().map(|(_, b)| b.len()).sum();
            assert!(payload_bytes > 0);
        }
        assert_eq!(sizes[0], sizes[1]);
        // measured per-block cost is constant
        let per_block = BLOCK_HEADER_BYTES + 5 * DIGEST_BYTES;
        assert_eq!(sizes[0], 100 * per_block);
        let full = chain_of(50, 5, true);
        let mut half = LightView::new();
        light_sync(&mut half, &full).unwrap();
        assert_eq!(half.storage_bytes() * 2, sizes[0]);
    }

    #[test]
    fn diverged_tip_is_reported_as_fork() {
        let a = chain_of(3, 2, false);
        let b = chain_of(3, 2, true);
        let mut view = LightView::new();
        light_sync(&mut view, &a).unwrap();
        assert!(matches!(light_sync(&mut view, &b), Err(LedgerError::Fork { height: 2, .. })));
        // a client ahead of the full node is also off-chain
        let short = chain_of(1, 2, false);
        assert!(matches!(light_sync(&mut view, &short), Err(LedgerError::Fork { .. })));
    }
}
