//! Chain export: `chain.json` with every block header and digest list, plus
//! `payloads/<digest-hex>.bin` holding each canonical transaction encoding.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{verify_blocks, Digest, Ledger, LedgerBlock, LedgerError, LedgerTx, DIGEST_ALGORITHM, ENCODING_VERSION};

pub const MANIFEST_FILE: &str = "chain.json";
pub const PAYLOAD_DIR: &str = "payloads";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainManifest {
    pub digest_algorithm: String,
    pub encoding_version: u8,
    pub block_size_bits: u64,
    pub blocks: Vec<LedgerBlock>,
}

#[derive(Debug, Clone)]
pub struct ImportedChain {
    pub manifest: ChainManifest,
    /// Transactions in chain order.
    pub transactions: Vec<LedgerTx>,
}

pub fn export_chain(ledger: &Ledger, dir: &Path) -> Result<(), LedgerError> {
    let payload_dir = dir.join(PAYLOAD_DIR);
    fs::create_dir_all(&payload_dir)?;
    let manifest = ChainManifest {
        digest_algorithm: DIGEST_ALGORITHM.to_string(),
        encoding_version: ENCODING_VERSION,
        block_size_bits: ledger.block_size_bits(),
        blocks: ledger.blocks().to_vec(),
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| LedgerError::Io(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    for block in ledger.blocks() {
        for d in &block.tx_digests {
            let bytes = ledger.fetch(d).ok_or(LedgerError::MissingPayload(*d))?;
            fs::write(payload_dir.join(format!("{}.bin", d.to_hex())), bytes)?;
        }
    }
    Ok(())
}

/// Reads an export back, verifying linkage, block hashes and every payload digest.
pub fn import_chain(dir: &Path) -> Result<ImportedChain, LedgerError> {
    let raw = fs::read(dir.join(MANIFEST_FILE))?;
    let manifest: ChainManifest = serde_json::from_slice(&raw).map_err(|e| LedgerError::Io(e.to_string()))?;
    if manifest.digest_algorithm != DIGEST_ALGORITHM {
        return Err(LedgerError::Io(format!(
            "unsupported digest algorithm {:?}",
            manifest.digest_algorithm
        )));
    }
    verify_blocks(&manifest.blocks, manifest.block_size_bits)?;
    let mut transactions = Vec::new();
    for block in &manifest.blocks {
        for d in &block.tx_digests {
            let path = dir.join(PAYLOAD_DIR).join(format!("{}.bin", d.to_hex()));
            let bytes = fs::read(&path).map_err(|_| LedgerError::MissingPayload(*d))?;
            if Digest::of(&bytes) != *d {
                return Err(LedgerError::DigestMismatch(*d));
            }
            transactions.push(LedgerTx::decode(&bytes)?);
        }
    }
    Ok(ImportedChain {
        manifest,
        transactions,
    })
}
