//! JSON representations of the domain types for wire messages, CLI
//! output, and the block-dump tool, with conversions to and from the
//! canonical in-memory forms.
//!
//! JSON is strictly an exterior format: every hash and signature is
//! computed over canonical bytes, never over anything here.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use provledger_core::{
    block_hash, Block, HistoryEntry, LineageGraph, Operation, ProvenanceRecord, RecordRef,
    Transaction, Version,
};
use serde::{Deserialize, Serialize};

/// A field that failed JSON-to-domain conversion.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("checksum must be 64 hex characters")]
    MalformedChecksum,
    #[error("{field} is not valid hex")]
    BadHex { field: &'static str },
    #[error("{field} is not valid base64")]
    BadBase64 { field: &'static str },
    #[error("unknown operation {0:?}")]
    UnknownOperation(String),
    #[error("{field} has the wrong length")]
    BadLength { field: &'static str },
}

impl ModelError {
    /// Stable wire identifier for the failed conversion.
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::MalformedChecksum => "malformed-checksum",
            _ => "malformed-query",
        }
    }
}

pub fn to_hex(bytes: &[u8]) -> String {
    hex::encode(bytes)
}

fn hash_from_hex(text: &str, field: &'static str) -> Result<[u8; 32], ModelError> {
    let raw = hex::decode(text).map_err(|_| ModelError::BadHex { field })?;
    raw.try_into().map_err(|_| ModelError::BadLength { field })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionJson {
    pub block: u64,
    pub tx_index: u32,
}

impl From<Version> for VersionJson {
    fn from(v: Version) -> Self {
        VersionJson {
            block: v.block,
            tx_index: v.tx_index,
        }
    }
}

impl From<VersionJson> for Version {
    fn from(v: VersionJson) -> Self {
        Version {
            block: v.block,
            tx_index: v.tx_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentJson {
    pub key: String,
    pub block: u64,
    pub tx_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordJson {
    pub key: String,
    /// 64 lowercase hex characters.
    pub checksum: String,
    pub data_locator: String,
    pub creator_id: String,
    pub parents: Vec<ParentJson>,
    /// Base64 of the raw custom bytes.
    pub custom: String,
    /// Milliseconds since Unix epoch.
    pub timestamp: u64,
}

impl From<&ProvenanceRecord> for RecordJson {
    fn from(r: &ProvenanceRecord) -> Self {
        RecordJson {
            key: r.key.clone(),
            checksum: to_hex(&r.checksum),
            data_locator: r.data_locator.clone(),
            creator_id: r.creator_id.clone(),
            parents: r
                .parents
                .iter()
                .map(|p| ParentJson {
                    key: p.key.clone(),
                    block: p.version.block,
                    tx_index: p.version.tx_index,
                })
                .collect(),
            custom: BASE64.encode(&r.custom),
            timestamp: r.timestamp_ms,
        }
    }
}

impl TryFrom<&RecordJson> for ProvenanceRecord {
    type Error = ModelError;

    fn try_from(r: &RecordJson) -> Result<Self, ModelError> {
        let checksum = hex::decode(&r.checksum)
            .ok()
            .and_then(|raw| <[u8; 32]>::try_from(raw).ok())
            .ok_or(ModelError::MalformedChecksum)?;
        let custom = BASE64
            .decode(&r.custom)
            .map_err(|_| ModelError::BadBase64 { field: "custom" })?;
        Ok(ProvenanceRecord {
            key: r.key.clone(),
            checksum,
            data_locator: r.data_locator.clone(),
            creator_id: r.creator_id.clone(),
            parents: r
                .parents
                .iter()
                .map(|p| RecordRef {
                    key: p.key.clone(),
                    version: Version {
                        block: p.block,
                        tx_index: p.tx_index,
                    },
                })
                .collect(),
            custom,
            timestamp_ms: r.timestamp,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionJson {
    /// 64 hex characters.
    pub tx_id: String,
    pub client_id: String,
    /// Currently always `"post"`.
    pub operation: String,
    pub key: String,
    pub record: RecordJson,
    /// Base64 signature bytes.
    pub signature: String,
}

impl From<&Transaction> for TransactionJson {
    fn from(tx: &Transaction) -> Self {
        TransactionJson {
            tx_id: to_hex(&tx.tx_id),
            client_id: tx.client_id.clone(),
            operation: match tx.operation {
                Operation::Post => "post".into(),
            },
            key: tx.key.clone(),
            record: (&tx.record).into(),
            signature: BASE64.encode(&tx.signature),
        }
    }
}

impl TryFrom<&TransactionJson> for Transaction {
    type Error = ModelError;

    fn try_from(tx: &TransactionJson) -> Result<Self, ModelError> {
        let operation = match tx.operation.as_str() {
            "post" => Operation::Post,
            other => return Err(ModelError::UnknownOperation(other.into())),
        };
        Ok(Transaction {
            tx_id: hash_from_hex(&tx.tx_id, "tx_id")?,
            client_id: tx.client_id.clone(),
            operation,
            key: tx.key.clone(),
            record: (&tx.record).try_into()?,
            signature: BASE64
                .decode(&tx.signature)
                .map_err(|_| ModelError::BadBase64 { field: "signature" })?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntryJson {
    pub version: VersionJson,
    pub record: RecordJson,
    pub tx_id: String,
    pub block_timestamp_ms: u64,
    pub applied: bool,
}

impl From<&HistoryEntry> for HistoryEntryJson {
    fn from(e: &HistoryEntry) -> Self {
        HistoryEntryJson {
            version: e.version.into(),
            record: (&e.record).into(),
            tx_id: to_hex(&e.tx_id),
            block_timestamp_ms: e.block_timestamp_ms,
            applied: e.applied,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageNodeJson {
    pub key: String,
    pub version: VersionJson,
    pub record: RecordJson,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageRefJson {
    pub key: String,
    pub version: VersionJson,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEdgeJson {
    pub child: LineageRefJson,
    pub parent: LineageRefJson,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageJson {
    pub nodes: Vec<LineageNodeJson>,
    pub edges: Vec<LineageEdgeJson>,
    pub truncated: bool,
}

impl From<&LineageGraph> for LineageJson {
    fn from(g: &LineageGraph) -> Self {
        LineageJson {
            nodes: g
                .nodes
                .iter()
                .map(|n| LineageNodeJson {
                    key: n.id.key.clone(),
                    version: n.id.version.into(),
                    record: (&n.record).into(),
                })
                .collect(),
            edges: g
                .edges
                .iter()
                .map(|e| LineageEdgeJson {
                    child: LineageRefJson {
                        key: e.child.key.clone(),
                        version: e.child.version.into(),
                    },
                    parent: LineageRefJson {
                        key: e.parent.key.clone(),
                        version: e.parent.version.into(),
                    },
                })
                .collect(),
            truncated: g.truncated,
        }
    }
}

/// Human-readable block form for the debug dump command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockJson {
    pub number: u64,
    pub prev_hash: String,
    pub data_hash: String,
    pub timestamp_ms: u64,
    pub block_hash: String,
    pub orderer_signature: String,
    pub transactions: Vec<TransactionJson>,
}

impl From<&Block> for BlockJson {
    fn from(b: &Block) -> Self {
        BlockJson {
            number: b.header.number,
            prev_hash: to_hex(&b.header.prev_hash),
            data_hash: to_hex(&b.header.data_hash),
            timestamp_ms: b.header.timestamp_ms,
            block_hash: to_hex(&block_hash(&b.header)),
            orderer_signature: BASE64.encode(&b.orderer_signature),
            transactions: b.transactions.iter().map(TransactionJson::from).collect(),
        }
    }
}

/// Raw bytes as base64 for lossless transfer inside JSON.
pub fn bytes_to_b64(bytes: &[u8]) -> String {
    BASE64.encode(bytes)
}

pub fn bytes_from_b64(text: &str, field: &'static str) -> Result<Vec<u8>, ModelError> {
    BASE64.decode(text).map_err(|_| ModelError::BadBase64 { field })
}

/// Canonical block bytes as base64 for lossless transfer inside JSON.
pub fn block_to_b64(block: &Block) -> String {
    BASE64.encode(block.encode())
}

pub fn block_from_b64(text: &str) -> Result<Block, String> {
    let raw = BASE64
        .decode(text)
        .map_err(|_| "block bytes are not valid base64".to_string())?;
    Block::decode(&raw).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use provledger_core::{sha256, KeyPair, Role};

    fn sample_record() -> ProvenanceRecord {
        ProvenanceRecord {
            key: "sensor/1".into(),
            checksum: sha256(b"content"),
            data_locator: "store://local/aabb".into(),
            creator_id: "c1".into(),
            parents: vec![RecordRef {
                key: "raw/1".into(),
                version: Version { block: 3, tx_index: 1 },
            }],
            custom: vec![1, 2, 3],
            timestamp_ms: 1_600_000_000_000,
        }
    }

    #[test]
    fn record_json_round_trips() {
        let record = sample_record();
        let json = RecordJson::from(&record);
        assert_eq!(json.checksum.len(), 64);
        assert_eq!(json.parents[0].block, 3);
        let back = ProvenanceRecord::try_from(&json).unwrap();
        assert_eq!(back, record);
    }

    #[test]
    fn bad_checksum_hex_is_malformed_checksum() {
        let mut json = RecordJson::from(&sample_record());
        json.checksum = "zz".into();
        let err = ProvenanceRecord::try_from(&json).unwrap_err();
        assert_eq!(err.code(), "malformed-checksum");
        // Valid hex of the wrong length is equally malformed.
        json.checksum = "aabb".into();
        let err = ProvenanceRecord::try_from(&json).unwrap_err();
        assert_eq!(err.code(), "malformed-checksum");
    }

    #[test]
    fn transaction_json_round_trips() {
        let client = KeyPair::from_seed("c1", Role::Client, "org1", &[5; 32]).unwrap();
        let tx = Transaction::build(&client, sample_record());
        let json = TransactionJson::from(&tx);
        assert_eq!(json.operation, "post");
        let back = Transaction::try_from(&json).unwrap();
        assert_eq!(back, tx);
    }

    #[test]
    fn block_b64_round_trips_canonical_bytes() {
        let orderer = KeyPair::from_seed("ord", Role::Orderer, "org1", &[1; 32]).unwrap();
        let client = KeyPair::from_seed("c1", Role::Client, "org1", &[5; 32]).unwrap();
        let genesis = Block::genesis(&orderer, 10);
        let block = Block::build(
            &orderer,
            1,
            genesis.hash(),
            20,
            vec![Transaction::build(&client, sample_record())],
        );
        let back = block_from_b64(&block_to_b64(&block)).unwrap();
        assert_eq!(back, block);
        assert_eq!(back.encode(), block.encode());
    }

    #[test]
    fn block_json_exposes_hashes_as_hex() {
        let orderer = KeyPair::from_seed("ord", Role::Orderer, "org1", &[1; 32]).unwrap();
        let genesis = Block::genesis(&orderer, 10);
        let json = BlockJson::from(&genesis);
        assert_eq!(json.number, 0);
        assert_eq!(json.prev_hash, "0".repeat(64));
        assert_eq!(json.block_hash, to_hex(&genesis.hash()));
        assert!(json.transactions.is_empty());
    }
}
