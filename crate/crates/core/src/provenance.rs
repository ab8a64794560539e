//! The chaincode: the provenance record model, record validation, and
//! the built-in queries (get, key history, lineage, item verification).
//!
//! Everything here is a pure function of committed state, so identical
//! inputs produce identical answers on every replica.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::codec::{self, CodecError, Reader};
use crate::ledger::{HistoryEntry, LedgerState, Version};
use crate::{sha256, Hash};

/// Default cap on the free-form `custom` field, in bytes.
pub const DEFAULT_CUSTOM_LIMIT: usize = 4096;

/// Lineage responses stop growing at this many nodes and set the
/// `truncated` flag instead.
pub const LINEAGE_NODE_CAP: usize = 10_000;

/// Reference to one committed record version.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordRef {
    pub key: String,
    pub version: Version,
}

impl fmt::Display for RecordRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}:{}", self.key, self.version.block, self.version.tx_index)
    }
}

/// One versioned provenance entry: what was stored, where it lives, who
/// stored it, and which records it was derived from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceRecord {
    /// Identifier of the data item this record describes.
    pub key: String,
    /// SHA-256 of the data item's content.
    pub checksum: Hash,
    /// URI naming where the data lives; empty for metadata-only records.
    pub data_locator: String,
    /// Certificate id of whoever stored the item.
    pub creator_id: String,
    /// Records used to create this item, in submission order.
    pub parents: Vec<RecordRef>,
    /// Free-form domain metadata.
    pub custom: Vec<u8>,
    /// Milliseconds since Unix epoch, set by the record's creator.
    pub timestamp_ms: u64,
}

impl ProvenanceRecord {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        codec::put_str(out, &self.key);
        codec::put_array(out, &self.checksum);
        codec::put_str(out, &self.data_locator);
        codec::put_str(out, &self.creator_id);
        codec::put_u32(out, self.parents.len() as u32);
        for p in &self.parents {
            codec::put_str(out, &p.key);
            codec::put_u64(out, p.version.block);
            codec::put_u32(out, p.version.tx_index);
        }
        codec::put_bytes(out, &self.custom);
        codec::put_u64(out, self.timestamp_ms);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<ProvenanceRecord, CodecError> {
        let key = r.str()?;
        let checksum = r.array::<32>()?;
        let data_locator = r.str()?;
        let creator_id = r.str()?;
        let parent_count = r.u32()?;
        let mut parents = Vec::new();
        for _ in 0..parent_count {
            let key = r.str()?;
            let block = r.u64()?;
            let tx_index = r.u32()?;
            parents.push(RecordRef {
                key,
                version: Version { block, tx_index },
            });
        }
        let custom = r.bytes()?;
        let timestamp_ms = r.u64()?;
        Ok(ProvenanceRecord {
            key,
            checksum,
            data_locator,
            creator_id,
            parents,
            custom,
            timestamp_ms,
        })
    }
}

/// Why a record was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordError {
    EmptyKey,
    UnknownParent(RecordRef),
    OversizeCustom { size: usize, limit: usize },
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordError::EmptyKey => write!(f, "record key must be non-empty"),
            RecordError::UnknownParent(p) => write!(f, "unknown parent {p}"),
            RecordError::OversizeCustom { size, limit } => {
                write!(f, "custom field is {size} bytes, limit {limit}")
            }
        }
    }
}

impl core::error::Error for RecordError {}

impl RecordError {
    /// Stable identifier of the failed validation rule.
    pub fn code(&self) -> &'static str {
        match self {
            RecordError::EmptyKey => "empty-key",
            RecordError::UnknownParent(_) => "unknown-parent",
            RecordError::OversizeCustom { .. } => "oversize-custom",
        }
    }
}

/// Configured validation limits.
#[derive(Debug, Clone, Copy)]
pub struct RecordLimits {
    pub custom_limit: usize,
}

impl Default for RecordLimits {
    fn default() -> Self {
        RecordLimits {
            custom_limit: DEFAULT_CUSTOM_LIMIT,
        }
    }
}

/// Something that can answer whether a record version exists and was
/// applied. Implemented by the committed [`HistoryIndex`] and by the
/// orderer's projection of committed-plus-pending state.
///
/// [`HistoryIndex`]: crate::ledger::HistoryIndex
pub trait HistoryView {
    fn contains_applied(&self, key: &str, version: Version) -> bool;
}

/// Accepts a record iff its key is non-empty, every parent reference
/// resolves to an applied record version, and the custom field is within
/// the configured limit.
pub fn validate_record(
    view: &impl HistoryView,
    record: &ProvenanceRecord,
    limits: &RecordLimits,
) -> Result<(), RecordError> {
    if record.key.is_empty() {
        return Err(RecordError::EmptyKey);
    }
    if record.custom.len() > limits.custom_limit {
        return Err(RecordError::OversizeCustom {
            size: record.custom.len(),
            limit: limits.custom_limit,
        });
    }
    for p in &record.parents {
        if !view.contains_applied(&p.key, p.version) {
            return Err(RecordError::UnknownParent(p.clone()));
        }
    }
    Ok(())
}

/// Latest committed record for `key`, or `None` if the key was never
/// (successfully) posted.
pub fn exec_get<'a>(state: &'a LedgerState, key: &str) -> Option<(&'a ProvenanceRecord, Version)> {
    state.world().get(key).map(|e| (&e.record, e.version))
}

/// All committed versions of `key` in commit order, or `None` if the key
/// was never posted.
pub fn exec_get_history<'a>(state: &'a LedgerState, key: &str) -> Option<&'a [HistoryEntry]> {
    state.history().key_history(key)
}

/// A node of a lineage graph: one record version with its full record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineageNode {
    pub id: RecordRef,
    pub record: ProvenanceRecord,
}

/// A directed derivation edge: `child` was created using `parent`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct LineageEdge {
    pub child: RecordRef,
    pub parent: RecordRef,
}

/// Breadth-first closure over parent edges, in deterministic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineageGraph {
    /// Reached record versions, ascending by (key, version).
    pub nodes: Vec<LineageNode>,
    /// Traversed edges, ascending by (child, parent).
    pub edges: Vec<LineageEdge>,
    /// True iff the walk stopped at [`LINEAGE_NODE_CAP`].
    pub truncated: bool,
}

/// Walks parent references breadth-first from `(key, version)` (latest
/// committed version when `version` is `None`), truncating at
/// `max_depth` edges from the start when given. Returns `None` if the
/// start version does not exist or was a no-op entry.
///
/// Parents commit strictly before children, so the result is always a
/// DAG. Edges are included only when traversed: with a depth cutoff,
/// edges between two frontier nodes are not reported.
pub fn exec_get_lineage(
    state: &LedgerState,
    key: &str,
    version: Option<Version>,
    max_depth: Option<u32>,
) -> Option<LineageGraph> {
    let start_version = match version {
        Some(v) => v,
        None => state.world().get(key)?.version,
    };
    let start = state.history().applied_entry(key, start_version)?;

    let mut nodes: BTreeMap<RecordRef, ProvenanceRecord> = BTreeMap::new();
    let mut edges: BTreeSet<LineageEdge> = BTreeSet::new();
    let mut queue: VecDeque<(RecordRef, u32)> = VecDeque::new();
    let mut truncated = false;

    let start_id = RecordRef {
        key: String::from(key),
        version: start_version,
    };
    nodes.insert(start_id.clone(), start.record.clone());
    queue.push_back((start_id, 0));

    while let Some((id, depth)) = queue.pop_front() {
        if max_depth.is_some_and(|d| depth >= d) {
            continue;
        }
        // The record was cloned into `nodes` when the node was queued.
        let parents = nodes.get(&id).map(|r| r.parents.clone()).unwrap_or_default();
        for parent in parents {
            let Some(entry) = state.history().applied_entry(&parent.key, parent.version) else {
                // Dangling parent: impossible for records admitted through
                // validation; skip rather than fabricate a node.
                continue;
            };
            if !nodes.contains_key(&parent) {
                if nodes.len() >= LINEAGE_NODE_CAP {
                    truncated = true;
                    continue;
                }
                nodes.insert(parent.clone(), entry.record.clone());
                queue.push_back((parent.clone(), depth + 1));
            }
            edges.insert(LineageEdge {
                child: id.clone(),
                parent,
            });
        }
    }

    Some(LineageGraph {
        nodes: nodes
            .into_iter()
            .map(|(id, record)| LineageNode { id, record })
            .collect(),
        edges: edges.into_iter().collect(),
        truncated,
    })
}

/// True iff `content` hashes to the record's checksum.
pub fn verify_item(record: &ProvenanceRecord, content: &[u8]) -> bool {
    sha256(content) == record.checksum
}
