//! Deterministic heart of the provenance ledger: canonical byte
//! encoding, identities and membership, hash-chained blocks with world
//! state, and the provenance record model with its built-in queries.
//!
//! Everything here is pure computation over values — no IO, no clocks,
//! no platform dependencies — so nodes, clients, and tests all share
//! one implementation of the rules that must agree across the network.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod codec;
pub mod identity;
pub mod ledger;
pub mod provenance;

pub use identity::{check_membership, verify, Certificate, KeyPair, MembershipList, Role};
pub use ledger::{
    block_hash, check_block, data_hash_over, state_digest, Block, BlockCheckError, BlockHeader,
    HistoryEntry, HistoryIndex, LedgerState, Operation, StateEntry, Transaction, TxOutcome,
    Version, WorldState,
};
pub use provenance::{
    exec_get, exec_get_history, exec_get_lineage, validate_record, verify_item, HistoryView,
    LineageEdge, LineageGraph, LineageNode, ProvenanceRecord, RecordError, RecordLimits,
    RecordRef, DEFAULT_CUSTOM_LIMIT, LINEAGE_NODE_CAP,
};

use sha2::{Digest, Sha256};

/// 32-byte SHA-256 digest, the only hash used anywhere in the system.
pub type Hash = [u8; 32];

/// The all-zero digest, used as the genesis block's predecessor hash.
pub const ZERO_HASH: Hash = [0u8; 32];

/// SHA-256 of `data`.
pub fn sha256(data: &[u8]) -> Hash {
    let mut hasher = Sha256::new();
    hasher.update(data);
    hasher.finalize().into()
}
