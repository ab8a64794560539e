//! Plumbing shared by the node services: startup errors, identity
//! loading, wall-clock timestamps, and the read-only query dispatcher
//! both the orderer and peers answer from their ledger replica.

use std::time::{SystemTime, UNIX_EPOCH};

use provledger_core::{
    exec_get, exec_get_history, exec_get_lineage, state_digest, KeyPair, Role, Version,
};

use crate::config::ConfigError;
use crate::keys::KeyFileError;
use crate::model::{BlockJson, HistoryEntryJson, LineageJson, RecordJson, VersionJson};
use crate::store::{LedgerStore, StoreError};
use crate::wire::{Message, NumberedBlock, QueryBody, QueryResultBody};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Keys(#[from] KeyFileError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Blob(#[from] crate::blob::BlobError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("identity {id} has role {actual}, this service needs {expected}")]
    BadRole {
        id: String,
        actual: Role,
        expected: Role,
    },
}

impl ServiceError {
    pub fn code(&self) -> &str {
        match self {
            ServiceError::Config(_) | ServiceError::Keys(_) => "bad-config",
            ServiceError::Store(e) => e.code(),
            ServiceError::Blob(e) => e.code(),
            ServiceError::Io { .. } => "io-error",
            ServiceError::BadRole { .. } => "bad-config",
        }
    }
}

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("system clock before 1970")
        .as_millis() as u64
}

/// Insists a loaded identity carries the role a service needs.
pub fn require_role(keypair: &KeyPair, expected: Role) -> Result<(), ServiceError> {
    let actual = keypair.certificate().role;
    if actual != expected {
        return Err(ServiceError::BadRole {
            id: keypair.certificate().id.clone(),
            actual,
            expected,
        });
    }
    Ok(())
}

/// Most blocks served per sync response; callers loop until caught up.
pub const SYNC_CHUNK: usize = 256;

/// Serves a block-range request from a replica: blocks `from..=to`
/// (capped at the tip and at [`SYNC_CHUNK`]), plus the current height.
pub fn serve_sync(store: &LedgerStore, from: u64, to: u64) -> Message {
    let tip = store.height();
    let mut blocks = Vec::new();
    if tip > 0 {
        let end = to.min(tip - 1);
        let mut number = from;
        while number <= end && blocks.len() < SYNC_CHUNK {
            match store.get_block_bytes(number) {
                Ok(bytes) => blocks.push(NumberedBlock {
                    number,
                    block_b64: crate::model::bytes_to_b64(&bytes),
                }),
                Err(e) => return Message::error(e.code(), e.to_string()),
            }
            number += 1;
        }
    }
    Message::SyncBlocks { tip, blocks }
}

/// Answers a read-only query against a replica. Every reply carries the
/// replica's current height so callers can judge freshness.
pub fn answer_query(store: &LedgerStore, query: QueryBody) -> Message {
    let height = store.height();
    let state = store.state();
    let result = match query {
        QueryBody::Get { key } => match exec_get(state, &key) {
            Some((record, version)) => QueryResultBody::Get {
                record: RecordJson::from(record),
                version: VersionJson::from(version),
            },
            None => return not_found(&key),
        },
        QueryBody::History { key } => match exec_get_history(state, &key) {
            Some(entries) => QueryResultBody::History {
                key: key.clone(),
                entries: entries.iter().map(HistoryEntryJson::from).collect(),
            },
            None => return not_found(&key),
        },
        QueryBody::Lineage {
            key,
            version,
            max_depth,
        } => {
            let version = version.map(Version::from);
            match exec_get_lineage(state, &key, version, max_depth) {
                Some(graph) => QueryResultBody::Lineage(LineageJson::from(&graph)),
                None => return not_found(&key),
            }
        }
        QueryBody::GetBlock { number } => match store.get_block_bytes(number) {
            Ok(bytes) => {
                let block = match store.get_block(number) {
                    Ok(block) => block,
                    Err(e) => return Message::error(e.code(), e.to_string()),
                };
                QueryResultBody::Block {
                    number,
                    block_b64: crate::model::bytes_to_b64(&bytes),
                    decoded: BlockJson::from(&block),
                }
            }
            Err(e) => return Message::error(e.code(), e.to_string()),
        },
        QueryBody::Height => QueryResultBody::Height {},
        QueryBody::StateDigest => QueryResultBody::StateDigest {
            digest: hex::encode(state_digest(state.world())),
        },
    };
    Message::QueryResult { height, result }
}

fn not_found(key: &str) -> Message {
    Message::error("not-found", format!("no committed record under {key:?}"))
}
