//! Persistent block storage: one append-only file per block plus a
//! height file, with the world state and history maintained by replay.
//!
//! Layout under the data directory: `blocks/<number>.blk` holds a
//! block's canonical bytes; `blocks/HEIGHT` holds the decimal block
//! count. Writes go to a temp file first and are atomically renamed, so
//! a crash never leaves a half-written block at a committed position.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use provledger_core::{
    check_block, Block, BlockCheckError, Hash, LedgerState, MembershipList, TxOutcome, ZERO_HASH,
};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Check(#[from] BlockCheckError),
    #[error("block {0} does not exist")]
    NotFound(u64),
    #[error("block {number} is malformed: {reason}")]
    Malformed { number: u64, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl StoreError {
    /// Stable identifier of the failure, matching the failed check for
    /// validation errors.
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Check(e) => e.code(),
            StoreError::NotFound(_) => "not-found",
            StoreError::Malformed { .. } => "malformed-block",
            StoreError::Io { .. } => "io-error",
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `bytes` to `path` via a temp file in the same directory and
/// an atomic rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().expect("target paths always have a parent");
    let tmp = dir.join(format!(
        ".tmp-{}-{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    let mut file = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    file.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    file.flush().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn blocks_dir(data_dir: &Path) -> PathBuf {
    data_dir.join("blocks")
}

fn block_path(data_dir: &Path, number: u64) -> PathBuf {
    blocks_dir(data_dir).join(format!("{number}.blk"))
}

fn height_path(data_dir: &Path) -> PathBuf {
    blocks_dir(data_dir).join("HEIGHT")
}

fn read_height(data_dir: &Path) -> Result<u64, StoreError> {
    let path = height_path(data_dir);
    match fs::read_to_string(&path) {
        Ok(text) => text.trim().parse().map_err(|_| StoreError::Malformed {
            number: 0,
            reason: format!("HEIGHT file holds {:?}, expected a decimal count", text.trim()),
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
        Err(e) => Err(io_err(&path, e)),
    }
}

fn read_block_bytes(data_dir: &Path, number: u64) -> Result<Vec<u8>, StoreError> {
    let path = block_path(data_dir, number);
    match fs::read(&path) {
        Ok(bytes) => Ok(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::NotFound(number)),
        Err(e) => Err(io_err(&path, e)),
    }
}

/// A chain replica on disk plus the in-memory state derived from it.
///
/// Single writer: one `LedgerStore` value owns its directory. Callers
/// needing concurrent reads wrap it in a lock.
pub struct LedgerStore {
    data_dir: PathBuf,
    membership: MembershipList,
    height: u64,
    last_hash: Hash,
    state: LedgerState,
}

impl LedgerStore {
    /// Opens (creating if empty) the store and replays every block with
    /// full validation, so a tampered or corrupt replica refuses to load.
    pub fn open(data_dir: &Path, membership: MembershipList) -> Result<LedgerStore, StoreError> {
        fs::create_dir_all(blocks_dir(data_dir)).map_err(|e| io_err(data_dir, e))?;
        let mut store = LedgerStore {
            data_dir: data_dir.to_path_buf(),
            membership,
            height: 0,
            last_hash: ZERO_HASH,
            state: LedgerState::default(),
        };
        let target = read_height(data_dir)?;
        for number in 0..target {
            let bytes = read_block_bytes(data_dir, number)?;
            let block = Block::decode(&bytes).map_err(|e| StoreError::Malformed {
                number,
                reason: e.to_string(),
            })?;
            check_block(&block, number, store.last_hash, &store.membership)?;
            store.state.apply_block(&block);
            store.last_hash = block.hash();
            store.height = number + 1;
        }
        Ok(store)
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn last_hash(&self) -> Hash {
        self.last_hash
    }

    pub fn state(&self) -> &LedgerState {
        &self.state
    }

    pub fn membership(&self) -> &MembershipList {
        &self.membership
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    /// Validates the block at the next position, persists it, and
    /// applies it. The store is untouched on any validation error.
    pub fn append_block(&mut self, block: &Block) -> Result<Vec<TxOutcome>, StoreError> {
        check_block(block, self.height, self.last_hash, &self.membership)?;
        let number = block.header.number;
        write_atomic(&block_path(&self.data_dir, number), &block.encode())?;
        write_atomic(
            &height_path(&self.data_dir),
            format!("{}\n", number + 1).as_bytes(),
        )?;
        let outcomes = self.state.apply_block(block);
        self.height = number + 1;
        self.last_hash = block.hash();
        Ok(outcomes)
    }

    /// The stored block, decoded from its persisted bytes.
    pub fn get_block(&self, number: u64) -> Result<Block, StoreError> {
        let bytes = self.get_block_bytes(number)?;
        Block::decode(&bytes).map_err(|e| StoreError::Malformed {
            number,
            reason: e.to_string(),
        })
    }

    /// The stored block's exact bytes, for byte-identical replication.
    pub fn get_block_bytes(&self, number: u64) -> Result<Vec<u8>, StoreError> {
        if number >= self.height {
            return Err(StoreError::NotFound(number));
        }
        read_block_bytes(&self.data_dir, number)
    }
}

/// A verification failure: which block, which check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainFault {
    pub number: u64,
    pub code: String,
    pub message: String,
}

impl std::fmt::Display for ChainFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "block {}: {} ({})", self.number, self.message, self.code)
    }
}

/// Re-reads every persisted block from disk and re-runs the full append
/// checks; read-only. Returns the verified height, or the first fault.
pub fn verify_chain(data_dir: &Path, membership: &MembershipList) -> Result<u64, ChainFault> {
    let height = read_height(data_dir).map_err(|e| ChainFault {
        number: 0,
        code: e.code().to_string(),
        message: e.to_string(),
    })?;
    let mut prev = ZERO_HASH;
    for number in 0..height {
        let fault = |code: &str, message: String| ChainFault {
            number,
            code: code.to_string(),
            message,
        };
        let bytes = read_block_bytes(data_dir, number)
            .map_err(|e| fault(e.code(), e.to_string()))?;
        let block = Block::decode(&bytes)
            .map_err(|e| fault("malformed-block", e.to_string()))?;
        check_block(&block, number, prev, membership)
            .map_err(|e| fault(e.code(), e.to_string()))?;
        prev = block.hash();
    }
    Ok(height)
}
