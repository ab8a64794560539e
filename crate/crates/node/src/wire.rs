//! The TCP wire protocol: each frame is a 4-byte big-endian length
//! followed by that many bytes of UTF-8 JSON, an object with `type` and
//! `body` fields. Connections carry any number of request/response
//! frame pairs sequentially.

use std::io::{Read, Write};
use std::net::TcpStream;

use serde::{Deserialize, Serialize};

use crate::model::{
    BlockJson, HistoryEntryJson, LineageJson, RecordJson, TransactionJson, VersionJson,
};

/// Upper bound on a frame body. Sized for a base64-encoded blob at the
/// 64 MiB default content cap plus JSON overhead.
pub const MAX_FRAME_LEN: u32 = 96 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("connection closed")]
    Closed,
    #[error("frame length {0} exceeds limit")]
    FrameTooLarge(u32),
    #[error("frame is not valid JSON: {0}")]
    BadJson(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One block in transit: its number plus canonical bytes as base64, so
/// every replica stores byte-identical blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumberedBlock {
    pub number: u64,
    pub block_b64: String,
}

/// A query, dispatched by a peer against its committed state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum QueryBody {
    Get { key: String },
    History { key: String },
    Lineage {
        key: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        version: Option<VersionJson>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_depth: Option<u32>,
    },
    GetBlock { number: u64 },
    Height,
    StateDigest,
}

/// The payload of a query response; the response also carries the
/// serving peer's height so callers can judge staleness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryResultBody {
    Get {
        record: RecordJson,
        version: VersionJson,
    },
    History {
        key: String,
        entries: Vec<HistoryEntryJson>,
    },
    Lineage(LineageJson),
    Block {
        number: u64,
        block_b64: String,
        decoded: BlockJson,
    },
    Height {},
    StateDigest {
        digest: String,
    },
}

/// Every message that can cross a connection, in both directions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "body", rename_all = "snake_case")]
pub enum Message {
    SubmitTx {
        tx: TransactionJson,
    },
    SubmitAck {
        tx_id: String,
        /// Where the transaction will land, barring orderer crash.
        projected: VersionJson,
    },
    BlockDeliver {
        number: u64,
        block_b64: String,
    },
    BlockAck {
        number: u64,
        height: u64,
    },
    Query(QueryBody),
    QueryResult {
        height: u64,
        result: QueryResultBody,
    },
    SyncRequest {
        from: u64,
        /// Inclusive upper bound; `u64::MAX` means "to the current tip".
        to: u64,
    },
    SyncBlocks {
        /// The responder's current height.
        tip: u64,
        blocks: Vec<NumberedBlock>,
    },
    BlobPut {
        content_b64: String,
    },
    BlobPutAck {
        locator: String,
        size: u64,
    },
    BlobGet {
        locator: String,
    },
    BlobGetResult {
        content_b64: String,
    },
    BlobHas {
        locator: String,
    },
    BlobHasResult {
        present: bool,
    },
    Error {
        code: String,
        message: String,
    },
}

impl Message {
    pub fn error(code: &str, message: impl Into<String>) -> Message {
        Message::Error {
            code: code.into(),
            message: message.into(),
        }
    }
}

/// Writes one frame: length prefix then JSON bytes.
pub fn write_frame(stream: &mut TcpStream, msg: &Message) -> Result<(), WireError> {
    let body = serde_json::to_vec(msg).expect("messages always serialize");
    let len = body.len() as u32;
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    stream.write_all(&len.to_be_bytes())?;
    stream.write_all(&body)?;
    stream.flush()?;
    Ok(())
}

/// Reads one frame's raw JSON bytes. `Closed` on clean EOF at a frame
/// boundary.
pub fn read_frame_bytes(stream: &mut TcpStream) -> Result<Vec<u8>, WireError> {
    let mut len_buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match stream.read(&mut len_buf[filled..]) {
            Ok(0) if filled == 0 => return Err(WireError::Closed),
            Ok(0) => return Err(std::io::Error::from(std::io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => filled += n,
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len_buf);
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    stream.read_exact(&mut body)?;
    Ok(body)
}

/// Reads and parses one message.
pub fn read_frame(stream: &mut TcpStream) -> Result<Message, WireError> {
    let body = read_frame_bytes(stream)?;
    serde_json::from_slice(&body).map_err(|e| WireError::BadJson(e.to_string()))
}

/// One request/response exchange on an existing connection.
pub fn round_trip(stream: &mut TcpStream, msg: &Message) -> Result<Message, WireError> {
    write_frame(stream, msg)?;
    read_frame(stream)
}
