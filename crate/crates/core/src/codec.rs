//! Canonical byte encoding used for every hash and signature input.
//!
//! One documented layout, used everywhere bytes feed a hash or a
//! signature: fixed field order, big-endian fixed-width integers, and
//! u32 length prefixes on variable-length strings and byte fields. JSON
//! appears only at external interfaces and is never hashed.
//!
//! Layouts (all integers big-endian):
//!
//! ```text
//! parent    = key:str | block:u64 | tx_index:u32
//! record    = key:str | checksum:[32] | data_locator:str | creator_id:str
//!           | parent_count:u32 | parent* | custom:bytes | timestamp_ms:u64
//! payload   = client_id:str | operation:u8 | key:str | record
//! tx        = tx_id:[32] | payload | signature:bytes
//! header    = number:u64 | prev_hash:[32] | data_hash:[32] | timestamp_ms:u64
//! tx_list   = count:u32 | tx*
//! block     = header | orderer_signature:bytes | tx_list
//! state_entry = key:str | block:u64 | tx_index:u32 | record
//! ```
//!
//! where `str` and `bytes` are `len:u32 | raw bytes` (strings UTF-8) and
//! `[N]` is a fixed-width field with no prefix. Hashes are derived as
//! `tx_id = sha256(payload)`, `data_hash = sha256(tx_list)`,
//! `block_hash = sha256(header)`, and the state digest hashes the
//! concatenation of `state_entry` encodings in ascending key order.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Decoding failure. Encoding is total and cannot fail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodecError {
    /// Input ended before the field being read was complete.
    UnexpectedEof,
    /// Input continued past the last expected field.
    TrailingBytes,
    /// A string field did not hold valid UTF-8.
    InvalidUtf8,
    /// An enum tag byte had no defined meaning.
    BadTag(u8),
    /// A length prefix exceeded the bytes remaining in the input.
    BadLength(u32),
}

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecError::UnexpectedEof => write!(f, "unexpected end of input"),
            CodecError::TrailingBytes => write!(f, "trailing bytes after final field"),
            CodecError::InvalidUtf8 => write!(f, "string field is not valid UTF-8"),
            CodecError::BadTag(t) => write!(f, "unknown tag byte {t:#04x}"),
            CodecError::BadLength(n) => write!(f, "length prefix {n} exceeds remaining input"),
        }
    }
}

impl core::error::Error for CodecError {}

pub fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

/// Length-prefixed byte string.
pub fn put_bytes(out: &mut Vec<u8>, v: &[u8]) {
    debug_assert!(v.len() <= u32::MAX as usize);
    put_u32(out, v.len() as u32);
    out.extend_from_slice(v);
}

/// Length-prefixed UTF-8 string.
pub fn put_str(out: &mut Vec<u8>, v: &str) {
    put_bytes(out, v.as_bytes());
}

/// Fixed-width field, no prefix.
pub fn put_array<const N: usize>(out: &mut Vec<u8>, v: &[u8; N]) {
    out.extend_from_slice(v);
}

/// Sequential reader over a canonical byte string.
///
/// Every read is bounds-checked; [`Reader::finish`] asserts the input was
/// consumed exactly.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::UnexpectedEof);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_be_bytes(a))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, CodecError> {
        let len = self.u32()?;
        if len as usize > self.remaining() {
            return Err(CodecError::BadLength(len));
        }
        Ok(self.take(len as usize)?.to_vec())
    }

    pub fn str(&mut self) -> Result<String, CodecError> {
        let raw = self.bytes()?;
        String::from_utf8(raw).map_err(|_| CodecError::InvalidUtf8)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let b = self.take(N)?;
        let mut a = [0u8; N];
        a.copy_from_slice(b);
        Ok(a)
    }

    /// Asserts the whole input was consumed.
    pub fn finish(self) -> Result<(), CodecError> {
        if self.remaining() != 0 {
            return Err(CodecError::TrailingBytes);
        }
        Ok(())
    }
}
