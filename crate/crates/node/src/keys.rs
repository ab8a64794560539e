//! On-disk identity material: the membership file listing every
//! certificate, and per-identity seed files holding secret key seeds.
//!
//! Membership file: one member per line, whitespace-separated fields
//! `id role org public_key` with the key as 64 lowercase hex characters;
//! blank lines and `#` comments are ignored. Seed file: a single line of
//! 64 hex characters (the raw 32-byte seed). Secret material never
//! appears in the membership file.

use std::path::Path;

use provledger_core::identity::{IdentityError, MembershipError};
use provledger_core::{Certificate, KeyPair, MembershipList, Role};

#[derive(Debug, thiserror::Error)]
pub enum KeyFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("seed file must hold 64 hex characters")]
    BadSeed,
    #[error("identity {0:?} is not in the membership file")]
    UnknownId(String),
    #[error(transparent)]
    Membership(#[from] MembershipError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
}

fn io_err(path: &Path, source: std::io::Error) -> KeyFileError {
    KeyFileError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Renders a membership list in the on-disk line format.
pub fn format_membership(list: &MembershipList) -> String {
    let mut out = String::from("# id role org public_key\n");
    for cert in list.members() {
        out.push_str(&format!(
            "{} {} {} {}\n",
            cert.id,
            cert.role,
            cert.org,
            hex::encode(cert.public_key)
        ));
    }
    out
}

pub fn write_membership(path: &Path, list: &MembershipList) -> Result<(), KeyFileError> {
    std::fs::write(path, format_membership(list)).map_err(|e| io_err(path, e))
}

/// Parses the membership line format and enforces the membership
/// invariants (unique ids, exactly one orderer, at least one peer).
pub fn parse_membership(text: &str) -> Result<MembershipList, KeyFileError> {
    let mut members = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let [id, role, org, key_hex] = fields.as_slice() else {
            return Err(KeyFileError::Parse {
                line,
                reason: format!("expected 4 fields (id role org public_key), got {}", fields.len()),
            });
        };
        let role = Role::parse(role).ok_or_else(|| KeyFileError::Parse {
            line,
            reason: format!("unknown role {role:?}"),
        })?;
        let public_key: [u8; 32] = hex::decode(key_hex)
            .ok()
            .and_then(|raw| raw.try_into().ok())
            .ok_or_else(|| KeyFileError::Parse {
                line,
                reason: "public_key must be 64 hex characters".into(),
            })?;
        members.push(Certificate {
            id: (*id).to_string(),
            public_key,
            role,
            org: (*org).to_string(),
        });
    }
    Ok(MembershipList::new(members)?)
}

pub fn load_membership(path: &Path) -> Result<MembershipList, KeyFileError> {
    parse_membership(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}

pub fn write_seed(path: &Path, seed: &[u8; 32]) -> Result<(), KeyFileError> {
    std::fs::write(path, format!("{}\n", hex::encode(seed))).map_err(|e| io_err(path, e))
}

pub fn load_seed(path: &Path) -> Result<[u8; 32], KeyFileError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    hex::decode(text.trim())
        .ok()
        .and_then(|raw| raw.try_into().ok())
        .ok_or(KeyFileError::BadSeed)
}

/// Loads the key pair for `id`: certificate from the membership list,
/// seed from its file, with the public halves cross-checked.
pub fn load_identity(
    membership: &MembershipList,
    id: &str,
    seed_path: &Path,
) -> Result<KeyPair, KeyFileError> {
    let cert = membership
        .get(id)
        .ok_or_else(|| KeyFileError::UnknownId(id.to_string()))?;
    let seed = load_seed(seed_path)?;
    Ok(KeyPair::from_parts(cert.clone(), &seed)?)
}
