//! Identities, signatures, and the static membership list that makes the
//! network permissioned.
//!
//! Identities are Ed25519 keypairs. Certificates are self-contained (no
//! chains); trust derives purely from presence in the membership list.
//! Signatures are deterministic (RFC 8032), which keeps every signing
//! path reproducible from a fixed seed.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};

/// Ed25519 public key size in bytes.
pub const PUBLIC_KEY_LEN: usize = 32;
/// Ed25519 seed (secret key) size in bytes.
pub const SECRET_KEY_LEN: usize = 32;
/// Ed25519 signature size in bytes.
pub const SIGNATURE_LEN: usize = 64;

/// Role a member plays in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Client,
    Peer,
    Orderer,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Client => "client",
            Role::Peer => "peer",
            Role::Orderer => "orderer",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "client" => Some(Role::Client),
            "peer" => Some(Role::Peer),
            "orderer" => Some(Role::Orderer),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A member's public identity: id, public key, role, and organization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub id: String,
    pub public_key: [u8; PUBLIC_KEY_LEN],
    pub role: Role,
    pub org: String,
}

/// A certificate together with its secret key.
///
/// The secret half never appears in any ledger structure; the companion
/// crate stores it in separate per-identity key files.
#[derive(Clone)]
pub struct KeyPair {
    certificate: Certificate,
    signing_key: SigningKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Secret key deliberately omitted.
        f.debug_struct("KeyPair")
            .field("certificate", &self.certificate)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdentityError {
    /// Identity ids must be non-empty.
    EmptyId,
    /// A certificate's public key does not match the secret key paired
    /// with it.
    KeyMismatch { id: String },
}

impl fmt::Display for IdentityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdentityError::EmptyId => write!(f, "identity id must be non-empty"),
            IdentityError::KeyMismatch { id } => {
                write!(f, "secret key for '{id}' does not match its certificate")
            }
        }
    }
}

impl core::error::Error for IdentityError {}

impl KeyPair {
    /// Derives a keypair deterministically from a 32-byte seed. The same
    /// seed always yields byte-identical key material.
    pub fn from_seed(
        id: &str,
        role: Role,
        org: &str,
        seed: &[u8; SECRET_KEY_LEN],
    ) -> Result<KeyPair, IdentityError> {
        if id.is_empty() {
            return Err(IdentityError::EmptyId);
        }
        let signing_key = SigningKey::from_bytes(seed);
        let certificate = Certificate {
            id: String::from(id),
            public_key: signing_key.verifying_key().to_bytes(),
            role,
            org: String::from(org),
        };
        Ok(KeyPair {
            certificate,
            signing_key,
        })
    }

    /// Rebuilds a keypair from a stored certificate and seed, checking
    /// that the seed actually produces the certificate's public key.
    pub fn from_parts(
        certificate: Certificate,
        seed: &[u8; SECRET_KEY_LEN],
    ) -> Result<KeyPair, IdentityError> {
        if certificate.id.is_empty() {
            return Err(IdentityError::EmptyId);
        }
        let signing_key = SigningKey::from_bytes(seed);
        if signing_key.verifying_key().to_bytes() != certificate.public_key {
            return Err(IdentityError::KeyMismatch {
                id: certificate.id,
            });
        }
        Ok(KeyPair {
            certificate,
            signing_key,
        })
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    /// The 32-byte seed. Exposed so key files can be written; never put
    /// this in a ledger structure.
    pub fn seed(&self) -> [u8; SECRET_KEY_LEN] {
        self.signing_key.to_bytes()
    }

    /// Signs `message`, producing a 64-byte deterministic signature.
    pub fn sign(&self, message: &[u8]) -> [u8; SIGNATURE_LEN] {
        self.signing_key.sign(message).to_bytes()
    }
}

/// True iff `sig` is a valid signature of `message` under
/// `cert.public_key`. Malformed signature or key bytes yield `false`,
/// never an error.
pub fn verify(cert: &Certificate, message: &[u8], sig: &[u8]) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&cert.public_key) else {
        return false;
    };
    let Ok(sig) = ed25519_dalek::Signature::from_slice(sig) else {
        return false;
    };
    key.verify(message, &sig).is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MembershipError {
    DuplicateId(String),
    NoOrderer,
    MultipleOrderers,
    NoPeers,
}

impl fmt::Display for MembershipError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MembershipError::DuplicateId(id) => write!(f, "duplicate member id '{id}'"),
            MembershipError::NoOrderer => write!(f, "membership has no orderer"),
            MembershipError::MultipleOrderers => write!(f, "membership has more than one orderer"),
            MembershipError::NoPeers => write!(f, "membership has no peers"),
        }
    }
}

impl core::error::Error for MembershipError {}

/// The static permissioned set: all member certificates plus the id of
/// the unique orderer.
#[derive(Debug, Clone)]
pub struct MembershipList {
    members: Vec<Certificate>,
    orderer_id: String,
}

impl MembershipList {
    /// Validates the member set: unique ids, exactly one orderer, at
    /// least one peer.
    pub fn new(members: Vec<Certificate>) -> Result<MembershipList, MembershipError> {
        for (i, m) in members.iter().enumerate() {
            if members[..i].iter().any(|e| e.id == m.id) {
                return Err(MembershipError::DuplicateId(m.id.clone()));
            }
        }
        let mut orderers = members.iter().filter(|m| m.role == Role::Orderer);
        let orderer = orderers.next().ok_or(MembershipError::NoOrderer)?;
        if orderers.next().is_some() {
            return Err(MembershipError::MultipleOrderers);
        }
        if !members.iter().any(|m| m.role == Role::Peer) {
            return Err(MembershipError::NoPeers);
        }
        let orderer_id = orderer.id.clone();
        Ok(MembershipList {
            members,
            orderer_id,
        })
    }

    pub fn members(&self) -> &[Certificate] {
        &self.members
    }

    pub fn get(&self, id: &str) -> Option<&Certificate> {
        self.members.iter().find(|m| m.id == id)
    }

    pub fn orderer(&self) -> &Certificate {
        // Existence is a construction invariant.
        self.get(&self.orderer_id).expect("orderer present")
    }

    pub fn orderer_id(&self) -> &str {
        &self.orderer_id
    }

    /// Ids of all members with the peer role.
    pub fn peer_ids(&self) -> impl Iterator<Item = &str> {
        self.members
            .iter()
            .filter(|m| m.role == Role::Peer)
            .map(|m| m.id.as_str())
    }
}

/// True iff a member with `cert_id` exists and has `required_role`.
pub fn check_membership(list: &MembershipList, cert_id: &str, required_role: Role) -> bool {
    list.get(cert_id).is_some_and(|m| m.role == required_role)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(id: &str, role: Role, seed: u8) -> KeyPair {
        KeyPair::from_seed(id, role, "org1", &[seed; 32]).unwrap()
    }

    #[test]
    fn keygen_is_deterministic_from_seed() {
        let a = KeyPair::from_seed("peer1", Role::Peer, "org1", &[0u8; 32]).unwrap();
        let b = KeyPair::from_seed("peer1", Role::Peer, "org1", &[0u8; 32]).unwrap();
        assert_eq!(a.certificate(), b.certificate());
        assert_eq!(a.seed(), b.seed());
    }

    #[test]
    fn distinct_seeds_give_distinct_keys() {
        let a = kp("c1", Role::Client, 1);
        let b = kp("c1", Role::Client, 2);
        assert_ne!(a.certificate().public_key, b.certificate().public_key);
    }

    #[test]
    fn empty_id_rejected() {
        let err = KeyPair::from_seed("", Role::Client, "org1", &[0u8; 32]).unwrap_err();
        assert_eq!(err, IdentityError::EmptyId);
    }

    #[test]
    fn sign_verify_round_trip() {
        let k = kp("c1", Role::Client, 3);
        let sig = k.sign(b"hello");
        assert!(verify(k.certificate(), b"hello", &sig));
    }

    #[test]
    fn signature_binds_message() {
        let k = kp("c1", Role::Client, 3);
        let sig = k.sign(b"hello");
        let mut tampered = *b"hello";
        tampered[0] ^= 0x01;
        assert!(!verify(k.certificate(), &tampered, &sig));
    }

    #[test]
    fn signature_binds_key() {
        let a = kp("a", Role::Client, 4);
        let b = kp("b", Role::Client, 5);
        let sig = a.sign(b"msg");
        assert!(!verify(b.certificate(), b"msg", &sig));
    }

    #[test]
    fn malformed_signature_is_false_not_panic() {
        let k = kp("c1", Role::Client, 6);
        assert!(!verify(k.certificate(), b"msg", &[0u8; 12]));
        assert!(!verify(k.certificate(), b"msg", &[]));
    }

    #[test]
    fn empty_message_signs_and_verifies() {
        let k = kp("c1", Role::Client, 7);
        let sig = k.sign(b"");
        assert!(verify(k.certificate(), b"", &sig));
    }

    #[test]
    fn from_parts_checks_key_match() {
        let k = kp("c1", Role::Client, 8);
        let cert = k.certificate().clone();
        assert!(KeyPair::from_parts(cert.clone(), &[8u8; 32]).is_ok());
        let err = KeyPair::from_parts(cert, &[9u8; 32]).unwrap_err();
        assert!(matches!(err, IdentityError::KeyMismatch { .. }));
    }

    fn basic_list() -> MembershipList {
        MembershipList::new(vec![
            kp("peer1", Role::Peer, 1).certificate().clone(),
            kp("ord", Role::Orderer, 2).certificate().clone(),
            kp("c1", Role::Client, 3).certificate().clone(),
        ])
        .unwrap()
    }

    #[test]
    fn check_membership_matches_id_and_role() {
        let list = basic_list();
        assert!(check_membership(&list, "peer1", Role::Peer));
        assert!(!check_membership(&list, "peer1", Role::Orderer));
        assert!(!check_membership(&list, "ghost", Role::Peer));
    }

    #[test]
    fn membership_invariants_enforced() {
        let peer = kp("p", Role::Peer, 1).certificate().clone();
        let ord = kp("o", Role::Orderer, 2).certificate().clone();
        let ord2 = kp("o2", Role::Orderer, 3).certificate().clone();

        assert_eq!(
            MembershipList::new(vec![peer.clone()]).unwrap_err(),
            MembershipError::NoOrderer
        );
        assert_eq!(
            MembershipList::new(vec![ord.clone()]).unwrap_err(),
            MembershipError::NoPeers
        );
        assert_eq!(
            MembershipList::new(vec![peer.clone(), ord.clone(), ord2]).unwrap_err(),
            MembershipError::MultipleOrderers
        );
        assert_eq!(
            MembershipList::new(vec![peer.clone(), peer.clone(), ord]).unwrap_err(),
            MembershipError::DuplicateId(String::from("p"))
        );
    }
}
