//! Generates everything a local network needs under one directory:
//! key seeds, the membership file, and a config file per process, with
//! relative paths so the directory can be moved or archived whole.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;

use provledger_core::{Certificate, KeyPair, MembershipList, Role};

use crate::keys::{write_membership, write_seed, KeyFileError};

#[derive(Debug, Clone)]
pub struct TestnetSpec {
    pub dir: PathBuf,
    pub peers: usize,
    pub clients: usize,
    pub base_port: u16,
    pub batch_max_count: usize,
    pub batch_timeout_ms: u64,
}

/// What was generated, for printing.
#[derive(Debug)]
pub struct TestnetPlan {
    pub membership_file: PathBuf,
    pub config_files: Vec<PathBuf>,
    pub orderer_addr: String,
    pub blob_addr: String,
    pub peer_addrs: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TestnetError {
    #[error("need at least one peer and one client")]
    TooSmall,
    #[error(transparent)]
    Keys(#[from] KeyFileError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn write_file(path: &Path, text: &str) -> Result<(), TestnetError> {
    fs::write(path, text).map_err(|source| TestnetError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn fresh_identity(id: &str, role: Role, org: &str) -> (KeyPair, [u8; 32]) {
    let mut seed = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut seed);
    let keypair = KeyPair::from_seed(id, role, org, &seed).expect("non-empty id");
    (keypair, seed)
}

/// Generates the network layout and returns what got written.
pub fn generate(spec: &TestnetSpec) -> Result<TestnetPlan, TestnetError> {
    if spec.peers == 0 || spec.clients == 0 {
        return Err(TestnetError::TooSmall);
    }
    let dir = &spec.dir;
    let keys_dir = dir.join("keys");
    fs::create_dir_all(&keys_dir).map_err(|source| TestnetError::Io {
        path: keys_dir.display().to_string(),
        source,
    })?;

    // Identities: one orderer, N peers, M clients, all in one org.
    let mut certs: Vec<Certificate> = Vec::new();
    let mut seeds: Vec<(String, [u8; 32])> = Vec::new();
    let mut add = |id: String, role: Role| {
        let (keypair, seed) = fresh_identity(&id, role, "org1");
        certs.push(keypair.certificate().clone());
        seeds.push((id, seed));
    };
    add("orderer".to_string(), Role::Orderer);
    for i in 1..=spec.peers {
        add(format!("peer{i}"), Role::Peer);
    }
    for i in 1..=spec.clients {
        add(format!("client{i}"), Role::Client);
    }

    let membership = MembershipList::new(certs).expect("generated identities are unique");
    let membership_file = dir.join("membership.txt");
    write_membership(&membership_file, &membership)?;
    for (id, seed) in &seeds {
        write_seed(&keys_dir.join(format!("{id}.seed")), seed)?;
    }

    // Ports: orderer, blob store, then one per peer.
    let orderer_addr = format!("127.0.0.1:{}", spec.base_port);
    let blob_addr = format!("127.0.0.1:{}", spec.base_port + 1);
    let peer_addrs: Vec<String> = (0..spec.peers)
        .map(|i| format!("127.0.0.1:{}", spec.base_port + 2 + i as u16))
        .collect();

    let mut config_files = Vec::new();
    let mut save = |name: String, text: String| -> Result<(), TestnetError> {
        let path = dir.join(name);
        write_file(&path, &text)?;
        config_files.push(path);
        Ok(())
    };

    let mut orderer_conf = String::new();
    let _ = writeln!(orderer_conf, "listen = {orderer_addr}");
    let _ = writeln!(orderer_conf, "id = orderer");
    let _ = writeln!(orderer_conf, "data_dir = data/orderer");
    let _ = writeln!(orderer_conf, "membership_file = membership.txt");
    let _ = writeln!(orderer_conf, "key_file = keys/orderer.seed");
    let _ = writeln!(orderer_conf, "peers = {}", peer_addrs.join(","));
    let _ = writeln!(orderer_conf, "batch_max_count = {}", spec.batch_max_count);
    let _ = writeln!(orderer_conf, "batch_timeout_ms = {}", spec.batch_timeout_ms);
    save("orderer.conf".to_string(), orderer_conf)?;

    for (i, addr) in peer_addrs.iter().enumerate() {
        let id = format!("peer{}", i + 1);
        let mut conf = String::new();
        let _ = writeln!(conf, "listen = {addr}");
        let _ = writeln!(conf, "id = {id}");
        let _ = writeln!(conf, "data_dir = data/{id}");
        let _ = writeln!(conf, "membership_file = membership.txt");
        let _ = writeln!(conf, "key_file = keys/{id}.seed");
        let _ = writeln!(conf, "orderer_addr = {orderer_addr}");
        save(format!("{id}.conf"), conf)?;
    }

    let mut blob_conf = String::new();
    let _ = writeln!(blob_conf, "listen = {blob_addr}");
    let _ = writeln!(blob_conf, "data_dir = data/blobstore");
    let _ = writeln!(blob_conf, "backend_id = local");
    save("blobstore.conf".to_string(), blob_conf)?;

    for i in 1..=spec.clients {
        let id = format!("client{i}");
        // Spread clients across peers round-robin.
        let peer_addr = &peer_addrs[(i - 1) % peer_addrs.len()];
        let mut conf = String::new();
        let _ = writeln!(conf, "id = {id}");
        let _ = writeln!(conf, "key_file = keys/{id}.seed");
        let _ = writeln!(conf, "membership_file = membership.txt");
        let _ = writeln!(conf, "orderer_addr = {orderer_addr}");
        let _ = writeln!(conf, "peer_addr = {peer_addr}");
        let _ = writeln!(conf, "blob_addr = {blob_addr}");
        save(format!("{id}.conf"), conf)?;
    }

    Ok(TestnetPlan {
        membership_file,
        config_files,
        orderer_addr,
        blob_addr,
        peer_addrs,
    })
}
