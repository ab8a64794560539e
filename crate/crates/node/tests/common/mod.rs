//! In-process network harness for integration tests: builds a
//! membership, starts an orderer, peers, and a blob server on loopback
//! ports, and hands out client sessions wired to them.

#![allow(dead_code)]

use std::net::TcpListener;
use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant};

use provledger::blob::{BlobServer, BlobServerConfig, DEFAULT_MAX_BLOB};
use provledger::client::{ClientConfig, ClientSession};
use provledger::keys;
use provledger::net;
use provledger::orderer::{OrdererConfig, OrdererService};
use provledger::peer::{PeerConfig, PeerService};
use provledger::wire::{round_trip, Message, QueryBody, QueryResultBody};
use provledger_core::{sha256, Certificate, KeyPair, MembershipList, RecordLimits, Role};
use tempfile::TempDir;

/// Shape of an in-process test network.
pub struct NetSpec {
    pub peers: usize,
    pub clients: usize,
    pub batch_max_count: usize,
    pub batch_timeout: Duration,
    pub custom_limit: usize,
    /// Peer catch-up poll interval.
    pub poll_interval: Duration,
    pub with_blob: bool,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            peers: 1,
            clients: 1,
            batch_max_count: 100,
            batch_timeout: Duration::from_millis(25),
            custom_limit: RecordLimits::default().custom_limit,
            poll_interval: Duration::from_millis(200),
            with_blob: true,
        }
    }
}

/// A running network plus everything needed to restart its pieces.
pub struct TestNet {
    pub dir: TempDir,
    pub spec: NetSpec,
    pub membership_file: PathBuf,
    pub orderer_addr: String,
    pub peer_addrs: Vec<String>,
    pub blob_addr: Option<String>,
    pub orderer: Option<OrdererService>,
    pub peers: Vec<Option<PeerService>>,
    pub blob: Option<BlobServer>,
}

/// Deterministic per-identity seed so test keys are reproducible.
pub fn seed_for(id: &str) -> [u8; 32] {
    sha256(id.as_bytes())
}

/// Reserves `n` distinct loopback ports by binding them all at once.
/// The listeners are dropped, so a service can claim the port next.
fn reserve_ports(n: usize) -> Vec<u16> {
    let listeners: Vec<TcpListener> = (0..n)
        .map(|_| TcpListener::bind("127.0.0.1:0").expect("bind loopback"))
        .collect();
    listeners
        .iter()
        .map(|l| l.local_addr().expect("local addr").port())
        .collect()
}

impl TestNet {
    pub fn start(spec: NetSpec) -> TestNet {
        let dir = tempfile::tempdir().expect("tempdir");
        let keys_dir = dir.path().join("keys");
        std::fs::create_dir_all(&keys_dir).expect("keys dir");

        let mut ids = vec![("orderer".to_string(), Role::Orderer)];
        for i in 1..=spec.peers {
            ids.push((format!("peer{i}"), Role::Peer));
        }
        for i in 1..=spec.clients {
            ids.push((format!("client{i}"), Role::Client));
        }
        let mut certs: Vec<Certificate> = Vec::new();
        for (id, role) in &ids {
            let seed = seed_for(id);
            let keypair = KeyPair::from_seed(id, *role, "org1", &seed).expect("keypair");
            keys::write_seed(&keys_dir.join(format!("{id}.seed")), &seed).expect("seed file");
            certs.push(keypair.certificate().clone());
        }
        let membership = MembershipList::new(certs).expect("membership");
        let membership_file = dir.path().join("membership.txt");
        keys::write_membership(&membership_file, &membership).expect("membership file");

        // Ports are fixed up front so peers can be told the orderer
        // address before it is up, and so restarts reuse the same
        // address the orderer delivers to.
        let ports = reserve_ports(1 + spec.peers);
        let orderer_addr = format!("127.0.0.1:{}", ports[0]);
        let peer_addrs: Vec<String> = (0..spec.peers)
            .map(|i| format!("127.0.0.1:{}", ports[1 + i]))
            .collect();

        let mut net = TestNet {
            dir,
            spec,
            membership_file,
            orderer_addr,
            peer_addrs,
            blob_addr: None,
            orderer: None,
            peers: Vec::new(),
            blob: None,
        };

        // Peers first: their startup pull fails harmlessly until the
        // orderer is up, and the poll loop retries.
        for i in 0..net.spec.peers {
            let peer = PeerService::start(net.peer_config(i)).expect("start peer");
            net.peers.push(Some(peer));
        }
        net.orderer = Some(OrdererService::start(net.orderer_config()).expect("start orderer"));
        if net.spec.with_blob {
            let blob = BlobServer::start(net.blob_config()).expect("start blob server");
            net.blob_addr = Some(blob.addr().to_string());
            net.blob = Some(blob);
        }
        net
    }

    pub fn orderer_config(&self) -> OrdererConfig {
        OrdererConfig {
            listen: self.orderer_addr.clone(),
            id: Some("orderer".to_string()),
            data_dir: self.dir.path().join("data/orderer"),
            membership_file: self.membership_file.clone(),
            key_file: self.dir.path().join("keys/orderer.seed"),
            peer_addrs: self.peer_addrs.clone(),
            batch_max_count: self.spec.batch_max_count,
            batch_timeout: self.spec.batch_timeout,
            custom_limit: self.spec.custom_limit,
        }
    }

    pub fn peer_config(&self, i: usize) -> PeerConfig {
        PeerConfig {
            listen: self.peer_addrs[i].clone(),
            id: format!("peer{}", i + 1),
            data_dir: self.dir.path().join(format!("data/peer{}", i + 1)),
            membership_file: self.membership_file.clone(),
            key_file: self.dir.path().join(format!("keys/peer{}.seed", i + 1)),
            orderer_addr: self.orderer_addr.clone(),
            poll_interval: self.spec.poll_interval,
        }
    }

    pub fn blob_config(&self) -> BlobServerConfig {
        BlobServerConfig {
            listen: "127.0.0.1:0".to_string(),
            data_dir: self.dir.path().join("blob"),
            backend_id: "local".to_string(),
            max_blob: DEFAULT_MAX_BLOB,
        }
    }

    /// Client config for `clientN` (1-based), confirming against the
    /// given peer.
    pub fn client_config_at(&self, client: usize, peer: usize) -> ClientConfig {
        ClientConfig {
            id: format!("client{client}"),
            key_file: self.dir.path().join(format!("keys/client{client}.seed")),
            membership_file: self.membership_file.clone(),
            orderer_addr: self.orderer_addr.clone(),
            peer_addr: self.peer_addrs[peer].clone(),
            blob_addr: self.blob_addr.clone(),
            blob_dir: None,
            blob_backend_id: "local".to_string(),
            max_blob: DEFAULT_MAX_BLOB,
            commit_timeout: Duration::from_secs(20),
            poll_interval: Duration::from_millis(5),
            connect_timeout: Duration::from_secs(2),
            request_timeout: Duration::from_secs(30),
        }
    }

    pub fn client_config(&self, client: usize) -> ClientConfig {
        self.client_config_at(client, 0)
    }

    pub fn client(&self, client: usize) -> ClientSession {
        ClientSession::new(self.client_config(client)).expect("client session")
    }

    pub fn client_at(&self, client: usize, peer: usize) -> ClientSession {
        ClientSession::new(self.client_config_at(client, peer)).expect("client session")
    }

    pub fn stop_peer(&mut self, i: usize) {
        if let Some(peer) = self.peers[i].take() {
            peer.stop();
        }
    }

    pub fn restart_peer(&mut self, i: usize) {
        assert!(self.peers[i].is_none(), "peer {i} still running");
        let peer = PeerService::start(self.peer_config(i)).expect("restart peer");
        self.peers[i] = Some(peer);
    }

    pub fn stop_orderer(&mut self) {
        if let Some(orderer) = self.orderer.take() {
            orderer.stop();
        }
    }

    pub fn restart_orderer(&mut self) {
        assert!(self.orderer.is_none(), "orderer still running");
        self.orderer = Some(OrdererService::start(self.orderer_config()).expect("restart orderer"));
    }

    pub fn stop_blob(&mut self) {
        if let Some(blob) = self.blob.take() {
            blob.stop();
        }
    }

    /// Restarts the blob service over the same objects on a new port.
    pub fn restart_blob(&mut self) {
        assert!(self.blob.is_none(), "blob server still running");
        let blob = BlobServer::start(self.blob_config()).expect("restart blob server");
        self.blob_addr = Some(blob.addr().to_string());
        self.blob = Some(blob);
    }

    /// Addresses that must agree for the network to count as converged:
    /// the orderer and every running peer.
    pub fn replica_addrs(&self) -> Vec<String> {
        let mut addrs = vec![self.orderer_addr.clone()];
        for (i, peer) in self.peers.iter().enumerate() {
            if peer.is_some() {
                addrs.push(self.peer_addrs[i].clone());
            }
        }
        addrs
    }

    pub fn shutdown(&mut self) {
        self.stop_blob();
        self.stop_orderer();
        for i in 0..self.peers.len() {
            self.stop_peer(i);
        }
    }
}

impl Drop for TestNet {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Asks one replica for its height and world-state digest.
pub fn query_digest(addr: &str) -> Result<(u64, String), String> {
    let mut stream =
        net::connect(addr, Duration::from_secs(2)).map_err(|e| format!("{addr}: {e}"))?;
    stream
        .set_read_timeout(Some(Duration::from_secs(10)))
        .map_err(|e| e.to_string())?;
    match round_trip(&mut stream, &Message::Query(QueryBody::StateDigest)) {
        Ok(Message::QueryResult {
            height,
            result: QueryResultBody::StateDigest { digest },
        }) => Ok((height, digest)),
        Ok(other) => Err(format!("{addr}: unexpected reply {other:?}")),
        Err(e) => Err(format!("{addr}: {e}")),
    }
}

/// Polls until every address reports the same height and digest.
/// Returns the agreed view, or the last divergent one as an error.
pub fn wait_converged(addrs: &[String], timeout: Duration) -> Result<(u64, String), String> {
    let deadline = Instant::now() + timeout;
    loop {
        let views: Vec<_> = addrs.iter().map(|a| query_digest(a)).collect();
        if let Some(first) = views.first().and_then(|v| v.as_ref().ok()) {
            if views.iter().all(|v| v.as_ref() == Ok(first)) {
                return Ok(first.clone());
            }
        }
        if Instant::now() >= deadline {
            return Err(format!("replicas did not converge: {views:?}"));
        }
        thread::sleep(Duration::from_millis(50));
    }
}

/// Writes a line straight to the real stderr, bypassing the test
/// harness capture, so per-criterion verdicts always appear.
pub fn report(line: &str) {
    use std::io::Write;
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}
