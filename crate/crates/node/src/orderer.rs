//! Solo ordering service: admits signed transactions against a
//! projection of committed-plus-pending state, cuts blocks when the
//! pool fills or the oldest admission times out, commits each block to
//! its own replica, and delivers it to every peer at least once.
//!
//! A cut always takes the oldest `min(pool length, batch_max_count)`
//! transactions, so the position promised at admission — block
//! `height + i / batch_max_count`, index `i % batch_max_count` for the
//! i-th pooled transaction — is exactly where the transaction commits,
//! barring an orderer crash. The acknowledgement returns that position.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use provledger_core::{
    sha256, validate_record, verify, Block, Hash, HistoryIndex, HistoryView, KeyPair,
    MembershipList, RecordLimits, Role, Transaction, Version,
};

use crate::config::Config;
use crate::keys::{load_identity, load_membership};
use crate::model::{to_hex, TransactionJson, VersionJson};
use crate::net::{self, ConnectionHandler, ServiceHandle};
use crate::service::{answer_query, now_ms, require_role, serve_sync, ServiceError};
use crate::store::LedgerStore;
use crate::wire::Message;

pub const DEFAULT_BATCH_MAX_COUNT: usize = 100;
pub const DEFAULT_BATCH_TIMEOUT_MS: u64 = 500;

#[derive(Debug, Clone)]
pub struct OrdererConfig {
    pub listen: String,
    /// Identity to run as; defaults to the membership's orderer.
    pub id: Option<String>,
    pub data_dir: PathBuf,
    pub membership_file: PathBuf,
    pub key_file: PathBuf,
    /// Peer addresses blocks are delivered to.
    pub peer_addrs: Vec<String>,
    pub batch_max_count: usize,
    pub batch_timeout: Duration,
    pub custom_limit: usize,
}

impl OrdererConfig {
    /// Reads an orderer config file; relative paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<OrdererConfig, ServiceError> {
        let cfg = Config::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let peer_addrs = cfg.get("peers").map(parse_peer_list).unwrap_or_default();
        Ok(OrdererConfig {
            listen: cfg.require("listen")?.to_string(),
            id: cfg.get("id").map(String::from),
            data_dir: cfg.require_path("data_dir", base)?,
            membership_file: cfg.require_path("membership_file", base)?,
            key_file: cfg.require_path("key_file", base)?,
            peer_addrs,
            batch_max_count: cfg.get_or("batch_max_count", DEFAULT_BATCH_MAX_COUNT)?,
            batch_timeout: Duration::from_millis(
                cfg.get_or("batch_timeout_ms", DEFAULT_BATCH_TIMEOUT_MS)?,
            ),
            custom_limit: cfg.get_or("custom_limit", RecordLimits::default().custom_limit)?,
        })
    }
}

/// Where a known transaction id sits.
#[derive(Debug, Clone, Copy)]
enum TxSlot {
    Pending(Version),
    Committed(Version),
}

impl TxSlot {
    fn version(self) -> Version {
        match self {
            TxSlot::Pending(v) | TxSlot::Committed(v) => v,
        }
    }
}

enum SeqCmd {
    Submit {
        tx: Box<Transaction>,
        reply: mpsc::Sender<Message>,
    },
    Stop,
}

struct Pending {
    tx: Transaction,
    admitted_at: Instant,
}

/// Committed history plus the versions already promised to pooled
/// transactions. Every pooled transaction will apply cleanly (admission
/// validated it), so promised versions count as applied parents.
struct ProjectedView<'a> {
    committed: &'a HistoryIndex,
    pending: &'a BTreeSet<(String, Version)>,
}

impl HistoryView for ProjectedView<'_> {
    fn contains_applied(&self, key: &str, version: Version) -> bool {
        self.committed.contains_applied(key, version)
            || self.pending.contains(&(key.to_string(), version))
    }
}

/// The single thread that owns admission order and block cutting.
struct Sequencer {
    keypair: KeyPair,
    membership: MembershipList,
    store: Arc<Mutex<LedgerStore>>,
    limits: RecordLimits,
    batch_max: usize,
    batch_timeout: Duration,
    pool: VecDeque<Pending>,
    projected: BTreeSet<(String, Version)>,
    tx_index: HashMap<Hash, TxSlot>,
    delivery: Arc<DeliveryHub>,
}

impl Sequencer {
    fn run(mut self, rx: mpsc::Receiver<SeqCmd>) {
        loop {
            let wait = self
                .pool
                .front()
                .map(|p| {
                    (p.admitted_at + self.batch_timeout).saturating_duration_since(Instant::now())
                })
                .unwrap_or(Duration::from_secs(3600));
            match rx.recv_timeout(wait) {
                Ok(SeqCmd::Submit { tx, reply }) => {
                    let response = self.admit(*tx);
                    let _ = reply.send(response);
                    if self.pool.len() >= self.batch_max {
                        self.cut("count");
                    }
                }
                Ok(SeqCmd::Stop) | Err(mpsc::RecvTimeoutError::Disconnected) => {
                    // Flush so every acknowledged admission commits.
                    while !self.pool.is_empty() {
                        self.cut("shutdown");
                    }
                    return;
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    let expired = self
                        .pool
                        .front()
                        .is_some_and(|p| p.admitted_at.elapsed() >= self.batch_timeout);
                    if expired {
                        self.cut("timeout");
                    }
                }
            }
        }
    }

    fn admit(&mut self, tx: Transaction) -> Message {
        // Resubmitting a known transaction acknowledges its existing
        // position instead of admitting a duplicate.
        if let Some(slot) = self.tx_index.get(&tx.tx_id) {
            return Message::SubmitAck {
                tx_id: to_hex(&tx.tx_id),
                projected: VersionJson::from(slot.version()),
            };
        }
        let payload = tx.payload_bytes();
        if sha256(&payload) != tx.tx_id {
            return Message::error("bad-tx-id", "tx_id does not match the payload digest");
        }
        let cert = match self.membership.get(&tx.client_id) {
            Some(cert) if cert.role == Role::Client => cert,
            _ => {
                return Message::error(
                    "unknown-client",
                    format!("{:?} is not a client member", tx.client_id),
                )
            }
        };
        if !verify(cert, &payload, &tx.signature) {
            return Message::error("bad-signature", "client signature does not verify");
        }

        let store = self.store.lock().unwrap();
        let view = ProjectedView {
            committed: store.state().history(),
            pending: &self.projected,
        };
        if let Err(e) = validate_record(&view, &tx.record, &self.limits) {
            return Message::error(e.code(), e.to_string());
        }
        let height = store.height();
        drop(store);

        let slot = self.pool.len();
        let projected = Version {
            block: height + (slot / self.batch_max) as u64,
            tx_index: (slot % self.batch_max) as u32,
        };
        self.projected.insert((tx.key.clone(), projected));
        self.tx_index.insert(tx.tx_id, TxSlot::Pending(projected));
        let tx_id = to_hex(&tx.tx_id);
        self.pool.push_back(Pending {
            tx,
            admitted_at: Instant::now(),
        });
        Message::SubmitAck {
            tx_id,
            projected: VersionJson::from(projected),
        }
    }

    fn cut(&mut self, reason: &str) {
        let take = self.pool.len().min(self.batch_max);
        if take == 0 {
            return;
        }
        let txs: Vec<Transaction> = self.pool.drain(..take).map(|p| p.tx).collect();
        let mut store = self.store.lock().unwrap();
        let number = store.height();
        let block = Block::build(&self.keypair, number, store.last_hash(), now_ms(), txs);
        let outcomes = match store.append_block(&block) {
            Ok(outcomes) => outcomes,
            // Our own freshly built block can only fail on local disk
            // trouble; the replica is the source of truth, so stop hard
            // rather than acknowledge what we cannot persist.
            Err(e) => panic!("committing own block {number} failed: {e}"),
        };
        drop(store);

        for (tx, outcome) in block.transactions.iter().zip(&outcomes) {
            self.projected.remove(&(outcome.key.clone(), outcome.version));
            let previous = self
                .tx_index
                .insert(tx.tx_id, TxSlot::Committed(outcome.version));
            if let Some(TxSlot::Pending(promised)) = previous {
                debug_assert_eq!(promised, outcome.version, "projection must be exact");
            }
            if !outcome.applied {
                log::error!(
                    "[orderer] admitted tx {} for {:?} tombstoned at {}",
                    to_hex(&tx.tx_id),
                    outcome.key,
                    outcome.version
                );
            }
        }
        log::info!(
            "[orderer] cut block {number} with {} txs ({reason})",
            block.transactions.len()
        );
        self.delivery.broadcast(number, block.encode());
    }
}

struct QueueSlot {
    queue: Mutex<VecDeque<Arc<OutboundBlock>>>,
    wake: Condvar,
}

struct OutboundBlock {
    number: u64,
    bytes: Vec<u8>,
}

/// Fan-out of committed blocks to peers, one queue and worker thread
/// per peer, retrying with backoff until each block is acknowledged.
struct DeliveryHub {
    stop: Arc<AtomicBool>,
    slots: Vec<Arc<QueueSlot>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

const DELIVERY_BACKOFF_START: Duration = Duration::from_millis(100);
const DELIVERY_BACKOFF_CAP: Duration = Duration::from_secs(2);

impl DeliveryHub {
    fn start(peer_addrs: &[String], stop: Arc<AtomicBool>) -> Arc<DeliveryHub> {
        let mut slots = Vec::new();
        let mut workers = Vec::new();
        for addr in peer_addrs {
            let slot = Arc::new(QueueSlot {
                queue: Mutex::new(VecDeque::new()),
                wake: Condvar::new(),
            });
            let worker_slot = Arc::clone(&slot);
            let worker_stop = Arc::clone(&stop);
            let worker_addr = addr.clone();
            workers.push(
                std::thread::Builder::new()
                    .name(format!("deliver-{addr}"))
                    .spawn(move || delivery_worker(&worker_addr, worker_slot, worker_stop))
                    .expect("spawning a delivery worker"),
            );
            slots.push(slot);
        }
        Arc::new(DeliveryHub {
            stop,
            slots,
            workers: Mutex::new(workers),
        })
    }

    fn broadcast(&self, number: u64, bytes: Vec<u8>) {
        let item = Arc::new(OutboundBlock { number, bytes });
        for slot in &self.slots {
            slot.queue.lock().unwrap().push_back(Arc::clone(&item));
            slot.wake.notify_one();
        }
    }

    fn shutdown(&self) {
        self.stop.store(true, Ordering::SeqCst);
        for slot in &self.slots {
            slot.wake.notify_all();
        }
        for worker in self.workers.lock().unwrap().drain(..) {
            let _ = worker.join();
        }
    }
}

fn delivery_worker(addr: &str, slot: Arc<QueueSlot>, stop: Arc<AtomicBool>) {
    let mut conn: Option<std::net::TcpStream> = None;
    'next_block: loop {
        let item = {
            let mut queue = slot.queue.lock().unwrap();
            loop {
                if stop.load(Ordering::SeqCst) {
                    return;
                }
                if let Some(item) = queue.pop_front() {
                    break item;
                }
                let (guard, _) = slot
                    .wake
                    .wait_timeout(queue, Duration::from_millis(200))
                    .unwrap();
                queue = guard;
            }
        };
        let mut backoff = DELIVERY_BACKOFF_START;
        loop {
            if stop.load(Ordering::SeqCst) {
                return;
            }
            match try_deliver(&mut conn, addr, &item) {
                Ok(()) => continue 'next_block,
                Err(Refusal::Rejected { code, message }) => {
                    // The peer saw the block and refused it; it will
                    // catch up by syncing, so don't wedge the queue.
                    log::warn!(
                        "[orderer] peer {addr} refused block {}: {message} ({code})",
                        item.number
                    );
                    continue 'next_block;
                }
                Err(Refusal::Unreachable(reason)) => {
                    log::debug!(
                        "[orderer] delivering block {} to {addr} failed: {reason}; retrying",
                        item.number
                    );
                    conn = None;
                    std::thread::sleep(backoff);
                    backoff = (backoff * 2).min(DELIVERY_BACKOFF_CAP);
                }
            }
        }
    }
}

enum Refusal {
    /// The peer answered with a validation error.
    Rejected { code: String, message: String },
    /// No usable answer; retry later.
    Unreachable(String),
}

fn try_deliver(
    conn: &mut Option<std::net::TcpStream>,
    addr: &str,
    item: &OutboundBlock,
) -> Result<(), Refusal> {
    let transient = |reason: String| Refusal::Unreachable(reason);
    if conn.is_none() {
        let stream = net::connect(addr, Duration::from_secs(2))
            .map_err(|e| transient(e.to_string()))?;
        stream
            .set_read_timeout(Some(Duration::from_secs(30)))
            .map_err(|e| transient(e.to_string()))?;
        *conn = Some(stream);
    }
    let stream = conn.as_mut().expect("connection was just established");
    let msg = Message::BlockDeliver {
        number: item.number,
        block_b64: crate::model::bytes_to_b64(&item.bytes),
    };
    let reply = match crate::wire::round_trip(stream, &msg) {
        Ok(reply) => reply,
        Err(e) => {
            *conn = None;
            return Err(transient(e.to_string()));
        }
    };
    match reply {
        Message::BlockAck { .. } => Ok(()),
        Message::Error { code, message } => Err(Refusal::Rejected { code, message }),
        other => Err(Refusal::Rejected {
            code: "malformed-query".to_string(),
            message: format!("unexpected delivery reply {other:?}"),
        }),
    }
}

struct OrdererHandler {
    store: Arc<Mutex<LedgerStore>>,
    seq: mpsc::Sender<SeqCmd>,
}

impl ConnectionHandler for OrdererHandler {
    fn handle(&self, msg: Message) -> Message {
        match msg {
            Message::SubmitTx { tx } => self.submit(&tx),
            Message::SyncRequest { from, to } => {
                serve_sync(&self.store.lock().unwrap(), from, to)
            }
            Message::Query(query) => answer_query(&self.store.lock().unwrap(), query),
            _ => Message::error(
                "malformed-query",
                "the ordering service accepts submit_tx, sync_request, and query",
            ),
        }
    }
}

impl OrdererHandler {
    fn submit(&self, tx_json: &TransactionJson) -> Message {
        let tx = match Transaction::try_from(tx_json) {
            Ok(tx) => tx,
            Err(e) => return Message::error(e.code(), e.to_string()),
        };
        let (reply_tx, reply_rx) = mpsc::channel();
        let cmd = SeqCmd::Submit {
            tx: Box::new(tx),
            reply: reply_tx,
        };
        if self.seq.send(cmd).is_err() {
            return Message::error("io-error", "ordering service is shutting down");
        }
        reply_rx
            .recv()
            .unwrap_or_else(|_| Message::error("io-error", "ordering service is shutting down"))
    }
}

/// A running ordering service.
pub struct OrdererService {
    handle: ServiceHandle,
    seq: mpsc::Sender<SeqCmd>,
    seq_thread: Mutex<Option<JoinHandle<()>>>,
    delivery: Arc<DeliveryHub>,
    stopped: AtomicBool,
}

impl OrdererService {
    pub fn start(config: OrdererConfig) -> Result<OrdererService, ServiceError> {
        let membership = load_membership(&config.membership_file)?;
        let id = config
            .id
            .clone()
            .unwrap_or_else(|| membership.orderer_id().to_string());
        let keypair = load_identity(&membership, &id, &config.key_file)?;
        require_role(&keypair, Role::Orderer)?;

        let mut store = LedgerStore::open(&config.data_dir, membership.clone())?;
        if store.height() == 0 {
            store.append_block(&Block::genesis(&keypair, now_ms()))?;
            log::info!("[orderer {id}] created genesis block");
        }
        let mut tx_index = HashMap::new();
        for key in store.state().history().keys() {
            for entry in store.state().history().key_history(key).unwrap_or(&[]) {
                tx_index.insert(entry.tx_id, TxSlot::Committed(entry.version));
            }
        }
        log::info!(
            "[orderer {id}] opened replica at height {} with {} known txs",
            store.height(),
            tx_index.len()
        );

        let store = Arc::new(Mutex::new(store));
        let stop = Arc::new(AtomicBool::new(false));
        let delivery = DeliveryHub::start(&config.peer_addrs, Arc::clone(&stop));
        let (seq_tx, seq_rx) = mpsc::channel();
        let sequencer = Sequencer {
            keypair,
            membership,
            store: Arc::clone(&store),
            limits: RecordLimits {
                custom_limit: config.custom_limit,
            },
            batch_max: config.batch_max_count.max(1),
            batch_timeout: config.batch_timeout,
            pool: VecDeque::new(),
            projected: BTreeSet::new(),
            tx_index,
            delivery: Arc::clone(&delivery),
        };
        let seq_thread = std::thread::Builder::new()
            .name("orderer-seq".to_string())
            .spawn(move || sequencer.run(seq_rx))
            .expect("spawning the sequencer thread");

        let handler = OrdererHandler {
            store,
            seq: seq_tx.clone(),
        };
        let handle = net::serve("orderer", &config.listen, Arc::new(handler)).map_err(|e| {
            ServiceError::Io {
                context: format!("binding {}", config.listen),
                source: e,
            }
        })?;
        log::info!("[orderer {id}] listening on {}", handle.addr());
        Ok(OrdererService {
            handle,
            seq: seq_tx,
            seq_thread: Mutex::new(Some(seq_thread)),
            delivery,
            stopped: AtomicBool::new(false),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.handle.addr()
    }

    /// Stops accepting requests, flushes the pool into a final block,
    /// and winds down delivery workers.
    pub fn stop(&self) {
        if self.stopped.swap(true, Ordering::SeqCst) {
            return;
        }
        self.handle.stop();
        let _ = self.seq.send(SeqCmd::Stop);
        if let Some(thread) = self.seq_thread.lock().unwrap().take() {
            let _ = thread.join();
        }
        self.delivery.shutdown();
    }

    /// Blocks until the service stops (foreground CLI runs).
    pub fn wait(&self) {
        self.handle.wait();
    }
}

impl Drop for OrdererService {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Parses a comma-separated peer address list (exposed for the CLI).
pub fn parse_peer_list(list: &str) -> Vec<String> {
    list.split(',')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(String::from)
        .collect()
}
